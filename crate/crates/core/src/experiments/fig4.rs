//! Velocity/noise diagnostics along sampling trajectories: cosine between the
//! velocity and the final sample, and the norm of the one-step noise estimate
//! `z0_hat = z_t - t v`, with the closed-form Gaussian curve for overlay.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analytic::{expected_velocity, expected_z0_norm_sq, one_step_inversion, GaussianSpec};
use crate::error::{Error, Result};
use crate::numeric::{sample_standard_normal, LatentVector, RngState, Timestep};
use crate::sampler::{average_curves, euler_sample, trajectory_curves, write_curves_csv, DomainTag, Schedule};

use super::{prepare_output, write_file, FieldSource};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Fig4Config {
    pub field: FieldSource,
    pub steps: usize,
    /// Euler trajectories to average.
    pub runs: usize,
    /// Draws for the marginal `z0_hat` simulation (analytic field only).
    pub marginal_draws: usize,
    pub tag: DomainTag,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for Fig4Config {
    fn default() -> Self {
        Self {
            field: FieldSource::Analytic { mu: vec![512.0, 0.0], sigma_sq: 0.03 },
            steps: 50,
            runs: 500,
            marginal_draws: 100_000,
            tag: DomainTag::None,
            tolerance: 0.02,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fig4Row {
    pub t: f64,
    pub cos_sim: f64,
    /// RMS of `||z0_hat||` along Euler trajectories.
    pub z0_norm: f64,
    /// RMS of `||z0_hat||` with `z_t` drawn from its exact marginal.
    pub z0_norm_marginal: Option<f64>,
    pub z0_norm_theory: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fig4Report {
    pub rows: Vec<Fig4Row>,
    /// Largest `|marginal / theory - 1|`, when both exist.
    pub max_rel_dev: Option<f64>,
    pub marginal_strictly_decreasing: Option<bool>,
    pub final_cos: f64,
    pub passed: bool,
}

/// RMS of `||z_t - t v(z_t, t)||` with `(z0, z1)` drawn jointly, reusing the
/// same draws at every `t` and pairing each noise draw with its negation.
pub fn marginal_z0_norm(spec: &GaussianSpec, ts: &[f64], draws: usize, seed: u64) -> Result<Vec<f64>> {
    if draws < 2 {
        return Err(Error::Config("marginal_draws must be at least 2".into()));
    }
    let d = spec.dim();
    let s = spec.sigma_sq().sqrt();
    let mut rng = RngState::new(seed).substream(7);
    let half = draws / 2;
    let mut z0s = Vec::with_capacity(half * d);
    let mut z1s = Vec::with_capacity(half * d);
    for _ in 0..half {
        for m in spec.mu().as_slice() {
            z0s.push(rng.normal());
            z1s.push(m + s * rng.normal());
        }
    }
    ts.iter()
        .map(|&t| {
            let tt = Timestep::new(t)?;
            let mut acc = 0.0;
            for (z0, z1) in z0s.chunks(d).zip(z1s.chunks(d)) {
                for sign in [1.0, -1.0] {
                    let zt = LatentVector::new(z1.iter().zip(z0).map(|(a, b)| t * a + sign * (1.0 - t) * b).collect())?;
                    let v = expected_velocity(&zt, tt, spec)?;
                    acc += one_step_inversion(&zt, tt, &v).norm_sq();
                }
            }
            Ok((acc / (2 * half) as f64).sqrt())
        })
        .collect()
}

pub fn run(cfg: &Fig4Config) -> Result<(Fig4Report, Vec<Vec<crate::sampler::CurveRow>>)> {
    if cfg.runs == 0 {
        return Err(Error::Config("runs must be positive".into()));
    }
    let field = cfg.field.load()?;
    let schedule = Schedule::uniform(cfg.steps).map_err(|e| Error::Config(e.to_string()))?;
    let ts = schedule.timesteps().to_vec();
    let mut rng = RngState::new(cfg.seed);
    let mut runs = Vec::with_capacity(cfg.runs);
    for _ in 0..cfg.runs {
        let z = sample_standard_normal(&mut rng, crate::sampler::VelocityField::dim(&field))?;
        let traj = euler_sample(&field, &z, &schedule, cfg.tag)?;
        runs.push(trajectory_curves(&traj, traj.final_z())?);
    }
    let avg = average_curves(&runs)?;

    let (marginal, theory) = match field.gaussian() {
        Some(spec) => {
            let m = marginal_z0_norm(spec, &ts, cfg.marginal_draws, cfg.seed)?;
            let th = ts.iter().map(|&t| Ok(expected_z0_norm_sq(Timestep::new(t)?, spec).sqrt())).collect::<Result<Vec<_>>>()?;
            (Some(m), Some(th))
        }
        None => (None, None),
    };
    let rows: Vec<Fig4Row> = avg
        .iter()
        .enumerate()
        .map(|(i, a)| Fig4Row {
            t: a.t,
            cos_sim: a.cos_sim,
            z0_norm: a.z0_norm_rms,
            z0_norm_marginal: marginal.as_ref().map(|m| m[i]),
            z0_norm_theory: theory.as_ref().map(|th| th[i]),
        })
        .collect();

    // the closed form vanishes at t = 1, where a relative comparison is meaningless
    let max_rel_dev = match (&marginal, &theory) {
        (Some(m), Some(th)) => Some(
            m.iter().zip(th).filter(|(_, &th)| th > 0.0).map(|(m, th)| (m / th - 1.0).abs()).fold(0.0, f64::max),
        ),
        _ => None,
    };
    let marginal_strictly_decreasing = marginal.as_ref().map(|m| m.windows(2).all(|w| w[1] < w[0]));
    let final_cos = rows.last().map(|r| r.cos_sim).unwrap_or(f64::NAN);
    let passed = max_rel_dev.is_none_or(|m| m < cfg.tolerance)
        && marginal_strictly_decreasing.unwrap_or(true)
        && (field.gaussian().is_none() || (final_cos - 1.0).abs() <= 1e-6);
    Ok((Fig4Report { rows, max_rel_dev, marginal_strictly_decreasing, final_cos, passed }, runs))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Columns `t, cos_sim, z0_norm, z0_norm_marginal, z0_norm_theory`.
pub fn write_csv<W: Write>(out: W, rows: &[Fig4Row]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "cos_sim", "z0_norm", "z0_norm_marginal", "z0_norm_theory"])?;
    for r in rows {
        w.write_record([
            r.t.to_string(),
            r.cos_sim.to_string(),
            r.z0_norm.to_string(),
            opt(r.z0_norm_marginal),
            opt(r.z0_norm_theory),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn run_to(cfg: &Fig4Config, out: &Path) -> Result<Fig4Report> {
    prepare_output(out, cfg)?;
    let (report, runs) = run(cfg)?;
    write_file(out, "fig4.csv", |b| write_csv(b, &report.rows))?;
    write_file(out, "fig4_runs.csv", |b| write_curves_csv(b, &runs))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_analytic_run() {
        let cfg = Fig4Config {
            field: FieldSource::Analytic { mu: vec![3.0, 0.0], sigma_sq: 0.1 },
            steps: 10,
            runs: 20,
            marginal_draws: 20_000,
            tolerance: 0.05,
            ..Fig4Config::default()
        };
        let (r, runs) = run(&cfg).unwrap();
        assert_eq!(r.rows.len(), 11);
        assert_eq!(runs.len(), 20);
        assert!((r.final_cos - 1.0).abs() < 1e-9);
        assert!(r.passed, "{r:?}");
        assert_eq!(r.rows[10].z0_norm_theory, Some(0.0));
    }

    #[test]
    fn marginal_matches_theory_at_midpoint() {
        let spec = GaussianSpec::new(LatentVector::new(vec![1.0, 2.0, -1.0]).unwrap(), 0.5).unwrap();
        let m = marginal_z0_norm(&spec, &[0.5], 40_000, 3).unwrap();
        let th = expected_z0_norm_sq(Timestep::new(0.5).unwrap(), &spec).sqrt();
        assert!((m[0] / th - 1.0).abs() < 0.02);
    }

    #[test]
    fn missing_checkpoint_is_reported() {
        let cfg = Fig4Config {
            field: FieldSource::Checkpoint { path: "/nonexistent/x.ckpt".into() },
            ..Fig4Config::default()
        };
        assert!(matches!(run(&cfg), Err(Error::MissingFile(_))));
    }
}
