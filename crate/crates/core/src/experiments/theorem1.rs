//! Monte-Carlo check of the Gaussian posterior velocity: Nadaraya–Watson
//! regression of `z1 - z0` on `z_t` versus the closed form.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analytic::{expected_velocity, GaussianSpec};
use crate::error::{Error, Result};
use crate::numeric::{norm, LatentVector, RngState, Timestep};

use super::{prepare_output, write_file, GaussianConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Theorem1Config {
    pub mu: Vec<f64>,
    pub sigma_sq: f64,
    pub timesteps: Vec<f64>,
    pub samples: usize,
    pub bandwidth: f64,
    pub probes_per_t: usize,
    /// Probes are drawn from the `z_t` marginal truncated to this Mahalanobis radius.
    pub probe_radius: f64,
    /// Kish effective sample size below which a probe is unreliable.
    pub min_ess: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for Theorem1Config {
    fn default() -> Self {
        Self {
            mu: vec![3.0, -1.0],
            sigma_sq: 0.25,
            timesteps: vec![0.2, 0.5, 0.8],
            samples: 200_000,
            bandwidth: 0.05,
            probes_per_t: 8,
            probe_radius: 1.5,
            min_ess: 100.0,
            tolerance: 0.05,
            seed: 0,
        }
    }
}

impl Theorem1Config {
    fn validate(&self) -> Result<GaussianSpec> {
        if self.samples == 0 || self.probes_per_t == 0 {
            return Err(Error::Config("samples and probes_per_t must be positive".into()));
        }
        if !(self.bandwidth > 0.0 && self.probe_radius > 0.0) {
            return Err(Error::Config("bandwidth and probe_radius must be positive".into()));
        }
        for &t in &self.timesteps {
            if !(0.0..1.0).contains(&t) {
                return Err(Error::Config(format!("timestep {t} must lie in [0, 1)")));
            }
        }
        GaussianConfig { mu: self.mu.clone(), sigma_sq: self.sigma_sq }.spec()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRow {
    pub t: f64,
    pub probe: usize,
    pub x: Vec<f64>,
    pub analytic: Vec<f64>,
    pub mc: Vec<f64>,
    pub rel_err: f64,
    pub ess: f64,
    pub reliable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Theorem1Report {
    pub rows: Vec<ProbeRow>,
    /// Over reliable probes only.
    pub max_rel_err: f64,
    pub unreliable: usize,
    pub passed: bool,
}

/// Weighted mean of `targets` around `x` with a Gaussian kernel, and its Kish ESS.
pub fn kernel_regression(points: &[f64], targets: &[f64], d: usize, x: &[f64], h: f64) -> (Vec<f64>, f64) {
    let inv = 1.0 / (2.0 * h * h);
    let mut acc = vec![0.0; d];
    let (mut sw, mut sw2) = (0.0, 0.0);
    for (p, y) in points.chunks(d).zip(targets.chunks(d)) {
        let r2: f64 = p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
        let w = (-r2 * inv).exp();
        if w == 0.0 {
            continue;
        }
        sw += w;
        sw2 += w * w;
        for (a, yi) in acc.iter_mut().zip(y) {
            *a += w * yi;
        }
    }
    if sw == 0.0 {
        return (vec![f64::NAN; d], 0.0);
    }
    acc.iter_mut().for_each(|a| *a /= sw);
    (acc, sw * sw / sw2)
}

fn probe_point(rng: &mut RngState, center: &[f64], std: f64, radius: f64) -> Vec<f64> {
    loop {
        let u: Vec<f64> = center.iter().map(|_| rng.normal()).collect();
        if norm(&u) <= radius {
            return center.iter().zip(&u).map(|(c, e)| c + std * e).collect();
        }
    }
}

/// Closed-form velocity being checked.
pub type ClosedForm = dyn Fn(&LatentVector, Timestep, &GaussianSpec) -> Result<LatentVector>;

pub fn run(cfg: &Theorem1Config) -> Result<Theorem1Report> {
    run_against(cfg, &expected_velocity)
}

/// As [`run`], but with `closed_form` standing in for the posterior velocity.
pub fn run_against(cfg: &Theorem1Config, closed_form: &ClosedForm) -> Result<Theorem1Report> {
    let spec = cfg.validate()?;
    let d = spec.dim();
    let s = spec.sigma_sq().sqrt();
    let root = RngState::new(cfg.seed);
    let mut rows = Vec::new();
    for (k, &t) in cfg.timesteps.iter().enumerate() {
        let mut rng = root.substream(k as u64 + 1);
        let mut points = Vec::with_capacity(cfg.samples * d);
        let mut targets = Vec::with_capacity(cfg.samples * d);
        for _ in 0..cfg.samples {
            for m in spec.mu().as_slice() {
                let z0 = rng.normal();
                let z1 = m + s * rng.normal();
                points.push(t * z1 + (1.0 - t) * z0);
                targets.push(z1 - z0);
            }
        }
        let center: Vec<f64> = spec.mu().as_slice().iter().map(|m| t * m).collect();
        let std = spec.marginal_variance(t).sqrt();
        for probe in 0..cfg.probes_per_t {
            let x = probe_point(&mut rng, &center, std, cfg.probe_radius);
            let analytic = closed_form(&LatentVector::new(x.clone())?, Timestep::new(t)?, &spec)?.into_vec();
            let (mc, ess) = kernel_regression(&points, &targets, d, &x, cfg.bandwidth);
            let diff: Vec<f64> = mc.iter().zip(&analytic).map(|(a, b)| a - b).collect();
            let rel_err = norm(&diff) / norm(&analytic).max(1e-12);
            rows.push(ProbeRow { t, probe, x, analytic, mc, rel_err, ess, reliable: ess >= cfg.min_ess });
        }
    }
    let reliable: Vec<&ProbeRow> = rows.iter().filter(|r| r.reliable).collect();
    let max_rel_err = reliable.iter().map(|r| r.rel_err).fold(0.0, f64::max);
    let unreliable = rows.len() - reliable.len();
    let passed = !reliable.is_empty() && reliable.iter().all(|r| r.rel_err < cfg.tolerance);
    Ok(Theorem1Report { rows, max_rel_err, unreliable, passed })
}

/// Columns: `t, probe, x_*, analytic_*, mc_*, rel_err, ess, reliable`.
pub fn write_csv<W: Write>(out: W, rows: &[ProbeRow]) -> Result<()> {
    let d = rows.first().map(|r| r.x.len()).unwrap_or(0);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string(), "probe".to_string()];
    for prefix in ["x", "analytic", "mc"] {
        header.extend((0..d).map(|i| format!("{prefix}_{i}")));
    }
    header.extend(["rel_err", "ess", "reliable"].map(String::from));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.t.to_string(), r.probe.to_string()];
        for v in [&r.x, &r.analytic, &r.mc] {
            rec.extend(v.iter().map(f64::to_string));
        }
        rec.extend([r.rel_err.to_string(), r.ess.to_string(), r.reliable.to_string()]);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn run_to(cfg: &Theorem1Config, out: &Path) -> Result<Theorem1Report> {
    prepare_output(out, cfg)?;
    let report = run(cfg)?;
    write_file(out, "theorem1.csv", |b| write_csv(b, &report.rows))?;
    Ok(report)
}
