//! Rate at which the mixture posterior velocity approaches the clean sample
//! as `t -> 1`: per-pair log-log slope of the error against `1 - t`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analytic::expected_velocity_mixture;
use crate::data::CleanSource;
use crate::error::{Error, Result};
use crate::numeric::{LatentVector, RngState, Timestep};

use super::{mixture_spec, prepare_output, write_file, ComponentConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Theorem2Config {
    pub components: Vec<ComponentConfig>,
    pub timesteps: Vec<f64>,
    pub pairs: usize,
    pub slope_min: f64,
    pub slope_max: f64,
    pub seed: u64,
}

impl Default for Theorem2Config {
    fn default() -> Self {
        Self {
            components: vec![
                ComponentConfig { weight: 0.3, mu: vec![2.0, 0.0], sigma_sq: 0.1 },
                ComponentConfig { weight: 0.3, mu: vec![-2.0, 1.0], sigma_sq: 0.2 },
                ComponentConfig { weight: 0.4, mu: vec![0.0, -2.0], sigma_sq: 0.15 },
            ],
            timesteps: vec![0.9, 0.95, 0.98, 0.99, 0.995, 0.998, 0.999],
            pairs: 200,
            slope_min: 0.85,
            slope_max: 1.15,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairCurve {
    pub pair_id: usize,
    pub errors: Vec<f64>,
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Theorem2Report {
    pub timesteps: Vec<f64>,
    pub curves: Vec<PairCurve>,
    pub skipped: usize,
    pub mean_slope: f64,
    pub passed: bool,
}

/// Least-squares slope of `y` on `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

pub fn run(cfg: &Theorem2Config) -> Result<Theorem2Report> {
    let spec = mixture_spec(&cfg.components)?;
    if cfg.timesteps.len() < 2 || cfg.timesteps.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
        return Err(Error::Config("need at least two timesteps inside (0, 1)".into()));
    }
    if cfg.pairs == 0 {
        return Err(Error::Config("pairs must be positive".into()));
    }
    let d = spec.dim();
    let mut rng = RngState::new(cfg.seed);
    let log_gap: Vec<f64> = cfg.timesteps.iter().map(|t| (1.0 - t).ln()).collect();
    let mut curves = Vec::with_capacity(cfg.pairs);
    let mut skipped = 0;
    for pair_id in 0..cfg.pairs {
        let mut z1 = vec![0.0; d];
        spec.draw_into(&mut rng, &mut z1);
        let z0: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let z1v = LatentVector::new(z1.clone())?;
        let mut errors = Vec::with_capacity(cfg.timesteps.len());
        let mut ok = true;
        for &t in &cfg.timesteps {
            let zt = LatentVector::new(z1.iter().zip(&z0).map(|(a, b)| t * a + (1.0 - t) * b).collect())?;
            match expected_velocity_mixture(&zt, Timestep::new(t)?, &spec) {
                Ok(v) => {
                    let e = (&v - &z1v).norm();
                    if !(e > 0.0 && e.is_finite()) {
                        ok = false;
                    }
                    errors.push(e);
                }
                Err(Error::NumericalDegeneracy { .. }) => {
                    ok = false;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if !ok {
            skipped += 1;
            continue;
        }
        let log_err: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
        curves.push(PairCurve { pair_id, slope: ols_slope(&log_gap, &log_err), errors });
    }
    if curves.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let mean_slope = curves.iter().map(|c| c.slope).sum::<f64>() / curves.len() as f64;
    let passed = (cfg.slope_min..=cfg.slope_max).contains(&mean_slope);
    Ok(Theorem2Report { timesteps: cfg.timesteps.clone(), curves, skipped, mean_slope, passed })
}

/// Columns `pair_id, t, err`.
pub fn write_errors_csv<W: Write>(out: W, r: &Theorem2Report) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["pair_id", "t", "err"])?;
    for c in &r.curves {
        for (t, e) in r.timesteps.iter().zip(&c.errors) {
            w.write_record([c.pair_id.to_string(), t.to_string(), e.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Columns `pair_id, slope`.
pub fn write_slopes_csv<W: Write>(out: W, r: &Theorem2Report) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["pair_id", "slope"])?;
    for c in &r.curves {
        w.write_record([c.pair_id.to_string(), c.slope.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn run_to(cfg: &Theorem2Config, out: &Path) -> Result<Theorem2Report> {
    prepare_output(out, cfg)?;
    let r = run(cfg)?;
    write_file(out, "theorem2_errors.csv", |b| write_errors_csv(b, &r))?;
    write_file(out, "theorem2_slopes.csv", |b| write_slopes_csv(b, &r))?;
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ols_recovers_exact_slope() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 1.5 * v - 2.0).collect();
        assert!((ols_slope(&x, &y) - 1.5).abs() < 1e-14);
    }

    #[test]
    fn single_component_has_unit_slope() {
        let cfg = Theorem2Config {
            components: vec![ComponentConfig { weight: 1.0, mu: vec![1.0, -1.0], sigma_sq: 0.3 }],
            pairs: 50,
            ..Theorem2Config::default()
        };
        let r = run(&cfg).unwrap();
        assert_eq!(r.skipped, 0);
        assert!((r.mean_slope - 1.0).abs() < 0.05, "{}", r.mean_slope);
    }

    #[test]
    fn separated_mixture_rate_and_determinism() {
        let cfg = Theorem2Config { pairs: 100, ..Theorem2Config::default() };
        let a = run(&cfg).unwrap();
        assert!(a.passed, "slope {}", a.mean_slope);
        let b = run(&cfg).unwrap();
        assert_eq!(a.mean_slope.to_bits(), b.mean_slope.to_bits());
    }
}
