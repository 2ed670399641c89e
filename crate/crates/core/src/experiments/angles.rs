//! Flow-direction angles on a constructed paired set `b = a + s ||a|| u`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analytic::GaussianField;
use crate::data::CleanSource;
use crate::error::{Error, Result};
use crate::numeric::{norm, LatentVector, RngState};
use crate::translation::{flow_angle_stats, write_angles_csv, AngleStats};

use super::{prepare_output, write_file, GaussianConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnglesConfig {
    /// Clean distribution of the `a` members and the unconditional field.
    pub clean: GaussianConfig,
    pub pairs: usize,
    /// Edit magnitude relative to `||a||`.
    pub edit_scale: f64,
    pub treft_min: f64,
    pub vanilla_max: f64,
    pub seed: u64,
}

impl Default for AnglesConfig {
    fn default() -> Self {
        Self {
            clean: GaussianConfig { mu: vec![1.0; 16], sigma_sq: 0.25 },
            pairs: 3582,
            edit_scale: 0.1,
            treft_min: 0.95,
            vanilla_max: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnglesReport {
    pub stats: AngleStats,
    pub median_treft: f64,
    pub median_abs_vanilla: f64,
    pub passed: bool,
}

pub fn paired_set(cfg: &AnglesConfig) -> Result<Vec<(LatentVector, LatentVector)>> {
    let spec = cfg.clean.spec()?;
    let d = spec.dim();
    let mut rng = RngState::new(cfg.seed);
    (0..cfg.pairs)
        .map(|_| {
            let mut a = vec![0.0; d];
            spec.draw_into(&mut rng, &mut a);
            let u: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
            let scale = cfg.edit_scale * norm(&a) / norm(&u);
            let b: Vec<f64> = a.iter().zip(&u).map(|(x, e)| x + scale * e).collect();
            Ok((LatentVector::new(a)?, LatentVector::new(b)?))
        })
        .collect()
}

pub fn run(cfg: &AnglesConfig) -> Result<AnglesReport> {
    if cfg.pairs == 0 {
        return Err(Error::Config("pairs must be positive".into()));
    }
    let field = GaussianField(cfg.clean.spec()?);
    let stats = flow_angle_stats(&field, &paired_set(cfg)?)?;
    let median_treft = stats.median_treft().unwrap_or(f64::NAN);
    let median_abs_vanilla = stats.median_abs_vanilla().unwrap_or(f64::NAN);
    let passed = median_treft > cfg.treft_min && median_abs_vanilla < cfg.vanilla_max;
    Ok(AnglesReport { stats, median_treft, median_abs_vanilla, passed })
}

pub fn run_to(cfg: &AnglesConfig, out: &Path) -> Result<AnglesReport> {
    prepare_output(out, cfg)?;
    let r = run(cfg)?;
    write_file(out, "angles.csv", |b| write_angles_csv(b, &r.stats))?;
    Ok(r)
}
