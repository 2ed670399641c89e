//! One-step translation of a clean source latent with a velocity field.
//!
//! * Vanilla: `z + v(z, 0)`, one denoising step started at the noise end.
//! * Inversion: step back by `t_inv` using `v(z, 1)`, then step forward with
//!   the velocity at timestep `t_inv`. The second evaluation happens at
//!   `t_inv` itself rather than at `1 - t_inv`.
//! * TReFT: `v(z, 1)`, the velocity at the clean end used directly as the output.
//!
//! The free functions work on any [`VelocityField`]; [`GeneratorTape`] is the
//! differentiable batch form over [`NetParams`] used during fine-tuning.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::mlp::Batch;
use crate::nn::nets::{Grads, NetParams, VelocityTape};
use crate::numeric::{cosine_similarity, LatentVector, Timestep};
use crate::sampler::{DomainTag, VelocityField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Vanilla,
    Inversion,
    Treft,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Vanilla, Strategy::Inversion, Strategy::Treft];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Vanilla => "vanilla",
            Strategy::Inversion => "inversion",
            Strategy::Treft => "treft",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(Strategy::Vanilla),
            "inversion" => Ok(Strategy::Inversion),
            "treft" => Ok(Strategy::Treft),
            other => Err(Error::Config(format!("unknown strategy {other:?}"))),
        }
    }
}

/// Backward step size of the inversion strategy, in `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InversionConfig {
    t_inv: f64,
}

impl InversionConfig {
    pub fn new(t_inv: f64) -> Result<Self> {
        if !(t_inv > 0.0 && t_inv < 1.0) {
            return Err(Error::InvalidArgument(format!("t_inv must lie in (0, 1), got {t_inv}")));
        }
        Ok(Self { t_inv })
    }

    pub fn t_inv(self) -> f64 {
        self.t_inv
    }
}

fn finite(v: LatentVector, stage: &str) -> Result<LatentVector> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("{stage} produced {:?}", v.as_slice())))
    }
}

pub fn vanilla_translate<F: VelocityField + ?Sized>(field: &F, z: &LatentVector, tag: DomainTag) -> Result<LatentVector> {
    let v = finite(field.evaluate(z, Timestep::NOISE, tag)?, "vanilla velocity at t=0")?;
    finite(z + &v, "vanilla output")
}

pub fn inversion_translate<F: VelocityField + ?Sized>(
    field: &F,
    z: &LatentVector,
    cfg: InversionConfig,
    tag: DomainTag,
) -> Result<LatentVector> {
    let s = cfg.t_inv;
    let back = finite(field.evaluate(z, Timestep::CLEAN, tag)?, "inversion backward velocity at t=1")?;
    let mid = finite(z.axpy(-s, &back), "inverted latent")?;
    let fwd = finite(field.evaluate(&mid, Timestep::new(s)?, tag)?, "inversion forward velocity")?;
    finite(mid.axpy(s, &fwd), "inversion output")
}

pub fn treft_translate<F: VelocityField + ?Sized>(field: &F, z: &LatentVector, tag: DomainTag) -> Result<LatentVector> {
    finite(field.evaluate(z, Timestep::CLEAN, tag)?, "treft velocity at t=1")
}

pub fn translate<F: VelocityField + ?Sized>(
    field: &F,
    strategy: Strategy,
    z: &LatentVector,
    inversion: InversionConfig,
    tag: DomainTag,
) -> Result<LatentVector> {
    match strategy {
        Strategy::Vanilla => vanilla_translate(field, z, tag),
        Strategy::Inversion => inversion_translate(field, z, inversion, tag),
        Strategy::Treft => treft_translate(field, z, tag),
    }
}

/// Per-pair cosines: `cos(z_a, z_b)` and `cos(v(z_a, 0), z_b - z_a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleStats {
    pub cos_treft: Vec<f64>,
    /// `None` when the displacement or the velocity vanishes (no direction).
    pub cos_vanilla: Vec<Option<f64>>,
    /// Indices into the input of pairs that were kept.
    pub pair_ids: Vec<usize>,
    /// Pairs dropped because a member had zero norm.
    pub skipped: usize,
}

impl AngleStats {
    /// Median of `cos_vanilla` over pairs where it is defined.
    pub fn median_abs_vanilla(&self) -> Option<f64> {
        median(self.cos_vanilla.iter().flatten().map(|c| c.abs()).collect())
    }

    pub fn median_treft(&self) -> Option<f64> {
        median(self.cos_treft.clone())
    }
}

pub fn median(mut xs: Vec<f64>) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    Some(if n % 2 == 1 { xs[n / 2] } else { 0.5 * (xs[n / 2 - 1] + xs[n / 2]) })
}

pub fn flow_angle_stats<F: VelocityField + ?Sized>(
    pretrained: &F,
    pairs: &[(LatentVector, LatentVector)],
) -> Result<AngleStats> {
    let mut out = AngleStats { cos_treft: vec![], cos_vanilla: vec![], pair_ids: vec![], skipped: 0 };
    for (i, (a, b)) in pairs.iter().enumerate() {
        let v = pretrained.evaluate(a, Timestep::NOISE, DomainTag::None)?;
        let delta = b - a;
        let ct = match cosine_similarity(a, b) {
            Ok(c) => c,
            Err(Error::UndefinedDirection(_)) => {
                out.skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let cv = match cosine_similarity(&v, &delta) {
            Ok(c) => Some(c),
            Err(Error::UndefinedDirection(_)) => None,
            Err(e) => return Err(e),
        };
        out.cos_treft.push(ct);
        out.cos_vanilla.push(cv);
        out.pair_ids.push(i);
    }
    Ok(out)
}

pub fn write_angles_csv<W: Write>(out: W, stats: &AngleStats) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["pair_id", "cos_treft", "cos_vanilla"])?;
    for ((id, ct), cv) in stats.pair_ids.iter().zip(&stats.cos_treft).zip(&stats.cos_vanilla) {
        let cv = cv.map(|c| c.to_string()).unwrap_or_default();
        w.write_record([id.to_string(), ct.to_string(), cv])?;
    }
    w.flush()?;
    Ok(())
}

/// Recorded forward pass of a strategy applied to a batch.
#[derive(Debug, Clone)]
pub struct GeneratorTape {
    strategy: Strategy,
    t_inv: f64,
    first: VelocityTape,
    second: Option<VelocityTape>,
    output: Batch,
}

impl GeneratorTape {
    pub fn forward(net: &NetParams, strategy: Strategy, inversion: InversionConfig, z: &Batch, tag: DomainTag) -> Result<Self> {
        let s = inversion.t_inv();
        let (first, second, output) = match strategy {
            Strategy::Vanilla => {
                let tape = net.forward_uniform(z, 0.0, tag)?;
                let out = z.axpy(1.0, tape.output());
                (tape, None, out)
            }
            Strategy::Treft => {
                let tape = net.forward_uniform(z, 1.0, tag)?;
                let out = tape.output().clone();
                (tape, None, out)
            }
            Strategy::Inversion => {
                let back = net.forward_uniform(z, 1.0, tag)?;
                let mid = z.axpy(-s, back.output());
                let fwd = net.forward_uniform(&mid, s, tag)?;
                let out = mid.axpy(s, fwd.output());
                (back, Some(fwd), out)
            }
        };
        if !output.is_finite() {
            return Err(Error::NonFinite(format!("{strategy} generator output")));
        }
        Ok(Self { strategy, t_inv: s, first, second, output })
    }

    pub fn output(&self) -> &Batch {
        &self.output
    }

    /// Accumulates parameter gradients and returns `dL/dz` for the input batch.
    pub fn backward(&self, net: &NetParams, d_out: &Batch, grads: &mut Grads) -> Batch {
        match self.strategy {
            Strategy::Vanilla => {
                let mut d_z = net.backward_batch(&self.first, d_out, grads);
                d_z.add_assign_scaled(1.0, d_out);
                d_z
            }
            Strategy::Treft => net.backward_batch(&self.first, d_out, grads),
            Strategy::Inversion => {
                // out = mid + s * w(mid), mid = z - s * u(z)
                let s = self.t_inv;
                let second = self.second.as_ref().expect("inversion tape has two evaluations");
                let mut d_mid = net.backward_batch(second, &d_out.scale(s), grads);
                d_mid.add_assign_scaled(1.0, d_out);
                let mut d_z = net.backward_batch(&self.first, &d_mid.scale(-s), grads);
                d_z.add_assign_scaled(1.0, &d_mid);
                d_z
            }
        }
    }
}
