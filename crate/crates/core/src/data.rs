//! Clean-sample sources: analytic distributions and seeded synthetic point
//! clouds used as translation domains.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::analytic::{GaussianSpec, MixtureSpec};
use crate::error::{Error, Result};
use crate::nn::mlp::Batch;
use crate::numeric::{sin_cos, LatentVector, RngState};

/// Something that can produce i.i.d. clean samples `z1`.
pub trait CleanSource {
    fn dim(&self) -> usize;

    fn draw_into(&self, rng: &mut RngState, out: &mut [f64]);

    fn draw_batch(&self, rng: &mut RngState, n: usize) -> Batch {
        let d = self.dim();
        let mut b = Batch::zeros(n, d);
        for r in 0..n {
            self.draw_into(rng, b.row_mut(r));
        }
        b
    }
}

impl CleanSource for GaussianSpec {
    fn dim(&self) -> usize {
        GaussianSpec::dim(self)
    }

    fn draw_into(&self, rng: &mut RngState, out: &mut [f64]) {
        let s = self.sigma_sq().sqrt();
        for (o, m) in out.iter_mut().zip(self.mu().as_slice()) {
            *o = m + s * rng.normal();
        }
    }
}

impl CleanSource for MixtureSpec {
    fn dim(&self) -> usize {
        MixtureSpec::dim(self)
    }

    fn draw_into(&self, rng: &mut RngState, out: &mut [f64]) {
        out.copy_from_slice(self.sample(rng).as_slice());
    }
}

/// Synthetic 2-D generators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Generator {
    /// Eight isotropic blobs evenly spaced on a circle.
    EightGaussians { radius: f64, std: f64 },
    /// Uniform angle on a circle with Gaussian radial jitter.
    Ring { radius: f64, std: f64 },
    /// The two interleaved half circles, scaled.
    TwoMoons { scale: f64, std: f64 },
    /// A single isotropic Gaussian blob.
    Blob { std: f64 },
}

impl Generator {
    pub fn id(&self) -> &'static str {
        match self {
            Generator::EightGaussians { .. } => "eight_gaussians",
            Generator::Ring { .. } => "ring",
            Generator::TwoMoons { .. } => "two_moons",
            Generator::Blob { .. } => "blob",
        }
    }

    fn draw(&self, rng: &mut RngState) -> [f64; 2] {
        match *self {
            Generator::EightGaussians { radius, std } => {
                let k = rng.index(8) as f64;
                let (s, c) = sin_cos(TAU * k / 8.0);
                [radius * c + std * rng.normal(), radius * s + std * rng.normal()]
            }
            Generator::Ring { radius, std } => {
                let (s, c) = sin_cos(TAU * rng.uniform());
                let r = radius + std * rng.normal();
                [r * c, r * s]
            }
            Generator::TwoMoons { scale, std } => {
                let (s, c) = sin_cos(PI * rng.uniform());
                let (x, y) = if rng.uniform() < 0.5 { (c, s) } else { (1.0 - c, 0.5 - s) };
                [scale * (x - 0.5) + std * rng.normal(), scale * (y - 0.25) + std * rng.normal()]
            }
            Generator::Blob { std } => [std * rng.normal(), std * rng.normal()],
        }
    }
}

/// Placement applied after generation: `x * scale + shift`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub scale: f64,
    pub shift: [f64; 2],
}

impl Default for Placement {
    fn default() -> Self {
        Self { scale: 1.0, shift: [0.0, 0.0] }
    }
}

/// A named, seeded point cloud. Regenerating from `(generator, placement, seed, count)`
/// reproduces the samples exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    pub name: String,
    pub generator: Generator,
    pub placement: Placement,
    pub seed: u64,
    samples: Batch,
}

impl DomainDataset {
    pub fn generate(
        name: impl Into<String>,
        generator: Generator,
        placement: Placement,
        seed: u64,
        count: usize,
    ) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidArgument("dataset needs at least one sample".into()));
        }
        let mut rng = RngState::new(seed);
        let mut samples = Batch::zeros(count, 2);
        for r in 0..count {
            let p = generator.draw(&mut rng);
            let row = samples.row_mut(r);
            row[0] = placement.scale * p[0] + placement.shift[0];
            row[1] = placement.scale * p[1] + placement.shift[1];
        }
        Ok(Self { name: name.into(), generator, placement, seed, samples })
    }

    pub fn samples(&self) -> &Batch {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.rows() == 0
    }

    pub fn latents(&self) -> Vec<LatentVector> {
        self.samples.iter_rows().map(|r| LatentVector::from_raw(r.to_vec())).collect()
    }

    /// Minibatch drawn with replacement.
    pub fn minibatch(&self, rng: &mut RngState, n: usize) -> Batch {
        let idx: Vec<usize> = (0..n).map(|_| rng.index(self.len())).collect();
        self.samples.select_rows(&idx)
    }
}

impl CleanSource for DomainDataset {
    fn dim(&self) -> usize {
        2
    }

    fn draw_into(&self, rng: &mut RngState, out: &mut [f64]) {
        out.copy_from_slice(self.samples.row(rng.index(self.len())));
    }
}

/// Equal-probability union of several sources.
pub struct Union<'a>(pub Vec<&'a dyn CleanSource>);

impl CleanSource for Union<'_> {
    fn dim(&self) -> usize {
        self.0[0].dim()
    }

    fn draw_into(&self, rng: &mut RngState, out: &mut [f64]) {
        let k = rng.index(self.0.len());
        self.0[k].draw_into(rng, out);
    }
}

/// Every point of a finite set with equal weight, for degenerate-target checks.
pub struct PointMass(pub LatentVector);

impl CleanSource for PointMass {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn draw_into(&self, _rng: &mut RngState, out: &mut [f64]) {
        out.copy_from_slice(self.0.as_slice());
    }
}
