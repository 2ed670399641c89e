//! The conditional velocity network and the discriminator.

use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::nn::mlp::{Activation, Batch, MlpShape, MlpTape};
use crate::numeric::{sin_cos, LatentVector, RngState, Timestep};
use crate::sampler::{DomainTag, VelocityField};

/// Width of the learned per-tag embedding.
pub const TAG_EMBED_DIM: usize = 4;
/// `(t, sin 2 pi t, cos 2 pi t)`
pub const TIME_FEATURES: usize = 3;
const EMBED_PARAMS: usize = TAG_EMBED_DIM * DomainTag::ALL.len();

/// Flat parameter storage shared by the optimizer and the checkpoint code.
pub trait Parameterized {
    fn values(&self) -> &[f64];
    fn values_mut(&mut self) -> &mut [f64];

    fn zero_grads(&self) -> Grads {
        Grads(vec![0.0; self.values().len()])
    }
}

/// Gradient accumulator, congruent with the parameter vector it was made for.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads(pub Vec<f64>);

impl Grads {
    pub fn scale(&mut self, s: f64) {
        self.0.iter_mut().for_each(|g| *g *= s);
    }

    pub fn add_scaled(&mut self, s: f64, other: &Grads) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += s * b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, g| m.max(g.abs()))
    }
}

/// Weights of `v_theta(z, t, tag)`.
///
/// Input layout is `concat(z, t, sin 2 pi t, cos 2 pi t, embed(tag))`. The
/// parameter vector holds the three tag embeddings first, then the MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    d: usize,
    shape: MlpShape,
    values: Vec<f64>,
    seed: u64,
}

#[derive(Debug, Clone)]
pub struct VelocityTape {
    mlp: MlpTape,
    tags: Vec<DomainTag>,
}

impl VelocityTape {
    pub fn output(&self) -> &Batch {
        self.mlp.output()
    }
}

impl NetParams {
    pub fn new(d: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidDimension("velocity net needs d >= 1".into()));
        }
        if !(1..=4).contains(&hidden.len()) {
            return Err(Error::Config(format!("expected 1-4 hidden layers, got {}", hidden.len())));
        }
        let mut sizes = vec![d + TIME_FEATURES + TAG_EMBED_DIM];
        sizes.extend_from_slice(hidden);
        sizes.push(d);
        let shape = MlpShape::new(sizes, Activation::Tanh)?;
        let mut values = vec![0.0; EMBED_PARAMS + shape.param_count()];
        let mut rng = RngState::new(seed);
        for e in &mut values[..EMBED_PARAMS] {
            *e = 0.1 * rng.normal();
        }
        shape.init(&mut rng, &mut values[EMBED_PARAMS..]);
        Ok(Self { d, shape, values, seed })
    }

    pub(crate) fn from_parts(d: usize, shape: MlpShape, values: Vec<f64>, seed: u64) -> Result<Self> {
        if shape.input_dim() != d + TIME_FEATURES + TAG_EMBED_DIM || shape.output_dim() != d {
            return Err(Error::Checkpoint(format!("layer sizes {:?} do not fit d={d}", shape.sizes())));
        }
        if values.len() != EMBED_PARAMS + shape.param_count() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                EMBED_PARAMS + shape.param_count(),
                values.len()
            )));
        }
        Ok(Self { d, shape, values, seed })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn shape(&self) -> &MlpShape {
        &self.shape
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn tag_embedding(&self, tag: DomainTag) -> &[f64] {
        let i = tag.index() * TAG_EMBED_DIM;
        &self.values[i..i + TAG_EMBED_DIM]
    }

    /// Overwrites the embedding of `to` with that of `from`.
    pub fn copy_tag_embedding(&mut self, from: DomainTag, to: DomainTag) {
        let src = from.index() * TAG_EMBED_DIM;
        let dst = to.index() * TAG_EMBED_DIM;
        self.values.copy_within(src..src + TAG_EMBED_DIM, dst);
    }

    fn build_input(&self, z: &Batch, ts: &[f64], tags: &[DomainTag]) -> Result<Batch> {
        if z.cols() != self.d {
            return Err(Error::Config(format!("velocity net has d={}, got {}", self.d, z.cols())));
        }
        if ts.len() != z.rows() || tags.len() != z.rows() {
            return Err(Error::Config("timestep/tag count must match batch rows".into()));
        }
        let width = self.shape.input_dim();
        let mut input = Batch::zeros(z.rows(), width);
        for r in 0..z.rows() {
            let row = input.row_mut(r);
            row[..self.d].copy_from_slice(z.row(r));
            let t = ts[r];
            row[self.d] = t;
            (row[self.d + 1], row[self.d + 2]) = sin_cos(TAU * t);
            row[self.d + TIME_FEATURES..].copy_from_slice(self.tag_embedding(tags[r]));
        }
        Ok(input)
    }

    pub fn forward_batch(&self, z: &Batch, ts: &[f64], tags: &[DomainTag]) -> Result<VelocityTape> {
        let input = self.build_input(z, ts, tags)?;
        let mlp = self.shape.forward(&self.values[EMBED_PARAMS..], input)?;
        Ok(VelocityTape { mlp, tags: tags.to_vec() })
    }

    /// Same-`t`, same-tag convenience wrapper.
    pub fn forward_uniform(&self, z: &Batch, t: f64, tag: DomainTag) -> Result<VelocityTape> {
        let n = z.rows();
        self.forward_batch(z, &vec![t; n], &vec![tag; n])
    }

    /// Accumulates parameter gradients and returns `dL/dz`.
    pub fn backward_batch(&self, tape: &VelocityTape, d_out: &Batch, grads: &mut Grads) -> Batch {
        let (g_embed, g_mlp) = grads.0.split_at_mut(EMBED_PARAMS);
        let d_in = self.shape.backward(&self.values[EMBED_PARAMS..], &tape.mlp, d_out, g_mlp);
        let mut d_z = Batch::zeros(d_in.rows(), self.d);
        for r in 0..d_in.rows() {
            let row = d_in.row(r);
            d_z.row_mut(r).copy_from_slice(&row[..self.d]);
            let e = tape.tags[r].index() * TAG_EMBED_DIM;
            for k in 0..TAG_EMBED_DIM {
                g_embed[e + k] += row[self.d + TIME_FEATURES + k];
            }
        }
        d_z
    }

    pub fn forward(&self, z: &LatentVector, t: Timestep, tag: DomainTag) -> Result<LatentVector> {
        let b = Batch::from_vec(1, z.dim(), z.as_slice().to_vec())?;
        let tape = self.forward_uniform(&b, t.get(), tag)?;
        let out = tape.output().row(0).to_vec();
        LatentVector::new(out)
            .map_err(|e| Error::Divergence { stage: "velocity forward".into(), detail: e.to_string() })
    }
}

impl Parameterized for NetParams {
    fn values(&self) -> &[f64] {
        &self.values
    }

    fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

impl VelocityField for NetParams {
    fn dim(&self) -> usize {
        self.d
    }

    fn evaluate(&self, z: &LatentVector, t: Timestep, tag: DomainTag) -> Result<LatentVector> {
        self.forward(z, t, tag)
    }
}

/// MLP mapping a latent to a real/fake logit.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscParams {
    shape: MlpShape,
    values: Vec<f64>,
}

impl DiscParams {
    pub fn new(d: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut sizes = vec![d];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let shape = MlpShape::new(sizes, Activation::Tanh)?;
        let mut values = vec![0.0; shape.param_count()];
        shape.init(&mut RngState::new(seed), &mut values);
        Ok(Self { shape, values })
    }

    pub fn shape(&self) -> &MlpShape {
        &self.shape
    }

    pub fn logits(&self, x: &Batch) -> Result<MlpTape> {
        self.shape.forward(&self.values, x.clone())
    }

    pub fn backward(&self, tape: &MlpTape, d_logits: &Batch, grads: &mut Grads) -> Batch {
        self.shape.backward(&self.values, tape, d_logits, &mut grads.0)
    }
}

impl Parameterized for DiscParams {
    fn values(&self) -> &[f64] {
        &self.values
    }

    fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}
