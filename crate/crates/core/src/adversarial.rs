//! Unpaired two-domain fine-tuning of a pretrained velocity network.
//!
//! One network serves both directions, switched by [`DomainTag::A2b`] /
//! [`DomainTag::B2a`]; each direction has its own discriminator. The generator
//! objective, averaged over the two directions, is
//! `lambda_cyc * cycle + lambda_idt * identity + lambda_gan * adversarial`.
//! Reconstruction terms are an L1 distance plus the distance between frozen
//! random-projection features (a stand-in for a learned perceptual metric).

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::DomainDataset;
use crate::error::{Error, Result};
use crate::metrics::{frechet_distance, structure_score, GaussianSummary};
use crate::nn::checkpoint::save_checkpoint;
use crate::nn::mlp::Batch;
use crate::nn::nets::{DiscParams, Grads, NetParams, Parameterized};
use crate::nn::optim::{optimizer_step, AdamConfig, OptimizerState};
use crate::numeric::RngState;
use crate::sampler::DomainTag;
use crate::translation::{GeneratorTape, InversionConfig, Strategy};

/// Consecutive near-zero discriminator losses that trigger the collapse flag.
pub const COLLAPSE_WINDOW: usize = 500;
pub const COLLAPSE_LOSS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub strategy: Strategy,
    pub lambda_cyc: f64,
    pub lambda_idt: f64,
    pub lambda_gan: f64,
    /// Only read by the inversion strategy.
    pub t_inv: f64,
    pub lr_gen: f64,
    pub lr_disc: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub eval_every: usize,
    pub disc_hidden: Vec<usize>,
    /// Seed of the frozen feature projection.
    pub surrogate_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Treft,
            lambda_cyc: 0.5,
            lambda_idt: 1.0,
            lambda_gan: 1.0,
            t_inv: 0.5,
            lr_gen: 1e-3,
            lr_disc: 1e-3,
            steps: 3000,
            batch_size: 128,
            seed: 0,
            eval_every: 100,
            disc_hidden: vec![32, 32],
            surrogate_seed: 17,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("lambda_cyc", self.lambda_cyc), ("lambda_idt", self.lambda_idt), ("lambda_gan", self.lambda_gan)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("{name} must be a finite nonnegative number, got {w}")));
            }
        }
        if self.steps == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::Config("steps, batch_size and eval_every must be positive".into()));
        }
        if !(self.lr_gen > 0.0 && self.lr_disc > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        self.inversion()?;
        Ok(())
    }

    pub fn inversion(&self) -> Result<InversionConfig> {
        InversionConfig::new(self.t_inv).map_err(|e| Error::Config(e.to_string()))
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Non-saturating logistic losses and their gradients.
#[derive(Debug, Clone)]
pub struct GanLosses {
    pub d_loss: f64,
    pub g_loss: f64,
    /// `d d_loss / d disc_params`
    pub disc_grads: Grads,
    /// `d g_loss / d fake`
    pub d_fake: Batch,
}

pub fn gan_losses(disc: &DiscParams, real: &Batch, fake: &Batch) -> Result<GanLosses> {
    if real.rows() == 0 || fake.rows() == 0 {
        return Err(Error::InvalidArgument("gan losses need nonempty real and fake batches".into()));
    }
    let real_tape = disc.logits(real)?;
    let fake_tape = disc.logits(fake)?;
    let nr = real.rows() as f64;
    let nf = fake.rows() as f64;
    let lr = real_tape.output().data();
    let lf = fake_tape.output().data();

    let d_loss = lr.iter().map(|&l| softplus(-l)).sum::<f64>() / nr + lf.iter().map(|&l| softplus(l)).sum::<f64>() / nf;
    let g_loss = lf.iter().map(|&l| softplus(-l)).sum::<f64>() / nf;

    let mut disc_grads = disc.zero_grads();
    let d_real = Batch::from_vec(real.rows(), 1, lr.iter().map(|&l| -sigmoid(-l) / nr).collect())?;
    let d_fake_logit = Batch::from_vec(fake.rows(), 1, lf.iter().map(|&l| sigmoid(l) / nf).collect())?;
    disc.backward(&real_tape, &d_real, &mut disc_grads);
    disc.backward(&fake_tape, &d_fake_logit, &mut disc_grads);

    let g_logit = Batch::from_vec(fake.rows(), 1, lf.iter().map(|&l| -sigmoid(-l) / nf).collect())?;
    let mut scratch = disc.zero_grads();
    let d_fake = disc.backward(&fake_tape, &g_logit, &mut scratch);
    Ok(GanLosses { d_loss, g_loss, disc_grads, d_fake })
}

/// Frozen `4d x d` Gaussian projection with entries `N(0, 1/(4d))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    d: usize,
    matrix: Vec<f64>,
}

impl Projection {
    pub fn new(d: usize, seed: u64) -> Self {
        let rows = 4 * d;
        let mut rng = RngState::new(seed);
        let scale = 1.0 / (rows as f64).sqrt();
        let matrix = (0..rows * d).map(|_| scale * rng.normal()).collect();
        Self { d, matrix }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.matrix.chunks(self.d).map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }

    fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        for (row, &yi) in self.matrix.chunks(self.d).zip(y) {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * yi;
            }
        }
        out
    }
}

/// The two reconstruction terms, each a batch mean.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ReconLoss {
    pub l1: f64,
    pub surrogate: f64,
}

impl ReconLoss {
    pub fn total(&self) -> f64 {
        self.l1 + self.surrogate
    }
}

/// `mean_i |out_i - target_i|_1 + mean_i |P (out_i - target_i)|_2` and its
/// gradient with respect to `out`. Both terms use gradient 0 at a zero residual.
pub fn reconstruction_loss(proj: &Projection, out: &Batch, target: &Batch) -> Result<(ReconLoss, Batch)> {
    if out.rows() != target.rows() || out.cols() != target.cols() {
        return Err(Error::InvalidArgument(format!(
            "reconstruction shapes differ: {}x{} vs {}x{}",
            out.rows(),
            out.cols(),
            target.rows(),
            target.cols()
        )));
    }
    if out.rows() == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if out.cols() != proj.dim() {
        return Err(Error::InvalidDimension(format!("projection expects d={}, got {}", proj.dim(), out.cols())));
    }
    let n = out.rows() as f64;
    let mut loss = ReconLoss::default();
    let mut grad = Batch::zeros(out.rows(), out.cols());
    for r in 0..out.rows() {
        let e: Vec<f64> = out.row(r).iter().zip(target.row(r)).map(|(a, b)| a - b).collect();
        let pe = proj.apply(&e);
        let dist = pe.iter().map(|x| x * x).sum::<f64>().sqrt();
        loss.l1 += e.iter().map(|x| x.abs()).sum::<f64>();
        loss.surrogate += dist;
        let g = grad.row_mut(r);
        for (gi, ei) in g.iter_mut().zip(&e) {
            *gi = if *ei > 0.0 {
                1.0 / n
            } else if *ei < 0.0 {
                -1.0 / n
            } else {
                0.0
            };
        }
        if dist > 0.0 {
            let back = proj.apply_transpose(&pe);
            for (gi, b) in g.iter_mut().zip(back) {
                *gi += b / (dist * n);
            }
        }
    }
    loss.l1 /= n;
    loss.surrogate /= n;
    Ok((loss, grad))
}

/// Per-direction loss values entering the weighted objective.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossComponents {
    pub cyc: f64,
    pub idt: f64,
    pub gan: f64,
}

/// Weighted sum averaged over the given directions.
pub fn total_loss(cfg: &TrainConfig, components: &[LossComponents]) -> f64 {
    if components.is_empty() {
        return 0.0;
    }
    components
        .iter()
        .map(|c| cfg.lambda_cyc * c.cyc + cfg.lambda_idt * c.idt + cfg.lambda_gan * c.gan)
        .sum::<f64>()
        / components.len() as f64
}

/// `G_back(G_fwd(z))` against `z`; accumulates `weight * grad` into `grads`.
#[allow(clippy::too_many_arguments)]
pub fn latent_cycle_loss(
    net: &NetParams,
    strategy: Strategy,
    inversion: InversionConfig,
    proj: &Projection,
    z: &Batch,
    forward: DomainTag,
    back: DomainTag,
    weight: f64,
    grads: &mut Grads,
) -> Result<ReconLoss> {
    let there = GeneratorTape::forward(net, strategy, inversion, z, forward)?;
    let again = GeneratorTape::forward(net, strategy, inversion, there.output(), back)?;
    let (loss, d_rec) = reconstruction_loss(proj, again.output(), z)?;
    if weight != 0.0 {
        let d_mid = again.backward(net, &d_rec.scale(weight), grads);
        there.backward(net, &d_mid, grads);
    }
    Ok(loss)
}

/// `G(z)` against `z` for samples already in `G`'s target domain.
#[allow(clippy::too_many_arguments)]
pub fn latent_identity_loss(
    net: &NetParams,
    strategy: Strategy,
    inversion: InversionConfig,
    proj: &Projection,
    z: &Batch,
    tag: DomainTag,
    weight: f64,
    grads: &mut Grads,
) -> Result<ReconLoss> {
    let tape = GeneratorTape::forward(net, strategy, inversion, z, tag)?;
    let (loss, d_out) = reconstruction_loss(proj, tape.output(), z)?;
    if weight != 0.0 {
        tape.backward(net, &d_out.scale(weight), grads);
    }
    Ok(loss)
}

/// Both discriminators, `[judges a, judges b]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminators {
    pub a: DiscParams,
    pub b: DiscParams,
}

/// Generator objective for one minibatch pair. Returns `[a2b, b2a]` components
/// and the gradient of [`total_loss`] with respect to the network parameters.
pub fn generator_objective(
    net: &NetParams,
    cfg: &TrainConfig,
    proj: &Projection,
    discs: &Discriminators,
    za: &Batch,
    zb: &Batch,
) -> Result<([LossComponents; 2], Grads)> {
    let inv = cfg.inversion()?;
    let s = cfg.strategy;
    let mut grads = net.zero_grads();
    let half = 0.5;
    let mut out = [LossComponents::default(); 2];
    let dirs = [(za, zb, DomainTag::A2b, DomainTag::B2a, &discs.b), (zb, za, DomainTag::B2a, DomainTag::A2b, &discs.a)];
    for (k, (src, tgt, fwd, back, disc)) in dirs.into_iter().enumerate() {
        // translate src; cycle and adversarial gradients share this tape
        let there = GeneratorTape::forward(net, s, inv, src, fwd)?;
        let again = GeneratorTape::forward(net, s, inv, there.output(), back)?;
        let (cyc, d_rec) = reconstruction_loss(proj, again.output(), src)?;
        let mut d_there = again.backward(net, &d_rec.scale(half * cfg.lambda_cyc), &mut grads);
        let gan = gan_losses(disc, tgt, there.output())?;
        d_there.add_assign_scaled(half * cfg.lambda_gan, &gan.d_fake);
        there.backward(net, &d_there, &mut grads);

        let idt = latent_identity_loss(net, s, inv, proj, tgt, fwd, half * cfg.lambda_idt, &mut grads)?;
        out[k] = LossComponents { cyc: cyc.total(), idt: idt.total(), gan: gan.g_loss };
    }
    Ok((out, grads))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistoryRow {
    pub step: usize,
    pub strategy: Strategy,
    pub frechet_a2b: f64,
    pub frechet_b2a: f64,
    pub struct_a2b: f64,
    pub struct_b2a: f64,
    pub d_loss: f64,
    pub g_loss: f64,
    pub cyc: f64,
    pub idt: f64,
}

pub fn write_history_csv<W: Write>(out: W, rows: &[HistoryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct FinetuneOutput {
    pub params: NetParams,
    pub discriminators: Discriminators,
    pub history: Vec<HistoryRow>,
    pub disc_updates: u64,
    /// First step at which the discriminator loss had stayed below
    /// [`COLLAPSE_LOSS`] for [`COLLAPSE_WINDOW`] consecutive steps.
    pub collapse_step: Option<usize>,
}

impl FinetuneOutput {
    pub fn final_row(&self) -> &HistoryRow {
        self.history.last().expect("history always has the step-0 row")
    }
}

fn translate_all(net: &NetParams, strategy: Strategy, inv: InversionConfig, z: &Batch, tag: DomainTag) -> Result<Batch> {
    Ok(GeneratorTape::forward(net, strategy, inv, z, tag)?.output().clone())
}

struct Evaluator<'a> {
    a: &'a Batch,
    b: &'a Batch,
    fit_a: GaussianSummary,
    fit_b: GaussianSummary,
}

impl Evaluator<'_> {
    fn row(&self, net: &NetParams, cfg: &TrainConfig, step: usize, losses: (f64, f64, f64, f64)) -> Result<HistoryRow> {
        let inv = cfg.inversion()?;
        let ab = translate_all(net, cfg.strategy, inv, self.a, DomainTag::A2b)?;
        let ba = translate_all(net, cfg.strategy, inv, self.b, DomainTag::B2a)?;
        let (d_loss, g_loss, cyc, idt) = losses;
        Ok(HistoryRow {
            step,
            strategy: cfg.strategy,
            frechet_a2b: frechet_distance(&GaussianSummary::fit(&ab)?, &self.fit_b)?,
            frechet_b2a: frechet_distance(&GaussianSummary::fit(&ba)?, &self.fit_a)?,
            struct_a2b: structure_score(self.a, &ab)?,
            struct_b2a: structure_score(self.b, &ba)?,
            d_loss,
            g_loss,
            cyc,
            idt,
        })
    }
}

fn diverged(step: usize, strategy: Strategy, detail: impl Into<String>) -> Error {
    Error::Divergence { stage: format!("{strategy} finetune step {step}"), detail: detail.into() }
}

/// Alternating discriminator/generator training. Tag embeddings for both
/// directions start as copies of the unconditional one. When `checkpoints` is
/// given, the network is saved there at every evaluation point.
pub fn finetune(
    cfg: &TrainConfig,
    pretrained: &NetParams,
    data_a: &DomainDataset,
    data_b: &DomainDataset,
    checkpoints: Option<&Path>,
) -> Result<FinetuneOutput> {
    cfg.validate()?;
    let d = pretrained.dim();
    if data_a.samples().cols() != d || data_b.samples().cols() != d {
        return Err(Error::InvalidDimension(format!("datasets must have d={d}")));
    }
    let inv = cfg.inversion()?;
    let mut net = pretrained.clone();
    net.copy_tag_embedding(DomainTag::None, DomainTag::A2b);
    net.copy_tag_embedding(DomainTag::None, DomainTag::B2a);

    let root = RngState::new(cfg.seed);
    let mut rng = root.substream(1);
    let mut discs = Discriminators {
        a: DiscParams::new(d, &cfg.disc_hidden, cfg.seed.wrapping_mul(2).wrapping_add(1001))?,
        b: DiscParams::new(d, &cfg.disc_hidden, cfg.seed.wrapping_mul(2).wrapping_add(1002))?,
    };
    let proj = Projection::new(d, cfg.surrogate_seed);
    let mut opt_g = OptimizerState::for_params(AdamConfig::with_lr(cfg.lr_gen), &net);
    let mut opt_a = OptimizerState::for_params(AdamConfig { lr: cfg.lr_disc, beta1: 0.5, ..AdamConfig::default() }, &discs.a);
    let mut opt_b = OptimizerState::for_params(AdamConfig { lr: cfg.lr_disc, beta1: 0.5, ..AdamConfig::default() }, &discs.b);

    let eval = Evaluator {
        a: data_a.samples(),
        b: data_b.samples(),
        fit_a: GaussianSummary::fit(data_a.samples())?,
        fit_b: GaussianSummary::fit(data_b.samples())?,
    };
    let save = |net: &NetParams, step: usize| -> Result<()> {
        if let Some(dir) = checkpoints {
            save_checkpoint(&dir.join(format!("{}_step{step:06}.ckpt", cfg.strategy)), net)?;
        }
        Ok(())
    };

    // step-0 losses on a batch from a separate stream
    let mut probe = root.substream(2);
    let (pa, pb) = (data_a.minibatch(&mut probe, cfg.batch_size), data_b.minibatch(&mut probe, cfg.batch_size));
    let (c0, _) = generator_objective(&net, cfg, &proj, &discs, &pa, &pb)?;
    let d0 = disc_losses(&net, cfg, inv, &discs, &pa, &pb)?;
    let mut history = vec![eval.row(&net, cfg, 0, summarize(d0.0 + d0.1, &c0))?];
    save(&net, 0)?;

    let mut disc_updates = 0u64;
    let mut low_streak = 0usize;
    let mut collapse_step = None;
    for step in 1..=cfg.steps {
        let za = data_a.minibatch(&mut rng, cfg.batch_size);
        let zb = data_b.minibatch(&mut rng, cfg.batch_size);

        let mut d_loss = 0.0;
        if cfg.lambda_gan > 0.0 {
            let fake_b = translate_all(&net, cfg.strategy, inv, &za, DomainTag::A2b)?;
            let fake_a = translate_all(&net, cfg.strategy, inv, &zb, DomainTag::B2a)?;
            let gb = gan_losses(&discs.b, &zb, &fake_b)?;
            let ga = gan_losses(&discs.a, &za, &fake_a)?;
            d_loss = 0.5 * (ga.d_loss + gb.d_loss);
            if !d_loss.is_finite() {
                return Err(diverged(step, cfg.strategy, format!("discriminator loss {d_loss}")));
            }
            optimizer_step(&mut discs.a, &ga.disc_grads, &mut opt_a).map_err(|e| diverged(step, cfg.strategy, e.to_string()))?;
            optimizer_step(&mut discs.b, &gb.disc_grads, &mut opt_b).map_err(|e| diverged(step, cfg.strategy, e.to_string()))?;
            disc_updates += 2;
            if d_loss < COLLAPSE_LOSS {
                low_streak += 1;
                if low_streak >= COLLAPSE_WINDOW && collapse_step.is_none() {
                    collapse_step = Some(step);
                }
            } else {
                low_streak = 0;
            }
        }

        let (comps, grads) = generator_objective(&net, cfg, &proj, &discs, &za, &zb)
            .map_err(|e| diverged(step, cfg.strategy, e.to_string()))?;
        let total = total_loss(cfg, &comps);
        if !total.is_finite() {
            return Err(diverged(step, cfg.strategy, format!("generator objective {total}, components {comps:?}")));
        }
        optimizer_step(&mut net, &grads, &mut opt_g).map_err(|e| diverged(step, cfg.strategy, e.to_string()))?;

        if step % cfg.eval_every == 0 || step == cfg.steps {
            history.push(eval.row(&net, cfg, step, summarize(2.0 * d_loss, &comps))?);
            save(&net, step)?;
        }
    }
    Ok(FinetuneOutput { params: net, discriminators: discs, history, disc_updates, collapse_step })
}

/// `(d_loss averaged over directions, g_loss, cyc, idt)`; `d_sum` is the sum over both directions.
fn summarize(d_sum: f64, c: &[LossComponents; 2]) -> (f64, f64, f64, f64) {
    (0.5 * d_sum, 0.5 * (c[0].gan + c[1].gan), 0.5 * (c[0].cyc + c[1].cyc), 0.5 * (c[0].idt + c[1].idt))
}

fn disc_losses(
    net: &NetParams,
    cfg: &TrainConfig,
    inv: InversionConfig,
    discs: &Discriminators,
    za: &Batch,
    zb: &Batch,
) -> Result<(f64, f64)> {
    let fake_b = translate_all(net, cfg.strategy, inv, za, DomainTag::A2b)?;
    let fake_a = translate_all(net, cfg.strategy, inv, zb, DomainTag::B2a)?;
    Ok((gan_losses(&discs.a, za, &fake_a)?.d_loss, gan_losses(&discs.b, zb, &fake_b)?.d_loss))
}

#[cfg(test)]
mod tests {
    use std::f64::consts::LN_2;

    use super::*;
    use crate::data::{Generator, Placement};

    fn zero_disc(d: usize) -> DiscParams {
        let mut disc = DiscParams::new(d, &[8], 0).unwrap();
        disc.values_mut().iter_mut().for_each(|v| *v = 0.0);
        disc
    }

    fn batch(rows: &[[f64; 2]]) -> Batch {
        Batch::from_rows(rows).unwrap()
    }

    #[test]
    fn gan_symmetric_ignorance_point() {
        let g = gan_losses(&zero_disc(2), &batch(&[[1.0, 2.0], [0.0, 1.0]]), &batch(&[[3.0, 0.0]])).unwrap();
        assert!((g.d_loss - 2.0 * LN_2).abs() < 1e-12);
        assert!((g.g_loss - LN_2).abs() < 1e-12);
    }

    #[test]
    fn gan_saturation() {
        // real and fake are distinguished by the sign of the first coordinate
        let mut disc = zero_disc(2);
        // hidden unit 0 reads x0 with a large weight; the output reads hidden 0
        disc.values_mut()[0] = 100.0;
        let n = disc.values().len();
        disc.values_mut()[n - 1 - 8] = 20.0;
        let g = gan_losses(&disc, &batch(&[[1.0, 0.0]]), &batch(&[[-1.0, 0.0]])).unwrap();
        assert!(g.d_loss < 1e-8, "{}", g.d_loss);
        assert!(gan_losses(&disc, &Batch::zeros(0, 2), &batch(&[[1.0, 0.0]])).is_err());
    }

    #[test]
    fn softplus_is_stable() {
        assert_eq!(softplus(-1000.0), 0.0);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!((softplus(0.0) - LN_2).abs() < 1e-15);
    }

    #[test]
    fn reconstruction_examples() {
        let proj = Projection::new(1, 5);
        let z = Batch::from_vec(3, 1, vec![0.5, -1.0, 2.0]).unwrap();
        let (l, g) = reconstruction_loss(&proj, &z, &z).unwrap();
        assert_eq!(l.total(), 0.0);
        assert!(g.data().iter().all(|&x| x == 0.0));

        // G_ab = z + 1, G_ba = z - 1: exact inverses
        let ab = Batch::from_vec(3, 1, z.data().iter().map(|x| x + 1.0).collect()).unwrap();
        let rec = Batch::from_vec(3, 1, ab.data().iter().map(|x| x - 1.0).collect()).unwrap();
        assert_eq!(reconstruction_loss(&proj, &rec, &z).unwrap().0.total(), 0.0);

        // G_ba = identity: unit shift per sample; surrogate = |P e_1|
        let (l, _) = reconstruction_loss(&proj, &ab, &z).unwrap();
        assert!((l.l1 - 1.0).abs() < 1e-12);
        let unit = proj.apply(&[1.0]).iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((l.surrogate - unit).abs() < 1e-12);
    }

    #[test]
    fn identity_shift_example() {
        let proj = Projection::new(2, 5);
        let z = batch(&[[1.0, 2.0], [-3.0, 0.5]]);
        let shifted = batch(&[[1.5, 1.5], [-2.5, 0.0]]);
        let (l, _) = reconstruction_loss(&proj, &shifted, &z).unwrap();
        assert!((l.l1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn projection_is_seeded_and_sized() {
        let p = Projection::new(3, 9);
        assert_eq!(p.matrix.len(), 36);
        assert_eq!(p, Projection::new(3, 9));
        assert_ne!(p, Projection::new(3, 10));
    }

    #[test]
    fn total_loss_examples() {
        let zero = TrainConfig { lambda_cyc: 0.0, lambda_idt: 0.0, lambda_gan: 0.0, ..TrainConfig::default() };
        let c = LossComponents { cyc: 2.0, idt: 1.0, gan: 1.0 };
        assert_eq!(total_loss(&zero, &[c]), 0.0);
        assert!((total_loss(&TrainConfig::default(), &[c]) - 3.0).abs() < 1e-15);
        let c2 = LossComponents { cyc: 0.0, idt: 0.0, gan: 1.0 };
        assert!((total_loss(&TrainConfig::default(), &[c, c2]) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { lambda_cyc: -1.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { steps: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { t_inv: 1.0, ..TrainConfig::default() }.validate().is_err());
        let parsed: Result<TrainConfig, _> = toml::from_str("strategy = \"treft\"\nbogus = 1\n");
        assert!(parsed.is_err());
        let parsed: TrainConfig = toml::from_str("strategy = \"inversion\"\nt_inv = 0.3\n").unwrap();
        assert_eq!(parsed.strategy, Strategy::Inversion);
        assert_eq!(parsed.lambda_cyc, 0.5);
    }

    fn zero_net() -> NetParams {
        let mut net = NetParams::new(2, &[8], 0).unwrap();
        net.values_mut().iter_mut().for_each(|v| *v = 0.0);
        net
    }

    #[test]
    fn objective_decomposes_into_weighted_components() {
        let net = NetParams::new(2, &[8, 8], 4).unwrap();
        let cfg = TrainConfig { strategy: Strategy::Inversion, ..TrainConfig::default() };
        let discs = Discriminators { a: DiscParams::new(2, &[8], 1).unwrap(), b: DiscParams::new(2, &[8], 2).unwrap() };
        let proj = Projection::new(2, 3);
        let za = batch(&[[1.0, 0.5], [-0.3, 0.2], [0.7, -1.1]]);
        let zb = batch(&[[2.0, 0.0], [0.0, -2.0], [1.4, 1.4]]);
        let (comps, _) = generator_objective(&net, &cfg, &proj, &discs, &za, &zb).unwrap();
        let inv = cfg.inversion().unwrap();
        let mut scratch = net.zero_grads();
        let cyc = latent_cycle_loss(&net, cfg.strategy, inv, &proj, &za, DomainTag::A2b, DomainTag::B2a, 0.0, &mut scratch)
            .unwrap();
        let idt = latent_identity_loss(&net, cfg.strategy, inv, &proj, &za, DomainTag::B2a, 0.0, &mut scratch).unwrap();
        let fake = translate_all(&net, cfg.strategy, inv, &za, DomainTag::A2b).unwrap();
        let gan = gan_losses(&discs.b, &zb, &fake).unwrap();
        assert!((comps[0].cyc - cyc.total()).abs() < 1e-12);
        assert!((comps[1].idt - idt.total()).abs() < 1e-12);
        assert!((comps[0].gan - gan.g_loss).abs() < 1e-12);
        let manual = 0.5
            * comps.iter().map(|c| cfg.lambda_cyc * c.cyc + cfg.lambda_idt * c.idt + cfg.lambda_gan * c.gan).sum::<f64>();
        assert!((total_loss(&cfg, &comps) - manual).abs() < 1e-12);
    }

    #[test]
    fn exact_inverse_generators_get_no_update() {
        // a zero network makes vanilla and inversion the identity map
        for strategy in [Strategy::Vanilla, Strategy::Inversion] {
            let mut net = zero_net();
            let cfg = TrainConfig { strategy, lambda_gan: 0.0, lambda_idt: 0.0, lambda_cyc: 1.0, ..TrainConfig::default() };
            let discs = Discriminators { a: zero_disc(2), b: zero_disc(2) };
            let za = batch(&[[1.0, 0.5], [-0.3, 0.2]]);
            let (comps, grads) = generator_objective(&net, &cfg, &Projection::new(2, 1), &discs, &za, &za).unwrap();
            assert_eq!(comps[0].cyc, 0.0);
            assert_eq!(grads.max_abs(), 0.0);
            let before = net.clone();
            let mut opt = OptimizerState::for_params(AdamConfig::default(), &net);
            optimizer_step(&mut net, &grads, &mut opt).unwrap();
            assert_eq!(net, before);
        }
    }

    fn toy_data() -> (DomainDataset, DomainDataset) {
        let a = DomainDataset::generate("a", Generator::EightGaussians { radius: 2.0, std: 0.1 }, Placement::default(), 1, 200)
            .unwrap();
        let b = DomainDataset::generate("b", Generator::Ring { radius: 1.0, std: 0.05 }, Placement::default(), 2, 200).unwrap();
        (a, b)
    }

    #[test]
    fn no_gan_weight_means_no_discriminator_updates() {
        let (a, b) = toy_data();
        let net = NetParams::new(2, &[8], 3).unwrap();
        let cfg = TrainConfig { lambda_gan: 0.0, steps: 5, batch_size: 16, eval_every: 5, ..TrainConfig::default() };
        let out = finetune(&cfg, &net, &a, &b, None).unwrap();
        assert_eq!(out.disc_updates, 0);
        let cfg = TrainConfig { steps: 5, ..cfg.clone() };
        let cfg = TrainConfig { lambda_gan: 1.0, ..cfg };
        assert_eq!(finetune(&cfg, &net, &a, &b, None).unwrap().disc_updates, 10);
    }

    #[test]
    fn finetune_is_deterministic_with_fixed_grid() {
        let (a, b) = toy_data();
        let net = NetParams::new(2, &[8], 3).unwrap();
        let cfg = TrainConfig { steps: 12, batch_size: 16, eval_every: 5, ..TrainConfig::default() };
        let r1 = finetune(&cfg, &net, &a, &b, None).unwrap();
        let r2 = finetune(&cfg, &net, &a, &b, None).unwrap();
        assert_eq!(r1.history, r2.history);
        let steps: Vec<usize> = r1.history.iter().map(|r| r.step).collect();
        assert_eq!(steps, [0, 5, 10, 12]);
        let mut buf = Vec::new();
        write_history_csv(&mut buf, &r1.history).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(
            "step,strategy,frechet_a2b,frechet_b2a,struct_a2b,struct_b2a,d_loss,g_loss,cyc,idt\n0,treft,"
        ));
    }

    #[test]
    fn checkpoints_written_per_eval_point() {
        let (a, b) = toy_data();
        let net = NetParams::new(2, &[8], 3).unwrap();
        let cfg = TrainConfig { steps: 4, batch_size: 8, eval_every: 2, ..TrainConfig::default() };
        let dir = tempfile::tempdir().unwrap();
        finetune(&cfg, &net, &a, &b, Some(dir.path())).unwrap();
        let mut names: Vec<String> =
            std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
        names.sort();
        assert_eq!(names, ["treft_step000000.ckpt", "treft_step000002.ckpt", "treft_step000004.ckpt"]);
    }
}
