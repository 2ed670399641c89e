//! The regression objective `E || (z1 - z0) - v(z_t, t) ||^2` and its
//! training loop.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::CleanSource;
use crate::error::{Error, Result};
use crate::nn::mlp::Batch;
use crate::nn::nets::{Grads, NetParams, Parameterized};
use crate::nn::optim::{optimizer_step, AdamConfig, OptimizerState};
use crate::numeric::{LatentVector, RngState};
use crate::sampler::DomainTag;

/// Structure-of-arrays minibatch of `(z0, z1, t, tag)` items.
#[derive(Debug, Clone)]
pub struct FmBatch {
    pub z0: Batch,
    pub z1: Batch,
    pub t: Vec<f64>,
    pub tags: Vec<DomainTag>,
}

impl FmBatch {
    pub fn from_items(items: &[(LatentVector, LatentVector, f64, DomainTag)]) -> Result<Self> {
        let z0: Vec<&[f64]> = items.iter().map(|i| i.0.as_slice()).collect();
        let z1: Vec<&[f64]> = items.iter().map(|i| i.1.as_slice()).collect();
        Ok(Self {
            z0: Batch::from_rows(&z0)?,
            z1: Batch::from_rows(&z1)?,
            t: items.iter().map(|i| i.2).collect(),
            tags: items.iter().map(|i| i.3).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    fn interpolate(&self) -> (Batch, Batch) {
        let d = self.z0.cols();
        let mut zt = Batch::zeros(self.len(), d);
        let mut target = Batch::zeros(self.len(), d);
        for r in 0..self.len() {
            let t = self.t[r];
            let (a, b) = (self.z0.row(r), self.z1.row(r));
            for k in 0..d {
                zt.row_mut(r)[k] = t * b[k] + (1.0 - t) * a[k];
                target.row_mut(r)[k] = b[k] - a[k];
            }
        }
        (zt, target)
    }
}

/// Mean over the batch of the squared error summed over coordinates, with
/// gradients for every network parameter.
pub fn flow_matching_loss(params: &NetParams, batch: &FmBatch) -> Result<(f64, Grads)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("flow-matching loss needs a nonempty batch".into()));
    }
    let (zt, target) = batch.interpolate();
    let tape = params.forward_batch(&zt, &batch.t, &batch.tags)?;
    let out = tape.output();
    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut d_out = Batch::zeros(out.rows(), out.cols());
    for r in 0..out.rows() {
        let mut row_loss = 0.0;
        for ((o, y), g) in out.row(r).iter().zip(target.row(r)).zip(d_out.row_mut(r)) {
            let e = o - y;
            row_loss += e * e;
            *g = 2.0 * e / n;
        }
        loss += row_loss;
    }
    let mut grads = params.zero_grads();
    params.backward_batch(&tape, &d_out, &mut grads);
    Ok((loss / n, grads))
}

/// Draws `n` items with `t ~ U[0, 1]`, `z0 ~ N(0, I)` and `z1` from `source`.
pub fn sample_fm_batch(source: &dyn CleanSource, rng: &mut RngState, n: usize, tag: DomainTag) -> FmBatch {
    let d = source.dim();
    let z1 = source.draw_batch(rng, n);
    let mut z0 = Batch::zeros(n, d);
    rng.fill_normal(z0.data_mut());
    let t = (0..n).map(|_| rng.uniform()).collect();
    FmBatch { z0, z1, t, tags: vec![tag; n] }
}

/// Pretraining configuration. The defaults are sized for 2-D toy problems;
/// large-scale settings (Adam at lr 5e-6) do not transfer to this scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub hidden: Vec<usize>,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub tag: DomainTag,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            steps: 20_000,
            batch_size: 128,
            lr: 1e-3,
            seed: 0,
            tag: DomainTag::None,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::Config("steps and batch_size must be positive".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("lr must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: NetParams,
    pub losses: Vec<f64>,
}

/// Trains a fresh network on `source`. The network is initialized from
/// `cfg.seed`; minibatches come from an independent substream.
pub fn train_flow_matching(cfg: &PretrainConfig, source: &dyn CleanSource) -> Result<TrainOutput> {
    cfg.validate()?;
    let params = NetParams::new(source.dim(), &cfg.hidden, cfg.seed)?;
    continue_flow_matching(cfg, source, params)
}

/// As [`train_flow_matching`], starting from existing parameters.
pub fn continue_flow_matching(cfg: &PretrainConfig, source: &dyn CleanSource, mut params: NetParams) -> Result<TrainOutput> {
    cfg.validate()?;
    let mut rng = RngState::new(cfg.seed).substream(1);
    let mut opt = OptimizerState::for_params(AdamConfig::with_lr(cfg.lr), &params);
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch = sample_fm_batch(source, &mut rng, cfg.batch_size, cfg.tag);
        let (loss, grads) = flow_matching_loss(&params, &batch)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { stage: format!("flow matching step {step}"), detail: format!("loss = {loss}") });
        }
        optimizer_step(&mut params, &grads, &mut opt)
            .map_err(|e| Error::Divergence { stage: format!("flow matching step {step}"), detail: e.to_string() })?;
        losses.push(loss);
    }
    debug_assert!(params.values().iter().all(|v| v.is_finite()));
    Ok(TrainOutput { params, losses })
}

pub fn write_loss_csv<W: Write>(out: W, losses: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "loss"])?;
    for (i, l) in losses.iter().enumerate() {
        w.write_record([i.to_string(), l.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::GaussianSpec;
    use crate::numeric::Timestep;

    fn lv(v: &[f64]) -> LatentVector {
        LatentVector::new(v.to_vec()).unwrap()
    }

    /// A d=1 net whose output is the constant `c`: zero weights, output bias `c`.
    fn constant_net(c: f64) -> NetParams {
        let mut net = NetParams::new(1, &[4], 0).unwrap();
        let n = net.values().len();
        net.values_mut().iter_mut().for_each(|v| *v = 0.0);
        net.values_mut()[n - 1] = c;
        net
    }

    #[test]
    fn hand_evaluated_loss() {
        let b = FmBatch::from_items(&[(lv(&[0.0]), lv(&[1.0]), 0.5, DomainTag::None)]).unwrap();
        let (loss, _) = flow_matching_loss(&constant_net(0.5), &b).unwrap();
        assert!((loss - 0.25).abs() < 1e-15);
    }

    #[test]
    fn perfect_fit_has_zero_loss() {
        let b = FmBatch::from_items(&[
            (lv(&[0.0]), lv(&[0.7]), 0.1, DomainTag::None),
            (lv(&[-0.3]), lv(&[0.4]), 0.9, DomainTag::A2b),
        ])
        .unwrap();
        let (loss, grads) = flow_matching_loss(&constant_net(0.7), &b).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grads.max_abs(), 0.0);
    }

    #[test]
    fn empty_batch_rejected() {
        let b = FmBatch { z0: Batch::zeros(0, 1), z1: Batch::zeros(0, 1), t: vec![], tags: vec![] };
        assert!(matches!(flow_matching_loss(&constant_net(0.0), &b), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn batch_order_does_not_change_loss() {
        let spec = GaussianSpec::new(lv(&[3.0, -1.0]), 0.25).unwrap();
        let mut rng = RngState::new(3);
        let b = sample_fm_batch(&spec, &mut rng, 64, DomainTag::None);
        let net = NetParams::new(2, &[16, 16], 1).unwrap();
        let (l1, _) = flow_matching_loss(&net, &b).unwrap();
        let perm: Vec<usize> = (0..64).rev().collect();
        let shuffled = FmBatch {
            z0: b.z0.select_rows(&perm),
            z1: b.z1.select_rows(&perm),
            t: perm.iter().map(|&i| b.t[i]).collect(),
            tags: b.tags.clone(),
        };
        let (l2, _) = flow_matching_loss(&net, &shuffled).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
    }

    /// Mean squared error of the closed-form posterior velocity on `batch`:
    /// the irreducible part of the objective.
    fn bayes_floor(spec: &GaussianSpec, batch: &FmBatch) -> f64 {
        let mut acc = 0.0;
        for r in 0..batch.len() {
            let t = batch.t[r];
            let z0 = lv(batch.z0.row(r));
            let z1 = lv(batch.z1.row(r));
            let zt = LatentVector::lincomb(t, &z1, 1.0 - t, &z0);
            let v = crate::analytic::expected_velocity(&zt, Timestep::new(t).unwrap(), spec).unwrap();
            acc += (&(&z1 - &z0) - &v).norm_sq();
        }
        acc / batch.len() as f64
    }

    #[test]
    fn training_reduces_excess_loss_tenfold() {
        // The raw loss cannot fall below E_t[d sigma^2 lambda] = pi/2 here, so
        // the reduction is measured above that floor.
        let spec = GaussianSpec::new(lv(&[3.0, -1.0]), 0.25).unwrap();
        let cfg = PretrainConfig { hidden: vec![16, 16], steps: 2000, seed: 1, ..Default::default() };
        let init = NetParams::new(2, &cfg.hidden, cfg.seed).unwrap();
        let out = train_flow_matching(&cfg, &spec).unwrap();
        let eval = sample_fm_batch(&spec, &mut RngState::new(1234), 20_000, DomainTag::None);
        let floor = bayes_floor(&spec, &eval);
        assert!((floor - std::f64::consts::FRAC_PI_2).abs() < 0.05, "floor {floor}");
        let before = flow_matching_loss(&init, &eval).unwrap().0;
        let after = flow_matching_loss(&out.params, &eval).unwrap().0;
        assert!(before - floor >= 10.0 * (after - floor), "before {before} after {after} floor {floor}");
    }

    #[test]
    fn point_mass_target_points_at_the_point() {
        // With every z1 equal to mu, E[z1 - z0 | z_0] = mu - z_0 at t = 0.
        let mu = lv(&[1.5, -0.5]);
        let cfg = PretrainConfig { hidden: vec![32, 32], steps: 3000, seed: 4, ..Default::default() };
        let out = train_flow_matching(&cfg, &crate::data::PointMass(mu.clone())).unwrap();
        let mut rng = RngState::new(77);
        let mut cos = 0.0;
        for _ in 0..50 {
            let z = crate::numeric::sample_standard_normal(&mut rng, 2).unwrap();
            let v = out.params.forward(&z, Timestep::NOISE, DomainTag::None).unwrap();
            cos += crate::numeric::cosine_similarity(&v, &(&mu - &z)).unwrap() / 50.0;
        }
        assert!(cos > 0.99, "mean cosine {cos}");
    }

    #[test]
    fn loss_csv_layout() {
        let mut buf = Vec::new();
        write_loss_csv(&mut buf, &[0.5, 0.25]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "step,loss\n0,0.5\n1,0.25\n");
    }
}
