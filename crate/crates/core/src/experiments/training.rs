//! Pretraining, fine-tuning sweeps and the convergence-gap benchmark.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adversarial::{finetune, write_history_csv, FinetuneOutput, TrainConfig};
use crate::analytic::{expected_velocity, GaussianSpec};
use crate::data::{CleanSource, DomainDataset, Union};
use crate::error::{Error, Result};
use crate::nn::checkpoint::{load_checkpoint, save_checkpoint};
use crate::nn::flow_matching::{train_flow_matching, write_loss_csv, PretrainConfig};
use crate::nn::nets::NetParams;
use crate::numeric::{LatentVector, Timestep};
use crate::sampler::VelocityField;
use crate::translation::Strategy;

use super::{benchmark_domains, mixture_spec, prepare_output, write_file, ComponentConfig, DomainConfig, GaussianConfig};

/// Clean data used for flow-matching pretraining.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceConfig {
    Gaussian { mu: Vec<f64>, sigma_sq: f64 },
    Mixture { components: Vec<ComponentConfig> },
    /// Equal-weight union of two synthetic domains.
    Domains { a: DomainConfig, b: DomainConfig },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainCmdConfig {
    pub pretrain: PretrainConfig,
    pub source: SourceConfig,
    /// Side of the per-timestep probe grid used to score a Gaussian-source fit.
    pub grid_side: usize,
    pub grid_timesteps: Vec<f64>,
}

impl Default for TrainCmdConfig {
    fn default() -> Self {
        Self {
            pretrain: PretrainConfig::default(),
            source: SourceConfig::Gaussian { mu: vec![3.0, -1.0], sigma_sq: 0.25 },
            grid_side: 8,
            grid_timesteps: (1..=9).map(|i| i as f64 / 10.0).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FidelityRow {
    pub t: f64,
    pub x: Vec<f64>,
    pub net: Vec<f64>,
    pub analytic: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub params: NetParams,
    pub losses: Vec<f64>,
    /// Only for a Gaussian source.
    pub fidelity: Option<(Vec<FidelityRow>, f64)>,
}

/// `side x side` grid per timestep, centered at `t mu` and spanning two
/// marginal standard deviations either side along the first two coordinates.
pub fn fidelity_grid(spec: &GaussianSpec, ts: &[f64], side: usize) -> Result<Vec<(f64, LatentVector)>> {
    if side < 2 {
        return Err(Error::Config("grid_side must be at least 2".into()));
    }
    let d = spec.dim();
    let mut out = Vec::with_capacity(ts.len() * side * side);
    for &t in ts {
        let center: Vec<f64> = spec.mu().as_slice().iter().map(|m| t * m).collect();
        let span = 2.0 * spec.marginal_variance(t).sqrt();
        let offset = |i: usize| -span + 2.0 * span * i as f64 / (side - 1) as f64;
        for i in 0..side {
            for j in 0..side {
                let mut x = center.clone();
                x[0] += offset(i);
                if d > 1 {
                    x[1] += offset(j);
                }
                out.push((t, LatentVector::new(x)?));
            }
        }
    }
    Ok(out)
}

/// Per-point comparison and the RMS of `||v_net - v_analytic||`.
pub fn velocity_rmse(net: &dyn VelocityField, spec: &GaussianSpec, ts: &[f64], side: usize) -> Result<(Vec<FidelityRow>, f64)> {
    let mut rows = Vec::new();
    let mut sq = 0.0;
    for (t, x) in fidelity_grid(spec, ts, side)? {
        let tt = Timestep::new(t)?;
        let v = net.evaluate(&x, tt, crate::sampler::DomainTag::None)?;
        let a = expected_velocity(&x, tt, spec)?;
        sq += (&v - &a).norm_sq();
        rows.push(FidelityRow { t, x: x.into_vec(), net: v.into_vec(), analytic: a.into_vec() });
    }
    let rmse = (sq / rows.len() as f64).sqrt();
    Ok((rows, rmse))
}

pub fn write_fidelity_csv<W: Write>(out: W, rows: &[FidelityRow]) -> Result<()> {
    let d = rows.first().map(|r| r.x.len()).unwrap_or(0);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    for p in ["x", "net", "analytic"] {
        header.extend((0..d).map(|i| format!("{p}_{i}")));
    }
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.t.to_string()];
        for v in [&r.x, &r.net, &r.analytic] {
            rec.extend(v.iter().map(f64::to_string));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn run_train(cfg: &TrainCmdConfig) -> Result<TrainReport> {
    let out = match &cfg.source {
        SourceConfig::Gaussian { mu, sigma_sq } => {
            let spec = GaussianConfig { mu: mu.clone(), sigma_sq: *sigma_sq }.spec()?;
            let trained = train_flow_matching(&cfg.pretrain, &spec)?;
            let fid = velocity_rmse(&trained.params, &spec, &cfg.grid_timesteps, cfg.grid_side)?;
            return Ok(TrainReport { params: trained.params, losses: trained.losses, fidelity: Some(fid) });
        }
        SourceConfig::Mixture { components } => train_flow_matching(&cfg.pretrain, &mixture_spec(components)?)?,
        SourceConfig::Domains { a, b } => {
            let (a, b) = (a.build()?, b.build()?);
            let union = Union(vec![&a as &dyn CleanSource, &b]);
            train_flow_matching(&cfg.pretrain, &union)?
        }
    };
    Ok(TrainReport { params: out.params, losses: out.losses, fidelity: None })
}

pub const PRETRAIN_CHECKPOINT: &str = "pretrain.ckpt";

pub fn run_train_to(cfg: &TrainCmdConfig, out: &Path) -> Result<TrainReport> {
    prepare_output(out, cfg)?;
    let r = run_train(cfg)?;
    save_checkpoint(&out.join(PRETRAIN_CHECKPOINT), &r.params)?;
    write_file(out, "pretrain_loss.csv", |b| write_loss_csv(b, &r.losses))?;
    if let Some((rows, _)) = &r.fidelity {
        write_file(out, "fidelity.csv", |b| write_fidelity_csv(b, rows))?;
    }
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneCmdConfig {
    /// Pretrained network; never re-created implicitly.
    pub checkpoint: PathBuf,
    pub a: DomainConfig,
    pub b: DomainConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// Each listed strategy is run with otherwise identical settings.
    #[serde(default = "all_strategies")]
    pub strategies: Vec<Strategy>,
    #[serde(default)]
    pub save_checkpoints: bool,
}

fn all_strategies() -> Vec<Strategy> {
    Strategy::ALL.to_vec()
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub strategy: Strategy,
    pub output: FinetuneOutput,
}

pub fn run_finetune_to(cfg: &FinetuneCmdConfig, out: &Path) -> Result<Vec<SweepResult>> {
    let pretrained = load_checkpoint(&cfg.checkpoint)?;
    prepare_output(out, cfg)?;
    let (a, b) = (cfg.a.build()?, cfg.b.build()?);
    let mut results = Vec::new();
    for &strategy in &cfg.strategies {
        let train = TrainConfig { strategy, ..cfg.train.clone() };
        let ckpt_dir = if cfg.save_checkpoints {
            let dir = out.join(format!("checkpoints_{strategy}"));
            fs::create_dir_all(&dir)?;
            Some(dir)
        } else {
            None
        };
        let output = finetune(&train, &pretrained, &a, &b, ckpt_dir.as_deref())?;
        write_file(out, &format!("history_{strategy}.csv"), |buf| write_history_csv(buf, &output.history))?;
        save_checkpoint(&out.join(format!("finetuned_{strategy}.ckpt")), &output.params)?;
        results.push(SweepResult { strategy, output });
    }
    write_file(out, "summary.csv", |buf| write_sweep_summary(buf, &results))?;
    Ok(results)
}

/// Columns `strategy, frechet_a2b, frechet_b2a, struct_a2b, struct_b2a, collapse_step`.
pub fn write_sweep_summary<W: Write>(out: W, results: &[SweepResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["strategy", "frechet_a2b", "frechet_b2a", "struct_a2b", "struct_b2a", "collapse_step"])?;
    for r in results {
        let f = r.output.final_row();
        w.write_record([
            r.strategy.to_string(),
            f.frechet_a2b.to_string(),
            f.frechet_b2a.to_string(),
            f.struct_a2b.to_string(),
            f.struct_b2a.to_string(),
            r.output.collapse_step.map(|s| s.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// The fixed toy benchmark: pretrain once on the union of both domains, then
/// fine-tune every strategy under identical budgets for each seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GapConfig {
    pub a: DomainConfig,
    pub b: DomainConfig,
    pub pretrain: PretrainConfig,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    /// TReFT must end below this mean Fréchet distance.
    pub treft_threshold: f64,
}

/// Frozen from the reference run of the default [`GapConfig`] (mean final
/// TReFT distance 0.0019, seeds 0.0030 / 0.0023 / 0.0003): converged runs sit
/// at 1e-3..5e-3, unconverged ones at 0.04 and above.
pub const TREFT_FRECHET_THRESHOLD: f64 = 0.01;

impl Default for GapConfig {
    fn default() -> Self {
        let (a, b) = benchmark_domains();
        Self {
            a,
            b,
            pretrain: PretrainConfig { steps: 5000, ..PretrainConfig::default() },
            train: TrainConfig { steps: 3000, ..TrainConfig::default() },
            seeds: vec![0, 1, 2],
            treft_threshold: TREFT_FRECHET_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapReport {
    /// `(strategy, seed, final frechet_a2b)`
    pub finals: Vec<(Strategy, u64, f64)>,
    pub mean: [(Strategy, f64); 3],
    pub histories: Vec<(Strategy, u64, Vec<crate::adversarial::HistoryRow>)>,
    pub passed: bool,
}

impl GapReport {
    pub fn mean_of(&self, s: Strategy) -> f64 {
        self.mean.iter().find(|(k, _)| *k == s).map(|m| m.1).unwrap_or(f64::NAN)
    }
}

pub fn run_gap(cfg: &GapConfig, pretrained: Option<NetParams>) -> Result<GapReport> {
    let (a, b): (DomainDataset, DomainDataset) = (cfg.a.build()?, cfg.b.build()?);
    let net = match pretrained {
        Some(n) => n,
        None => {
            let union = Union(vec![&a as &dyn CleanSource, &b]);
            train_flow_matching(&cfg.pretrain, &union)?.params
        }
    };
    let mut finals = Vec::new();
    let mut histories = Vec::new();
    for &seed in &cfg.seeds {
        for strategy in Strategy::ALL {
            let train = TrainConfig { strategy, seed, ..cfg.train.clone() };
            let out = finetune(&train, &net, &a, &b, None)?;
            finals.push((strategy, seed, out.final_row().frechet_a2b));
            histories.push((strategy, seed, out.history));
        }
    }
    let mean = Strategy::ALL.map(|s| {
        let v: Vec<f64> = finals.iter().filter(|f| f.0 == s).map(|f| f.2).collect();
        (s, v.iter().sum::<f64>() / v.len() as f64)
    });
    let get = |s| mean.iter().find(|(k, _)| *k == s).unwrap().1;
    let (t, v, i) = (get(Strategy::Treft), get(Strategy::Vanilla), get(Strategy::Inversion));
    let passed = t < v && t <= 2.0 * i && t < cfg.treft_threshold;
    Ok(GapReport { finals, mean, histories, passed })
}

pub fn write_gap_summary<W: Write>(out: W, r: &GapReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["strategy", "seed", "final_frechet_a2b"])?;
    for (s, seed, f) in &r.finals {
        w.write_record([s.to_string(), seed.to_string(), f.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
