//! The acceptance suite as a registry of self-contained checks.
//!
//! Criteria 1–7 write their CSV artifacts under `<out>/c<id>`; criterion 8
//! re-runs each of them into `<out>/rerun/c<id>` and compares every CSV byte
//! for byte.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::analytic::{GaussianField, GaussianSpec};
use crate::error::Result;
use crate::numeric::{sample_standard_normal, RngState, Timestep};
use crate::sampler::{DomainTag, VelocityField};

use super::angles::AnglesConfig;
use super::fig4::Fig4Config;
use super::theorem1::Theorem1Config;
use super::theorem2::Theorem2Config;
use super::training::{run_gap, run_train_to, write_gap_summary, GapConfig, TrainCmdConfig};
use super::{gradcheck, prepare_output, write_file};

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub passed: bool,
    pub detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self { passed, detail: detail.into() }
    }
}

pub struct Criterion {
    pub id: u8,
    pub name: &'static str,
    pub budget_secs: u64,
    run: fn(&Path) -> Result<Outcome>,
}

impl Criterion {
    /// Runs into `out`; an error counts as a failure.
    pub fn run(&self, out: &Path) -> Outcome {
        match (self.run)(out) {
            Ok(o) => o,
            Err(e) => Outcome::new(false, format!("error: {e}")),
        }
    }
}

pub fn criteria() -> Vec<Criterion> {
    vec![
        Criterion { id: 1, name: "theorem1 kernel-regression oracle", budget_secs: 60, run: theorem1 },
        Criterion { id: 2, name: "noise-norm closed form", budget_secs: 60, run: noise_norm },
        Criterion { id: 3, name: "t=1 limit and O(1-t) rate", budget_secs: 120, run: limit_and_rate },
        Criterion { id: 4, name: "gradient correctness", budget_secs: 60, run: gradients },
        Criterion { id: 5, name: "pretraining fidelity", budget_secs: 600, run: pretraining },
        Criterion { id: 6, name: "convergence gap", budget_secs: 1800, run: convergence_gap },
        Criterion { id: 7, name: "flow-direction angles", budget_secs: 30, run: angles },
        Criterion { id: 8, name: "determinism", budget_secs: 0, run: determinism },
    ]
}

fn theorem1(out: &Path) -> Result<Outcome> {
    let r = super::theorem1::run_to(&Theorem1Config::default(), out)?;
    Ok(Outcome::new(
        r.passed,
        format!("max rel err {:.4} over {} reliable probes (< 0.05)", r.max_rel_err, r.rows.len() - r.unreliable),
    ))
}

fn noise_norm(out: &Path) -> Result<Outcome> {
    let r = super::fig4::run_to(&Fig4Config::default(), out)?;
    Ok(Outcome::new(
        r.passed,
        format!(
            "max rel dev {:.5} (< 0.02), strictly decreasing: {}, final cos {:.9}",
            r.max_rel_dev.unwrap_or(f64::NAN),
            r.marginal_strictly_decreasing.unwrap_or(false),
            r.final_cos
        ),
    ))
}

fn limit_and_rate(out: &Path) -> Result<Outcome> {
    prepare_output(out, &Theorem2Config::default())?;
    let spec = GaussianSpec::new(crate::numeric::LatentVector::new(vec![2.0, -1.0, 0.5])?, 0.4)?;
    let field = GaussianField(spec);
    let mut rng = RngState::new(5);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let z = sample_standard_normal(&mut rng, 3)?.scale(4.0);
        let v = field.evaluate(&z, Timestep::CLEAN, DomainTag::None)?;
        worst = worst.max((&v - &z).as_slice().iter().fold(0.0, |m, x| m.max(x.abs())));
    }
    let r = super::theorem2::run(&Theorem2Config::default())?;
    write_file(out, "theorem2_errors.csv", |b| super::theorem2::write_errors_csv(b, &r))?;
    write_file(out, "theorem2_slopes.csv", |b| super::theorem2::write_slopes_csv(b, &r))?;
    let passed = worst <= 1e-12 && r.passed && r.curves.len() >= 100;
    Ok(Outcome::new(
        passed,
        format!(
            "identity residual {worst:e} (<= 1e-12); mean slope {:.4} over {} pairs, {} skipped (in [0.85, 1.15])",
            r.mean_slope,
            r.curves.len(),
            r.skipped
        ),
    ))
}

fn gradients(out: &Path) -> Result<Outcome> {
    fs::create_dir_all(out)?;
    let checks = gradcheck::run(10, 1e-4, 0)?;
    write_file(out, "gradcheck.csv", |b| gradcheck::write_csv(b, &checks))?;
    let worst = checks.iter().max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err)).expect("nonempty");
    Ok(Outcome::new(
        worst.max_rel_err < 1e-4,
        format!("max rel err {:e} ({} config {}) (< 1e-4)", worst.max_rel_err, worst.loss, worst.config),
    ))
}

fn pretraining(out: &Path) -> Result<Outcome> {
    let r = run_train_to(&TrainCmdConfig::default(), out)?;
    let rmse = r.fidelity.as_ref().map(|f| f.1).unwrap_or(f64::NAN);
    Ok(Outcome::new(rmse <= 0.1, format!("velocity RMSE {rmse:.4} on 64 points x 9 timesteps (<= 0.1)")))
}

fn convergence_gap(out: &Path) -> Result<Outcome> {
    let cfg = GapConfig::default();
    prepare_output(out, &cfg)?;
    let r = run_gap(&cfg, None)?;
    write_file(out, "gap_summary.csv", |b| write_gap_summary(b, &r))?;
    for (s, seed, h) in &r.histories {
        write_file(out, &format!("history_{s}_seed{seed}.csv"), |b| crate::adversarial::write_history_csv(b, h))?;
    }
    let (t, v, i) = (
        r.mean_of(crate::translation::Strategy::Treft),
        r.mean_of(crate::translation::Strategy::Vanilla),
        r.mean_of(crate::translation::Strategy::Inversion),
    );
    Ok(Outcome::new(
        r.passed,
        format!(
            "mean final Frechet: treft {t:.4}, inversion {i:.4}, vanilla {v:.4} (treft < vanilla, treft <= 2*inversion, treft < {})",
            cfg.treft_threshold
        ),
    ))
}

fn angles(out: &Path) -> Result<Outcome> {
    let r = super::angles::run_to(&AnglesConfig::default(), out)?;
    Ok(Outcome::new(
        r.passed,
        format!(
            "median cos_treft {:.4} (> 0.95), median |cos_vanilla| {:.4} (< 0.5), {} pairs",
            r.median_treft,
            r.median_abs_vanilla,
            r.stats.cos_treft.len()
        ),
    ))
}

fn csv_files(dir: &Path) -> Result<BTreeMap<PathBuf, Vec<u8>>> {
    let mut out = BTreeMap::new();
    if !dir.exists() {
        return Ok(out);
    }
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d)? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e == "csv") {
                out.insert(p.strip_prefix(dir).expect("under dir").to_path_buf(), fs::read(&p)?);
            }
        }
    }
    Ok(out)
}

pub fn criterion_dir(out: &Path, id: u8) -> PathBuf {
    out.join(format!("c{id}"))
}

/// Re-runs criteria 1–7 and compares every CSV they wrote. Criteria that have
/// not been run under `out` yet are run first.
fn determinism(out: &Path) -> Result<Outcome> {
    let mut mismatched = Vec::new();
    let mut files = 0;
    for c in criteria().into_iter().filter(|c| c.id != 8) {
        let first = criterion_dir(out, c.id);
        if !first.exists() {
            c.run(&first);
        }
        let second = criterion_dir(&out.join("rerun"), c.id);
        c.run(&second);
        let (a, b) = (csv_files(&first)?, csv_files(&second)?);
        files += a.len();
        if a.is_empty() || a != b {
            mismatched.push(c.id.to_string());
        }
    }
    if mismatched.is_empty() {
        Ok(Outcome::new(true, format!("{files} CSV files identical across reruns")))
    } else {
        Ok(Outcome::new(false, format!("outputs differ or missing for criteria {}", mismatched.join(", "))))
    }
}

#[derive(Debug, Clone)]
pub struct Verdict {
    pub id: u8,
    pub name: &'static str,
    pub outcome: Outcome,
    pub seconds: f64,
}

impl Verdict {
    /// `[PASS] 1 name (12.3s): detail`
    pub fn line(&self) -> String {
        format!(
            "[{}] {} {} ({:.1}s): {}",
            if self.outcome.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.seconds,
            self.outcome.detail
        )
    }
}

/// Runs the selected criteria (all when `only` is empty) in id order.
pub fn run_suite(out: &Path, only: &[u8], mut on_verdict: impl FnMut(&Verdict)) -> Vec<Verdict> {
    let mut verdicts = Vec::new();
    for c in criteria() {
        if !only.is_empty() && !only.contains(&c.id) {
            continue;
        }
        let start = Instant::now();
        let dir = if c.id == 8 { out.to_path_buf() } else { criterion_dir(out, c.id) };
        let outcome = c.run(&dir);
        let v = Verdict { id: c.id, name: c.name, outcome, seconds: start.elapsed().as_secs_f64() };
        on_verdict(&v);
        verdicts.push(v);
    }
    verdicts
}
