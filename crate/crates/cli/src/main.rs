use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use rflab::experiments::acceptance::{criteria, run_suite};
use rflab::experiments::angles::{self, AnglesConfig};
use rflab::experiments::fig4::{self, Fig4Config};
use rflab::experiments::theorem1::{self, Theorem1Config};
use rflab::experiments::theorem2::{self, Theorem2Config};
use rflab::experiments::training::{run_finetune_to, run_train_to, FinetuneCmdConfig, TrainCmdConfig};
use rflab::experiments::translate::{self, TranslateConfig};
use rflab::experiments::load_config;

#[derive(Parser)]
#[command(name = "rflab", version, about = "Rectified-flow laboratory experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML config; built-in defaults when omitted (where allowed).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn out_or(&self, name: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| Path::new("runs").join(name))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Kernel-regression check of the Gaussian posterior velocity.
    Theorem1(Common),
    /// Rate of approach of the mixture posterior velocity to the clean sample.
    Theorem2(Common),
    /// Cosine and noise-norm curves along sampling trajectories.
    Fig4(Common),
    /// Flow-matching pretraining.
    Train(Common),
    /// Adversarial fine-tuning sweep over translation strategies.
    Finetune(Common),
    /// Translate latents from a CSV file.
    Translate(Common),
    /// Flow-direction angle statistics on a constructed paired set.
    Angles(Common),
    /// Run the acceptance suite.
    Accept {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the criteria without running them.
        #[arg(long)]
        list: bool,
        /// Comma-separated criterion ids to run.
        #[arg(long, value_delimiter = ',')]
        only: Vec<u8>,
    },
}

fn config_or_default<T: DeserializeOwned + Default>(c: &Common) -> Result<T> {
    match &c.config {
        Some(p) => load_config(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(T::default()),
    }
}

fn required_config<T: DeserializeOwned>(c: &Common, cmd: &str) -> Result<T> {
    match &c.config {
        Some(p) => load_config(p).with_context(|| format!("loading {}", p.display())),
        None => bail!("`{cmd}` needs --config"),
    }
}

fn verdict(passed: bool) -> &'static str {
    if passed {
        "PASS"
    } else {
        "FAIL"
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Theorem1(c) => {
            let mut cfg: Theorem1Config = config_or_default(&c)?;
            cfg.seed = c.seed.unwrap_or(cfg.seed);
            let out = c.out_or("theorem1");
            let r = theorem1::run_to(&cfg, &out)?;
            println!(
                "{}: max relative error {:.5} over reliable probes, {} unreliable -> {}",
                verdict(r.passed),
                r.max_rel_err,
                r.unreliable,
                out.display()
            );
            Ok(r.passed)
        }
        Command::Theorem2(c) => {
            let mut cfg: Theorem2Config = config_or_default(&c)?;
            cfg.seed = c.seed.unwrap_or(cfg.seed);
            let out = c.out_or("theorem2");
            let r = theorem2::run_to(&cfg, &out)?;
            println!(
                "{}: mean log-log slope {:.4} over {} pairs ({} skipped) -> {}",
                verdict(r.passed),
                r.mean_slope,
                r.curves.len(),
                r.skipped,
                out.display()
            );
            Ok(r.passed)
        }
        Command::Fig4(c) => {
            let mut cfg: Fig4Config = config_or_default(&c)?;
            cfg.seed = c.seed.unwrap_or(cfg.seed);
            let out = c.out_or("fig4");
            let r = fig4::run_to(&cfg, &out)?;
            match r.max_rel_dev {
                Some(dev) => println!("{}: max deviation from the closed-form norm {:.5}", verdict(r.passed), dev),
                None => println!("wrote curves for a trained field"),
            }
            println!("final cosine {:.9} -> {}", r.final_cos, out.display());
            Ok(r.passed)
        }
        Command::Train(c) => {
            let mut cfg: TrainCmdConfig = config_or_default(&c)?;
            cfg.pretrain.seed = c.seed.unwrap_or(cfg.pretrain.seed);
            let out = c.out_or("train");
            let r = run_train_to(&cfg, &out)?;
            let tail = &r.losses[r.losses.len().saturating_sub(500)..];
            println!("final 500-step mean loss {:.5}", tail.iter().sum::<f64>() / tail.len() as f64);
            if let Some((_, rmse)) = &r.fidelity {
                println!("velocity RMSE vs closed form {rmse:.5}");
            }
            println!("checkpoint -> {}", out.join("pretrain.ckpt").display());
            Ok(true)
        }
        Command::Finetune(c) => {
            let mut cfg: FinetuneCmdConfig = required_config(&c, "finetune")?;
            cfg.train.seed = c.seed.unwrap_or(cfg.train.seed);
            let out = c.out_or("finetune");
            for r in run_finetune_to(&cfg, &out)? {
                let f = r.output.final_row();
                println!(
                    "{:>9}: frechet a2b {:.5}  b2a {:.5}  struct a2b {:.4}  b2a {:.4}",
                    r.strategy, f.frechet_a2b, f.frechet_b2a, f.struct_a2b, f.struct_b2a
                );
                if let Some(step) = r.output.collapse_step {
                    eprintln!("warning: {} discriminator collapsed at step {step}", r.strategy);
                }
            }
            println!("histories -> {}", out.display());
            Ok(true)
        }
        Command::Translate(c) => {
            let cfg: TranslateConfig = required_config(&c, "translate")?;
            let out = c.out_or("translate");
            let rows = translate::run_to(&cfg, &out)?;
            println!("translated {} latents -> {}", rows.len(), out.join("translated.csv").display());
            Ok(true)
        }
        Command::Angles(c) => {
            let mut cfg: AnglesConfig = config_or_default(&c)?;
            cfg.seed = c.seed.unwrap_or(cfg.seed);
            let out = c.out_or("angles");
            let r = angles::run_to(&cfg, &out)?;
            println!(
                "{}: median cos_treft {:.4}, median |cos_vanilla| {:.4}, {} pairs ({} skipped) -> {}",
                verdict(r.passed),
                r.median_treft,
                r.median_abs_vanilla,
                r.stats.cos_treft.len(),
                r.stats.skipped,
                out.display()
            );
            Ok(r.passed)
        }
        Command::Accept { out, list, only } => {
            if list {
                for c in criteria() {
                    match c.budget_secs {
                        0 => println!("{} {} (re-runs 1-7)", c.id, c.name),
                        b => println!("{} {} (budget {b}s)", c.id, c.name),
                    }
                }
                return Ok(true);
            }
            let out = out.unwrap_or_else(|| PathBuf::from("runs/accept"));
            let verdicts = run_suite(&out, &only, |v| println!("{}", v.line()));
            let failed: Vec<String> =
                verdicts.iter().filter(|v| !v.outcome.passed).map(|v| format!("{} ({})", v.id, v.name)).collect();
            if failed.is_empty() {
                println!("all {} criteria passed", verdicts.len());
                Ok(true)
            } else {
                eprintln!("failed criteria: {}", failed.join(", "));
                Ok(false)
            }
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
