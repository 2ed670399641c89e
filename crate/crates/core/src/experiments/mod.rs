//! Config-driven experiment runners. Every runner takes a fully specified
//! config and an output directory, writes plot-ready CSV plus the resolved
//! config (`resolved_config.toml`), and returns an in-memory report.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::analytic::{GaussianField, GaussianSpec, MixtureSpec};
use crate::data::{DomainDataset, Generator, Placement};
use crate::error::{Error, Result};
use crate::nn::checkpoint::load_checkpoint;
use crate::nn::nets::NetParams;
use crate::numeric::{LatentVector, Timestep};
use crate::sampler::{DomainTag, VelocityField};

pub mod acceptance;
pub mod angles;
pub mod fig4;
pub mod gradcheck;
pub mod theorem1;
pub mod theorem2;
pub mod training;
pub mod translate;

pub const RESOLVED_CONFIG: &str = "resolved_config.toml";

/// Parses a TOML document, rejecting unknown keys (every config type denies them).
pub fn parse_config<T: DeserializeOwned>(text: &str) -> Result<T> {
    Ok(toml::from_str(text)?)
}

pub fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    parse_config(&fs::read_to_string(path)?)
}

/// Creates `out` and writes the resolved config into it.
pub fn prepare_output<T: Serialize>(out: &Path, cfg: &T) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join(RESOLVED_CONFIG), toml::to_string(cfg)?)?;
    Ok(())
}

/// Writes into a freshly created file under `out`.
pub(crate) fn write_file(out: &Path, name: &str, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<PathBuf> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    let path = out.join(name);
    fs::write(&path, buf)?;
    Ok(path)
}

pub(crate) fn latent(v: &[f64], what: &str) -> Result<LatentVector> {
    LatentVector::new(v.to_vec()).map_err(|e| Error::Config(format!("{what}: {e}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianConfig {
    pub mu: Vec<f64>,
    pub sigma_sq: f64,
}

impl GaussianConfig {
    pub fn spec(&self) -> Result<GaussianSpec> {
        GaussianSpec::new(latent(&self.mu, "mu")?, self.sigma_sq).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentConfig {
    pub weight: f64,
    pub mu: Vec<f64>,
    pub sigma_sq: f64,
}

pub fn mixture_spec(components: &[ComponentConfig]) -> Result<MixtureSpec> {
    let comps = components
        .iter()
        .map(|c| Ok((c.weight, GaussianConfig { mu: c.mu.clone(), sigma_sq: c.sigma_sq }.spec()?)))
        .collect::<Result<Vec<_>>>()?;
    MixtureSpec::new(comps).map_err(|e| Error::Config(e.to_string()))
}

/// One synthetic domain, regenerated from `(generator, placement, seed, count)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub name: String,
    pub generator: Generator,
    #[serde(default)]
    pub placement: Placement,
    pub seed: u64,
    pub count: usize,
}

impl DomainConfig {
    pub fn build(&self) -> Result<DomainDataset> {
        DomainDataset::generate(self.name.clone(), self.generator, self.placement, self.seed, self.count)
    }
}

/// The fixed 8-Gaussians -> ring benchmark pair.
pub fn benchmark_domains() -> (DomainConfig, DomainConfig) {
    (
        DomainConfig {
            name: "eight_gaussians".into(),
            generator: Generator::EightGaussians { radius: 2.0, std: 0.15 },
            placement: Placement::default(),
            seed: 11,
            count: 2000,
        },
        DomainConfig {
            name: "ring".into(),
            generator: Generator::Ring { radius: 1.0, std: 0.05 },
            placement: Placement::default(),
            seed: 12,
            count: 2000,
        },
    )
}

/// Where a velocity field comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSource {
    Analytic { mu: Vec<f64>, sigma_sq: f64 },
    Checkpoint { path: PathBuf },
}

/// A resolved [`FieldSource`].
#[derive(Debug, Clone)]
pub enum Field {
    Analytic(GaussianField),
    Net(NetParams),
}

impl FieldSource {
    pub fn load(&self) -> Result<Field> {
        match self {
            FieldSource::Analytic { mu, sigma_sq } => {
                Ok(Field::Analytic(GaussianField(GaussianConfig { mu: mu.clone(), sigma_sq: *sigma_sq }.spec()?)))
            }
            FieldSource::Checkpoint { path } => Ok(Field::Net(load_checkpoint(path)?)),
        }
    }
}

impl Field {
    pub fn gaussian(&self) -> Option<&GaussianSpec> {
        match self {
            Field::Analytic(g) => Some(&g.0),
            Field::Net(_) => None,
        }
    }

    pub fn expect_dim(&self, d: usize) -> Result<()> {
        if self.dim() != d {
            return Err(Error::Config(format!("field has dimension {}, config expects {d}", self.dim())));
        }
        Ok(())
    }
}

impl VelocityField for Field {
    fn dim(&self) -> usize {
        match self {
            Field::Analytic(g) => g.dim(),
            Field::Net(n) => n.dim(),
        }
    }

    fn evaluate(&self, z: &LatentVector, t: Timestep, tag: DomainTag) -> Result<LatentVector> {
        match self {
            Field::Analytic(g) => g.evaluate(z, t, tag),
            Field::Net(n) => n.evaluate(z, t, tag),
        }
    }
}
