//! Batch translation of latents read from CSV.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::LatentVector;
use crate::sampler::{DomainTag, VelocityField};
use crate::translation::{translate, InversionConfig, Strategy};

use super::{prepare_output, write_file, FieldSource};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranslateConfig {
    pub field: FieldSource,
    pub strategy: Strategy,
    #[serde(default = "default_t_inv")]
    pub t_inv: f64,
    #[serde(default = "default_tag")]
    pub tag: DomainTag,
    /// CSV with a header row and one latent per row.
    pub input: PathBuf,
}

fn default_t_inv() -> f64 {
    0.5
}

fn default_tag() -> DomainTag {
    DomainTag::A2b
}

/// Header and rows of a numeric CSV file.
pub fn read_latents<R: Read>(input: R) -> Result<(Vec<String>, Vec<LatentVector>)> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let v = rec
            .iter()
            .map(|s| s.trim().parse::<f64>().map_err(|_| Error::Config(format!("row {i}: {s:?} is not a number"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(LatentVector::new(v)?);
    }
    Ok((header, rows))
}

pub fn write_latents<W: Write>(out: W, header: &[String], rows: &[LatentVector]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.as_slice().iter().map(f64::to_string))?;
    }
    w.flush()?;
    Ok(())
}

pub fn run_to(cfg: &TranslateConfig, out: &Path) -> Result<Vec<LatentVector>> {
    if !cfg.input.exists() {
        return Err(Error::MissingFile(cfg.input.clone()));
    }
    let field = cfg.field.load()?;
    let inv = InversionConfig::new(cfg.t_inv).map_err(|e| Error::Config(e.to_string()))?;
    let (header, rows) = read_latents(fs::File::open(&cfg.input)?)?;
    let translated = rows
        .iter()
        .map(|z| {
            z.check_dim(field.dim())?;
            translate(&field, cfg.strategy, z, inv, cfg.tag)
        })
        .collect::<Result<Vec<_>>>()?;
    prepare_output(out, cfg)?;
    write_file(out, "translated.csv", |b| write_latents(b, &header, &translated))?;
    Ok(translated)
}
