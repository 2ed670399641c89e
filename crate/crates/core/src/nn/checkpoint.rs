//! Versioned text checkpoints for [`NetParams`].
//!
//! ```text
//! rflab-checkpoint v1
//! d 2
//! sizes 9 64 64 2
//! activation tanh
//! seed 42
//! params 4878
//! <one value per line, row-major, shortest round-trip decimal>
//! ```

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::mlp::{Activation, MlpShape};
use crate::nn::nets::{NetParams, Parameterized};

const MAGIC: &str = "rflab-checkpoint v1";

pub fn write_checkpoint<W: Write>(mut out: W, net: &NetParams) -> Result<()> {
    let shape = net.shape();
    writeln!(out, "{MAGIC}")?;
    writeln!(out, "d {}", net.dim())?;
    let sizes: Vec<String> = shape.sizes().iter().map(usize::to_string).collect();
    writeln!(out, "sizes {}", sizes.join(" "))?;
    writeln!(out, "activation {}", shape.activation().as_str())?;
    writeln!(out, "seed {}", net.seed())?;
    writeln!(out, "params {}", net.values().len())?;
    for v in net.values() {
        writeln!(out, "{v}")?;
    }
    Ok(())
}

fn header_field<'a>(line: Option<String>, key: &str, buf: &'a mut String) -> Result<&'a str> {
    *buf = line.ok_or_else(|| Error::Checkpoint(format!("missing `{key}` line")))?;
    buf.strip_prefix(key)
        .and_then(|rest| rest.strip_prefix(' '))
        .ok_or_else(|| Error::Checkpoint(format!("expected `{key} ...`, found {buf:?}")))
}

fn parse<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.trim().parse().map_err(|_| Error::Checkpoint(format!("bad {what}: {s:?}")))
}

pub fn read_checkpoint<R: Read>(input: R) -> Result<NetParams> {
    let mut lines = BufReader::new(input).lines();
    let mut next = || lines.next().transpose().map_err(Error::from);
    let magic = next()?.unwrap_or_default();
    if magic.trim() != MAGIC {
        return Err(Error::Checkpoint(format!("unsupported header {magic:?}")));
    }
    let mut buf = String::new();
    let d: usize = parse(header_field(next()?, "d", &mut buf)?, "d")?;
    let sizes: Vec<usize> = header_field(next()?, "sizes", &mut buf)?
        .split_whitespace()
        .map(|s| parse(s, "layer size"))
        .collect::<Result<_>>()?;
    let activation = Activation::parse(header_field(next()?, "activation", &mut buf)?.trim())?;
    let seed: u64 = parse(header_field(next()?, "seed", &mut buf)?, "seed")?;
    let count: usize = parse(header_field(next()?, "params", &mut buf)?, "parameter count")?;
    let mut values = Vec::with_capacity(count);
    while let Some(line) = next()? {
        if line.trim().is_empty() {
            continue;
        }
        let v: f64 = parse(&line, "parameter")?;
        if !v.is_finite() {
            return Err(Error::Checkpoint("non-finite parameter".into()));
        }
        values.push(v);
    }
    if values.len() != count {
        return Err(Error::Checkpoint(format!("header declares {count} parameters, found {}", values.len())));
    }
    let shape = MlpShape::new(sizes, activation).map_err(|e| Error::Checkpoint(e.to_string()))?;
    NetParams::from_parts(d, shape, values, seed)
}

pub fn save_checkpoint(path: &Path, net: &NetParams) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    write_checkpoint(&mut f, net)?;
    f.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<NetParams> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    read_checkpoint(fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let net = NetParams::new(3, &[7, 5], 12).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &net).unwrap();
        let back = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn header_is_self_describing() {
        let net = NetParams::new(2, &[4], 1).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &net).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let head: Vec<&str> = text.lines().take(6).collect();
        assert_eq!(head, ["rflab-checkpoint v1", "d 2", "sizes 9 4 2", "activation tanh", "seed 1", "params 62"]);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        assert!(read_checkpoint(&b"not a checkpoint\n"[..]).is_err());
        let net = NetParams::new(2, &[4], 1).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &net).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let truncated: String = text.lines().take(20).map(|l| format!("{l}\n")).collect();
        assert!(matches!(read_checkpoint(truncated.as_bytes()), Err(Error::Checkpoint(_))));
        let wrong_d = text.replacen("d 2", "d 3", 1);
        assert!(read_checkpoint(wrong_d.as_bytes()).is_err());
    }

    #[test]
    fn missing_file_is_explicit() {
        let err = load_checkpoint(Path::new("/nonexistent/pretrain.ckpt")).unwrap_err();
        assert!(matches!(err, Error::MissingFile(_)));
    }
}
