//! Checkpoint files: a text header followed by raw parameters.
//!
//! ```text
//! PFCK 1
//! config <key>=<value>      (one line per model key)
//! param <name> <rows> <cols> (one line per tensor, in layout order)
//! data
//! <little-endian f64 values of every tensor, row-major, in header order>
//! ```

use std::fs;
use std::path::Path;

use super::config::ModelConfig;
use super::params::ModelParams;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

const MAGIC: &str = "PFCK 1";

pub fn write_checkpoint(config: &ModelConfig, params: &ModelParams) -> Vec<u8> {
    let mut header = format!("{MAGIC}\n");
    for (k, v) in config.entries() {
        header.push_str(&format!("config {k}={v}\n"));
    }
    for (n, t) in params.names().iter().zip(params.tensors()) {
        header.push_str(&format!("param {n} {} {}\n", t.rows(), t.cols()));
    }
    header.push_str("data\n");
    let mut out = header.into_bytes();
    out.reserve(params.num_scalars() * 8);
    for t in params.tensors() {
        for v in t.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<(ModelConfig, ModelParams)> {
    let mut config = ModelConfig::default();
    let mut shapes: Vec<(String, usize, usize)> = Vec::new();
    let mut pos = 0;
    let mut line_no = 0;
    let mut seen_magic = false;
    loop {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::parse(line_no, "header ends before `data`"))?;
        line_no += 1;
        let line = std::str::from_utf8(&bytes[pos..pos + end])
            .map_err(|_| Error::parse(line_no, "header is not UTF-8"))?;
        pos += end + 1;
        if !seen_magic {
            if line != MAGIC {
                return Err(Error::parse(line_no, format!("expected `{MAGIC}`")));
            }
            seen_magic = true;
            continue;
        }
        if line == "data" {
            break;
        }
        if let Some(kv) = line.strip_prefix("config ") {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::parse(line_no, "config line without `=`"))?;
            config
                .set(k, v)
                .map_err(|e| Error::parse(line_no, e.to_string()))?;
        } else if let Some(p) = line.strip_prefix("param ") {
            let toks: Vec<&str> = p.split_whitespace().collect();
            let [name, r, c] = toks[..] else {
                return Err(Error::parse(
                    line_no,
                    "expected `param <name> <rows> <cols>`",
                ));
            };
            let dim = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| Error::parse(line_no, format!("bad dimension {s:?}")))
            };
            shapes.push((name.to_string(), dim(r)?, dim(c)?));
        } else {
            return Err(Error::parse(
                line_no,
                format!("unrecognized header line {line:?}"),
            ));
        }
    }
    config.validate()?;
    let expected: usize = shapes.iter().map(|(_, r, c)| r * c * 8).sum();
    let data = &bytes[pos..];
    if data.len() != expected {
        return Err(Error::invalid(format!(
            "checkpoint data has {} bytes, header declares {expected}",
            data.len()
        )));
    }
    let mut chunks = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    let named = shapes
        .into_iter()
        .map(|(n, r, c)| {
            let values: Vec<f64> = chunks.by_ref().take(r * c).collect();
            Ok((n, Matrix::from_vec(r, c, values)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let params = ModelParams::from_named(named)?;
    params.check(&config)?;
    Ok((config, params))
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    config: &ModelConfig,
    params: &ModelParams,
) -> Result<()> {
    fs::write(path, write_checkpoint(config, params))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelConfig, ModelParams)> {
    read_checkpoint(&fs::read(path)?)
}
