//! Binary container for named f64 arrays plus a JSON metadata header.
//! Used by training checkpoints and by loadable feature-extractor weights.
//!
//! Layout: magic "UV2D", u32 LE version, u64 LE header length, the JSON
//! header, then every array's elements as little-endian f64 in header
//! order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamKind, ParamStore};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"UV2D";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: serde_json::Value,
    arrays: Vec<ArrayEntry>,
}

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    kind: String,
    shape: Vec<usize>,
}

/// In-memory form of a container file.
#[derive(Debug)]
pub struct Archive {
    /// Container flavor tag, e.g. "checkpoint" or "perceptual-weights".
    pub kind: String,
    pub meta: serde_json::Value,
    pub arrays: ParamStore,
}

fn kind_str(k: ParamKind) -> &'static str {
    match k {
        ParamKind::Weight => "weight",
        ParamKind::Bias => "bias",
        ParamKind::Gamma => "gamma",
        ParamKind::Beta => "beta",
        ParamKind::RunningMean => "running_mean",
        ParamKind::RunningVar => "running_var",
    }
}

fn kind_parse(s: &str) -> Option<ParamKind> {
    Some(match s {
        "weight" => ParamKind::Weight,
        "bias" => ParamKind::Bias,
        "gamma" => ParamKind::Gamma,
        "beta" => ParamKind::Beta,
        "running_mean" => ParamKind::RunningMean,
        "running_var" => ParamKind::RunningVar,
        _ => return None,
    })
}

/// Writes a container. Array order follows the store's insertion order, so
/// a round-trip preserves it.
pub fn write_archive(path: &Path, kind: &str, meta: serde_json::Value, arrays: &ParamStore) -> Result<()> {
    let header = Header {
        kind: kind.to_string(),
        meta,
        arrays: arrays
            .iter()
            .map(|(name, p)| ArrayEntry {
                name: name.clone(),
                kind: kind_str(p.kind).to_string(),
                shape: p.tensor.shape().to_vec(),
            })
            .collect(),
    };
    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| Error::checkpoint(path, format!("header encode: {e}")))?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(header_bytes.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&header_bytes).map_err(io)?;
    for (_, p) in arrays.iter() {
        for v in p.tensor.data() {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)?;
    Ok(())
}

/// Reads a container written by [`write_archive`].
pub fn read_archive(path: &Path) -> Result<Archive> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let bad = |reason: String| Error::checkpoint(path, reason);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != MAGIC {
        return Err(bad(format!("bad magic {magic:?}, expected {MAGIC:?}")));
    }
    let mut v4 = [0u8; 4];
    r.read_exact(&mut v4).map_err(|e| Error::io(path, e))?;
    let version = u32::from_le_bytes(v4);
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let mut l8 = [0u8; 8];
    r.read_exact(&mut l8).map_err(|e| Error::io(path, e))?;
    let header_len = u64::from_le_bytes(l8) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes).map_err(|e| Error::io(path, e))?;
    let header: Header =
        serde_json::from_slice(&header_bytes).map_err(|e| bad(format!("header decode: {e}")))?;

    let mut arrays = ParamStore::new();
    for entry in &header.arrays {
        let kind = kind_parse(&entry.kind)
            .ok_or_else(|| bad(format!("unknown array kind {:?} for {}", entry.kind, entry.name)))?;
        let numel: usize = entry.shape.iter().product();
        let mut data = vec![0f64; numel];
        let mut buf = [0u8; 8];
        for slot in data.iter_mut() {
            r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
            *slot = f64::from_le_bytes(buf);
        }
        arrays.insert(entry.name.clone(), Tensor::from_vec(&entry.shape, data), kind);
    }
    Ok(Archive {
        kind: header.kind,
        meta: header.meta,
        arrays,
    })
}

impl Archive {
    /// Fails unless the container carries the expected flavor tag.
    pub fn expect_kind(&self, path: &Path, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::checkpoint(
                path,
                format!("container kind {:?}, expected {kind:?}", self.kind),
            ));
        }
        Ok(())
    }
}
