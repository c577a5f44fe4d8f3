//! Training checkpoints: one container file holding the model parameters
//! and buffers, the frozen extractor, the optimizer moments, the config,
//! and the step/epoch counters. A round-trip restores training and
//! evaluation exactly.

use std::path::Path;

use indexmap::IndexMap;

use crate::archive::{read_archive, write_archive};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::perceptual::PerceptualExtractor;
use crate::tensor::Tensor;

const FILE_KIND: &str = "checkpoint";
const OPT_M: &str = "opt.m.";
const OPT_V: &str = "opt.v.";
const EXTRACTOR: &str = "phi.";

/// Everything a checkpoint carries.
#[derive(Debug)]
pub struct CheckpointData {
    pub config: ModelConfig,
    pub step: u64,
    pub epoch: u64,
    pub params: ParamStore,
    pub extractor: PerceptualExtractor,
    pub adam_m: IndexMap<String, Tensor>,
    pub adam_v: IndexMap<String, Tensor>,
}

/// Writes a checkpoint. Model arrays keep their names; optimizer moments
/// and extractor arrays are stored under reserved prefixes that no model
/// array uses.
pub fn save_checkpoint(path: &Path, data: &CheckpointData) -> Result<()> {
    let mut arrays = ParamStore::new();
    for (name, p) in data.params.iter() {
        arrays.insert(name.clone(), p.tensor.clone(), p.kind);
    }
    for (name, t) in &data.adam_m {
        arrays.insert(format!("{OPT_M}{name}"), t.clone(), data.params.kind(name));
    }
    for (name, t) in &data.adam_v {
        arrays.insert(format!("{OPT_V}{name}"), t.clone(), data.params.kind(name));
    }
    for (name, p) in data.extractor.store().iter() {
        arrays.insert(format!("{EXTRACTOR}{name}"), p.tensor.clone(), p.kind);
    }
    let meta = serde_json::json!({
        "config": data.config,
        "step": data.step,
        "epoch": data.epoch,
        "extractor_stages": data.extractor.stages(),
    });
    write_archive(path, FILE_KIND, meta, &arrays)
}

/// Reads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<CheckpointData> {
    let archive = read_archive(path)?;
    archive.expect_kind(path, FILE_KIND)?;
    let bad = |reason: String| Error::checkpoint(path, reason);

    let config: ModelConfig = serde_json::from_value(
        archive.meta.get("config").cloned().ok_or_else(|| bad("meta lacks \"config\"".into()))?,
    )
    .map_err(|e| bad(format!("bad config: {e}")))?;
    let step = archive
        .meta
        .get("step")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| bad("meta lacks \"step\"".into()))?;
    let epoch = archive
        .meta
        .get("epoch")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| bad("meta lacks \"epoch\"".into()))?;

    let mut params = ParamStore::new();
    let mut extractor_store = ParamStore::new();
    let mut adam_m = IndexMap::new();
    let mut adam_v = IndexMap::new();
    for (name, p) in archive.arrays.iter() {
        if let Some(rest) = name.strip_prefix(OPT_M) {
            adam_m.insert(rest.to_string(), p.tensor.clone());
        } else if let Some(rest) = name.strip_prefix(OPT_V) {
            adam_v.insert(rest.to_string(), p.tensor.clone());
        } else if let Some(rest) = name.strip_prefix(EXTRACTOR) {
            extractor_store.insert(rest.to_string(), p.tensor.clone(), p.kind);
        } else {
            params.insert(name.clone(), p.tensor.clone(), p.kind);
        }
    }
    let extractor = PerceptualExtractor::from_archive_parts(path, &archive, extractor_store)?;

    // The moments must mirror the trainable parameters exactly.
    for (name, p) in params.iter() {
        if !p.kind.trainable() {
            continue;
        }
        for (map, tag) in [(&adam_m, "first"), (&adam_v, "second")] {
            match map.get(name) {
                None => return Err(bad(format!("missing {tag}-moment array for {name:?}"))),
                Some(t) if t.shape() != p.tensor.shape() => {
                    return Err(bad(format!("{tag}-moment shape mismatch for {name:?}")))
                }
                _ => {}
            }
        }
    }

    Ok(CheckpointData {
        config,
        step,
        epoch,
        params,
        extractor,
        adam_m,
        adam_v,
    })
}
