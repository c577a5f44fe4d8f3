//! Frozen convolutional feature extractor for the perceptual loss: a
//! three-stage stack with taps after each stage. The default build draws
//! its weights from a fixed seed; a loader substitutes arrays from a
//! weight file (for example features exported from a pretrained
//! classifier).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::archive::{read_archive, write_archive, Archive};
use crate::error::{Error, Result};
use crate::params::{ParamBuilder, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::{check_image, Image, Tensor};

/// Seed for the default random extractor. Fixed so every default-built
/// extractor is identical across runs and machines.
pub const DEFAULT_EXTRACTOR_SEED: u64 = 0x5ca1_ab1e;

const FILE_KIND: &str = "perceptual-weights";

/// One stage of the stack: a 3x3 padded convolution (then ReLU).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct StageSpec {
    pub name: String,
    pub stride: usize,
}

/// The frozen stack. Parameters live in a store separate from the model's
/// and are bound to tapes as constants, so the optimizer never sees them.
#[derive(Clone, Debug)]
pub struct PerceptualExtractor {
    stages: Vec<StageSpec>,
    store: ParamStore,
}

impl PerceptualExtractor {
    /// Default architecture: widths 16/32/64, stride 2 between stages,
    /// weights drawn from `seed`.
    pub fn seeded(seed: u64) -> Self {
        let widths = [16usize, 32, 64];
        let mut b = ParamBuilder::new(seed);
        let mut stages = Vec::new();
        let mut cin = 3usize;
        for (i, &cout) in widths.iter().enumerate() {
            let name = format!("stage{}", i + 1);
            let stride = if i == 0 { 1 } else { 2 };
            b.conv_weight(&format!("{name}.w"), cout, cin, 3);
            b.conv_bias(&format!("{name}.b"), cout);
            stages.push(StageSpec { name, stride });
            cin = cout;
        }
        PerceptualExtractor { stages, store: b.store }
    }

    /// Builds the extractor from explicit stage specs and arrays (the
    /// weight-file path). Validates that the arrays chain together.
    pub fn from_parts(path: &Path, stages: Vec<StageSpec>, store: ParamStore) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::checkpoint(path, "weight file lists no stages"));
        }
        let mut cin = 3usize;
        for s in &stages {
            let wname = format!("{}.w", s.name);
            let bname = format!("{}.b", s.name);
            for n in [&wname, &bname] {
                if !store.contains(n) {
                    return Err(Error::checkpoint(path, format!("missing array {n:?}")));
                }
            }
            let w = store.get(&wname);
            if w.shape().len() != 4 || w.shape()[1] != cin || w.shape()[2] != w.shape()[3] {
                return Err(Error::checkpoint(
                    path,
                    format!(
                        "array {wname:?} has shape {:?}, expected [out,{cin},k,k]",
                        w.shape()
                    ),
                ));
            }
            let cout = w.shape()[0];
            if store.get(&bname).shape() != [cout] {
                return Err(Error::checkpoint(path, format!("array {bname:?} must be [{cout}]")));
            }
            if s.stride == 0 {
                return Err(Error::checkpoint(path, format!("stage {:?} has stride 0", s.name)));
            }
            cin = cout;
        }
        Ok(PerceptualExtractor { stages, store })
    }

    /// Loads a weight file written by [`PerceptualExtractor::save`].
    pub fn load(path: &Path) -> Result<Self> {
        let archive = read_archive(path)?;
        archive.expect_kind(path, FILE_KIND)?;
        let stages: Vec<StageSpec> = serde_json::from_value(
            archive
                .meta
                .get("stages")
                .cloned()
                .ok_or_else(|| Error::checkpoint(path, "meta lacks \"stages\""))?,
        )
        .map_err(|e| Error::checkpoint(path, format!("bad stage manifest: {e}")))?;
        PerceptualExtractor::from_parts(path, stages, archive.arrays)
    }

    /// Writes the stage manifest and arrays as a weight file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::json!({ "stages": self.stages });
        write_archive(path, FILE_KIND, meta, &self.store)
    }

    pub fn stages(&self) -> &[StageSpec] {
        &self.stages
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    /// Rebuilds from arrays already carried inside another container (the
    /// checkpoint case); `meta` is the same manifest `save` writes.
    pub fn from_archive_parts(path: &Path, archive: &Archive, store: ParamStore) -> Result<Self> {
        let stages: Vec<StageSpec> = serde_json::from_value(
            archive
                .meta
                .get("extractor_stages")
                .cloned()
                .ok_or_else(|| Error::checkpoint(path, "meta lacks \"extractor_stages\""))?,
        )
        .map_err(|e| Error::checkpoint(path, format!("bad stage manifest: {e}")))?;
        PerceptualExtractor::from_parts(path, stages, store)
    }

    /// Emits the tap variables on an existing tape. Weights enter as
    /// constants: gradients flow to `image` but never to the stack.
    pub fn features_t(&self, tape: &mut Tape, image: Var) -> Vec<Var> {
        let mut x = image;
        let mut taps = Vec::with_capacity(self.stages.len());
        for s in &self.stages {
            let w = tape.constant(self.store.get(&format!("{}.w", s.name)).clone());
            let b = tape.constant(self.store.get(&format!("{}.b", s.name)).clone());
            let k = self.store.get(&format!("{}.w", s.name)).shape()[2];
            let c = tape.conv2d(x, w, Some(b), s.stride, k / 2, false);
            x = tape.relu(c);
            taps.push(x);
        }
        taps
    }

    /// Tap activations for a plain image.
    pub fn features(&self, image: &Image) -> Result<Vec<Tensor>> {
        check_image(image, "perceptual features")?;
        let mut tape = Tape::new();
        let img = tape.constant(image.clone());
        let taps = self.features_t(&mut tape, img);
        Ok(taps.into_iter().map(|t| tape.value(t).clone()).collect())
    }

    /// Number of scalar parameters across all stages.
    pub fn numel(&self) -> usize {
        self.store.numel()
    }
}

impl Default for PerceptualExtractor {
    fn default() -> Self {
        PerceptualExtractor::seeded(DEFAULT_EXTRACTOR_SEED)
    }
}

/// Zero-weight extractor of the same architecture (its perceptual loss is
/// identically zero). Useful for isolating other loss terms in tests.
pub fn zero_extractor() -> PerceptualExtractor {
    let base = PerceptualExtractor::default();
    let mut store = ParamStore::new();
    for (name, p) in base.store.iter() {
        store.insert(name.clone(), Tensor::zeros(p.tensor.shape()), p.kind);
    }
    PerceptualExtractor {
        stages: base.stages,
        store,
    }
}
