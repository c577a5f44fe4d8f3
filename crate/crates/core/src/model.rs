//! Assembles the full UniV2D network: shared hierarchical encoder, SCSM
//! saliency branch, MACR restoration branch, saliency-aware composite, and
//! the refinement stage producing the final image and mask.

use crate::config::{validate_config, ModelConfig};
use crate::encoder::EncoderDef;
use crate::error::Result;
use crate::macr::MacrDef;
use crate::nn::Fwd;
use crate::params::{ParamBuilder, ParamStore};
use crate::refinement::{composite_t, RefineDef};
use crate::scsm::ScsmDef;
use crate::tape::Var;
use crate::tensor::Tensor;

/// Tape handles for the network outputs.
#[derive(Clone, Copy, Debug)]
pub struct ModelOutput {
    /// Stage-1 restored image (coarse).
    pub restored_coarse: Var,
    /// Stage-1 saliency mask.
    pub mask_initial: Var,
    /// Refined restored image (the deliverable).
    pub restored_final: Var,
    /// Refined saliency mask (the deliverable).
    pub mask_final: Var,
    /// Composite fed to the refinement encoder (equals the raw input when
    /// saliency mask flow is disabled).
    pub composite: Var,
}

/// Architecture walk for one configuration. Building the struct fixes
/// every array name and shape; the same walk is replayed for parameter
/// initialization and for each forward pass.
#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub enc: EncoderDef,
    pub scsm: ScsmDef,
    pub macr: MacrDef,
    pub refine: RefineDef,
}

impl Model {
    pub fn new(cfg: &ModelConfig) -> Result<Model> {
        let cfg = validate_config(cfg.clone())?;
        Ok(Model {
            enc: EncoderDef::new("enc", &cfg),
            scsm: ScsmDef::new("scsm", &cfg),
            macr: MacrDef::new("macr", &cfg),
            refine: RefineDef::new("ref", &cfg),
            cfg,
        })
    }

    /// Fresh parameter store for this architecture, deterministic in
    /// `cfg.seed`.
    pub fn init_store(&self) -> ParamStore {
        let mut b = ParamBuilder::new(self.cfg.seed);
        self.enc.register(&mut b);
        self.scsm.register(&mut b);
        self.macr.register(&mut b);
        self.refine.register(&mut b, self.cfg.shared_refinement_encoder);
        b.store
    }

    /// Runs the full two-stage forward pass on a batch of same-sized image
    /// variables; returns one output set per sample.
    pub fn fwd(&self, f: &mut Fwd, images: &[Var]) -> Vec<ModelOutput> {
        let pyramid = self.enc.fwd(f, images);
        let (masks_initial, scsm_feats) = self.scsm.fwd(f, &pyramid);
        let mask_flows: Vec<Var> = if self.cfg.enable_smf {
            masks_initial.clone()
        } else {
            // Severed mask flow: the restoration branch sees a neutral
            // constant prior instead of the prediction.
            masks_initial
                .iter()
                .map(|&m| {
                    let (_, h, w) = f.tape.value(m).dims3();
                    f.tape.constant(Tensor::filled(&[1, h, w], 0.5))
                })
                .collect()
        };
        let (restored_coarse, macr_feats) = self.macr.fwd(f, &pyramid, &mask_flows);
        let composites: Vec<Var> = if self.cfg.enable_smf {
            images
                .iter()
                .enumerate()
                .map(|(i, &img)| composite_t(f, restored_coarse[i], masks_initial[i], img))
                .collect()
        } else {
            images.to_vec()
        };
        let (restored_final, masks_final) = self.refine.fwd(f, &composites, &scsm_feats, &macr_feats);
        (0..images.len())
            .map(|i| ModelOutput {
                restored_coarse: restored_coarse[i],
                mask_initial: masks_initial[i],
                restored_final: restored_final[i],
                mask_final: masks_final[i],
                composite: composites[i],
            })
            .collect()
    }
}

/// Initializes every parameter and buffer of the configured architecture.
/// Pure function of (config, seed): two calls yield bit-identical stores.
pub fn init_params(config: &ModelConfig) -> Result<ParamStore> {
    Ok(Model::new(config)?.init_store())
}
