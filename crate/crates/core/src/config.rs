//! Model configuration, validation, and loss weights.

use std::path::Path;

use crate::error::{Error, Result};

/// Architecture configuration: pyramid depth, channel schedule, and the
/// three ablation toggles.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    /// Number of pyramid levels (level 0 is full resolution).
    pub levels: usize,
    /// Channel count per level; strictly increasing, every entry even.
    pub channels: Vec<usize>,
    /// Enables the SCSM saliency decoder (false = plain conv head).
    pub enable_scsm: bool,
    /// Enables mask-aware modulation in the restoration decoder.
    pub enable_macr: bool,
    /// Enables saliency mask flow: the predicted mask feeds MACR and the
    /// refinement composite. When false, MACR sees a constant 0.5 mask and
    /// the refinement stage re-encodes the raw input.
    pub enable_smf: bool,
    /// Share encoder weights between the first stage and the refinement
    /// stage instead of training a separate refinement encoder.
    #[serde(default)]
    pub shared_refinement_encoder: bool,
    /// Seed for parameter initialization and training-time shuffling.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            levels: 4,
            channels: vec![32, 64, 128, 256],
            enable_scsm: true,
            enable_macr: true,
            enable_smf: true,
            shared_refinement_encoder: false,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// The smallest config the test suites use for gradient checks.
    pub fn tiny(seed: u64) -> Self {
        ModelConfig {
            levels: 2,
            channels: vec![4, 8],
            seed,
            ..ModelConfig::default()
        }
    }

    /// Spatial divisibility required of inputs: 2^(levels-1).
    pub fn required_divisor(&self) -> usize {
        1 << (self.levels - 1)
    }
}

/// Checks the config invariants and returns the config unchanged.
pub fn validate_config(config: ModelConfig) -> Result<ModelConfig> {
    if config.levels < 2 {
        return Err(Error::TooFewLevels(config.levels));
    }
    if config.channels.len() != config.levels {
        return Err(Error::LevelMismatch {
            levels: config.levels,
            got: config.channels.len(),
        });
    }
    for (level, &c) in config.channels.iter().enumerate() {
        if c == 0 || c % 2 != 0 {
            return Err(Error::OddChannel { level, channel: c });
        }
        if level > 0 && c <= config.channels[level - 1] {
            return Err(Error::NonIncreasingChannels { level, channel: c });
        }
    }
    Ok(config)
}

/// Loss weighting; `alpha` scales the two mask losses.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { alpha: 0.5 }
    }
}

/// Flat key-value config file (TOML). Model keys are required where listed;
/// training keys are optional and fall back to [`crate::pipeline::TrainConfig`]
/// defaults.
#[derive(Clone, Debug, Default, serde::Deserialize)]
pub struct FileConfig {
    pub levels: Option<usize>,
    pub channels: Option<Vec<usize>>,
    pub enable_scsm: Option<bool>,
    pub enable_macr: Option<bool>,
    pub enable_smf: Option<bool>,
    pub shared_refinement_encoder: Option<bool>,
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub patch: Option<usize>,
    pub epochs: Option<usize>,
    pub log_every: Option<u64>,
    pub clip_norm: Option<f64>,
    pub augment: Option<bool>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<FileConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    /// Model config with file values layered over the defaults.
    pub fn model_config(&self) -> ModelConfig {
        let mut cfg = ModelConfig::default();
        if let Some(l) = self.levels {
            cfg.levels = l;
        }
        if let Some(ref c) = self.channels {
            cfg.channels = c.clone();
        }
        if let Some(v) = self.enable_scsm {
            cfg.enable_scsm = v;
        }
        if let Some(v) = self.enable_macr {
            cfg.enable_macr = v;
        }
        if let Some(v) = self.enable_smf {
            cfg.enable_smf = v;
        }
        if let Some(v) = self.shared_refinement_encoder {
            cfg.shared_refinement_encoder = v;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha.unwrap_or(0.5),
        }
    }
}
