//! UniV2D core: a config-scalable dual-branch network for joint underwater
//! image restoration and salient object detection, with its training,
//! evaluation, and inference machinery.
//!
//! The crate is organized bottom-up: dense tensors and convolution kernels,
//! a reverse-mode autodiff tape, parameter stores, the network blocks
//! (encoder, SCSM saliency decoder, MACR restoration decoder, refinement
//! stage with cross-level modulation), losses and metrics with documented
//! reference semantics, synthetic data, checkpoints, and the train / eval /
//! infer pipeline the CLI drives.

pub mod archive;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod kernels;
pub mod losses;
pub mod macr;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod params;
pub mod perceptual;
pub mod pipeline;
pub mod refinement;
pub mod scsm;
pub mod tape;
pub mod tensor;

pub use config::{validate_config, FileConfig, LossWeights, ModelConfig};
pub use data::Sample;
pub use error::{Error, Result};
pub use losses::LossBreakdown;
pub use metrics::MetricReport;
pub use model::{init_params, Model};
pub use params::ParamStore;
pub use perceptual::PerceptualExtractor;
pub use pipeline::{evaluate, forward_full, infer, train_loop, train_step, ForwardOutput, TrainConfig, TrainState};
pub use tensor::{Image, SaliencyMask, Tensor};
