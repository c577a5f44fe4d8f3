//! Error types shared across the library.

use std::path::PathBuf;

/// Library-wide error type. Every variant renders as a one-line diagnostic,
/// which is what the CLI prints on failure.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A channel count is odd; MACR needs an even split at every level.
    #[error("channel count {channel} at level {level} is odd; every level must be even")]
    OddChannel { level: usize, channel: usize },

    /// The channel list length does not match the level count.
    #[error("config declares {levels} levels but {got} channel entries")]
    LevelMismatch { levels: usize, got: usize },

    /// The channel schedule is not strictly increasing.
    #[error("channel schedule must be strictly increasing; channels[{level}]={channel} does not increase")]
    NonIncreasingChannels { level: usize, channel: usize },

    /// Fewer than two pyramid levels.
    #[error("config needs at least 2 levels, got {0}")]
    TooFewLevels(usize),

    /// Array shape incompatible with the operation's contract.
    #[error("shape error in {context}: expected {expected}, got {got}")]
    Shape {
        context: String,
        expected: String,
        got: String,
    },

    /// Input too small for a windowed operation (for example SSIM's 11x11 window).
    #[error("input too small for {context}: minimum dimension {min_dim}, got {got}")]
    TooSmall {
        context: String,
        min_dim: usize,
        got: usize,
    },

    /// A dataset file exists in one folder but its pair is missing in another.
    #[error("dataset pair incomplete: `{id}` present in `{present_in}` but missing in `{missing_in}`")]
    MissingPair {
        id: String,
        present_in: String,
        missing_in: String,
    },

    /// An image file could not be decoded.
    #[error("failed to decode `{path}`: {reason}")]
    Decode { path: PathBuf, reason: String },

    /// The training loss became NaN or infinite.
    #[error("non-finite loss at step {step}: mask_pre={mask_pre} mask_fin={mask_fin} content={content} perceptual={perceptual}")]
    NonFiniteLoss {
        step: u64,
        mask_pre: f64,
        mask_fin: f64,
        content: f64,
        perceptual: f64,
    },

    /// A checkpoint file is malformed or from an unsupported version.
    #[error("invalid checkpoint `{path}`: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    /// A requested patch size does not fit the sample.
    #[error("patch size {patch} exceeds image size {h}x{w}")]
    PatchTooLarge { patch: usize, h: usize, w: usize },

    /// Malformed config file.
    #[error("invalid config `{path}`: {reason}")]
    Config { path: PathBuf, reason: String },

    #[error("io error on `{path}`: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Shorthand for shape mismatches.
    pub fn shape(context: impl Into<String>, expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.into(),
            got: got.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Shorthand for malformed checkpoint or weight containers.
    pub fn checkpoint(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Checkpoint {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Shorthand for image decode failures.
    pub fn decode(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Decode {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
