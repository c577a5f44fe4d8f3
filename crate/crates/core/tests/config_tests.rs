//! Model configuration validation, defaults, and the layered TOML file
//! config.

mod common;

use univ2d_core::{validate_config, Error, FileConfig, LossWeights, ModelConfig, TrainConfig};

#[test]
fn default_and_tiny_configs_are_valid() {
    let full = ModelConfig::default();
    assert_eq!(full.levels, 4);
    assert_eq!(full.channels, vec![32, 64, 128, 256]);
    assert!(full.enable_scsm && full.enable_macr && full.enable_smf);
    assert!(!full.shared_refinement_encoder);
    assert_eq!(full.seed, 0);
    assert_eq!(full.required_divisor(), 8);
    validate_config(full.clone()).unwrap();

    let tiny = ModelConfig::tiny(7);
    assert_eq!(tiny.levels, 2);
    assert_eq!(tiny.channels, vec![4, 8]);
    assert_eq!(tiny.seed, 7);
    assert_eq!(tiny.required_divisor(), 2);
    validate_config(tiny.clone()).unwrap();
}

#[test]
fn validation_rejects_bad_schedules() {
    let mut cfg = ModelConfig::tiny(0);
    cfg.levels = 1;
    cfg.channels = vec![4];
    assert!(matches!(validate_config(cfg), Err(Error::TooFewLevels(1))));

    let mut cfg = ModelConfig::tiny(0);
    cfg.channels = vec![4, 8, 16];
    match validate_config(cfg) {
        Err(Error::LevelMismatch { levels, got }) => {
            assert_eq!((levels, got), (2, 3));
        }
        other => panic!("expected LevelMismatch, got {other:?}"),
    }

    let mut cfg = ModelConfig::tiny(0);
    cfg.channels = vec![4, 9];
    match validate_config(cfg) {
        Err(Error::OddChannel { level, channel }) => {
            assert_eq!((level, channel), (1, 9));
        }
        other => panic!("expected OddChannel, got {other:?}"),
    }

    // A zero channel count reports as the odd-channel violation.
    let mut cfg = ModelConfig::tiny(0);
    cfg.channels = vec![0, 8];
    assert!(matches!(validate_config(cfg), Err(Error::OddChannel { level: 0, channel: 0 })));

    // Equal adjacent channels are not strictly increasing.
    let mut cfg = ModelConfig::tiny(0);
    cfg.channels = vec![8, 8];
    match validate_config(cfg) {
        Err(Error::NonIncreasingChannels { level, channel }) => {
            assert_eq!((level, channel), (1, 8));
        }
        other => panic!("expected NonIncreasingChannels, got {other:?}"),
    }

    let mut cfg = ModelConfig::default();
    cfg.channels = vec![32, 64, 48, 256];
    assert!(matches!(
        validate_config(cfg),
        Err(Error::NonIncreasingChannels { level: 2, channel: 48 })
    ));
}

#[test]
fn loss_weights_default_alpha() {
    assert_eq!(LossWeights::default().alpha, 0.5);
}

#[test]
fn file_config_layers_over_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.toml");
    std::fs::write(
        &path,
        r#"
levels = 2
channels = [4, 8]
enable_scsm = true
enable_macr = false
enable_smf = true
shared_refinement_encoder = true
seed = 42
alpha = 0.25
lr = 0.002
batch_size = 4
patch = 64
epochs = 3
log_every = 5
clip_norm = 2.5
augment = false
"#,
    )
    .unwrap();
    let fc = FileConfig::load(&path).unwrap();

    let mc = fc.model_config();
    assert_eq!(mc.levels, 2);
    assert_eq!(mc.channels, vec![4, 8]);
    assert!(mc.enable_scsm && !mc.enable_macr && mc.enable_smf);
    assert!(mc.shared_refinement_encoder);
    assert_eq!(mc.seed, 42);
    validate_config(mc.clone()).unwrap();

    assert_eq!(fc.loss_weights().alpha, 0.25);

    let tc = fc.train_config();
    assert_eq!(tc.lr, 0.002);
    assert_eq!(tc.batch_size, 4);
    assert_eq!(tc.patch, 64);
    assert_eq!(tc.epochs, 3);
    assert_eq!(tc.log_every, 5);
    assert_eq!(tc.clip_norm, Some(2.5));
    assert!(!tc.augment);
}

#[test]
fn empty_file_config_yields_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.toml");
    std::fs::write(&path, "").unwrap();
    let fc = FileConfig::load(&path).unwrap();

    let mc = fc.model_config();
    assert_eq!(mc, ModelConfig::default());
    assert_eq!(fc.loss_weights().alpha, LossWeights::default().alpha);

    let tc = fc.train_config();
    let defaults = TrainConfig::default();
    assert_eq!(tc.lr, defaults.lr);
    assert_eq!(tc.batch_size, defaults.batch_size);
    assert_eq!(tc.patch, defaults.patch);
    assert_eq!(tc.epochs, defaults.epochs);
    assert_eq!(tc.clip_norm, defaults.clip_norm);
    assert!(tc.augment);
}

#[test]
fn non_positive_clip_norm_disables_clipping() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("clip.toml");
    std::fs::write(&path, "clip_norm = 0.0\n").unwrap();
    let fc = FileConfig::load(&path).unwrap();
    assert_eq!(fc.train_config().clip_norm, None);
}

#[test]
fn malformed_and_missing_config_files_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "levels = \"two\"\n").unwrap();
    assert!(matches!(FileConfig::load(&bad), Err(Error::Config { .. })));

    let missing = dir.path().join("nope.toml");
    assert!(matches!(FileConfig::load(&missing), Err(Error::Io { .. })));
}

#[test]
fn model_config_serde_round_trip() {
    // Checkpoints persist the config as JSON; the round trip must be exact.
    let mut cfg = ModelConfig::tiny(9);
    cfg.enable_macr = false;
    cfg.shared_refinement_encoder = true;
    let json = serde_json::to_string(&cfg).unwrap();
    let back: ModelConfig = serde_json::from_str(&json).unwrap();
    assert_eq!(back, cfg);

    // shared_refinement_encoder is optional on deserialization.
    let legacy: ModelConfig = serde_json::from_str(
        r#"{"levels":2,"channels":[4,8],"enable_scsm":true,"enable_macr":true,"enable_smf":true,"seed":3}"#,
    )
    .unwrap();
    assert!(!legacy.shared_refinement_encoder);
    assert_eq!(legacy.seed, 3);
}
