//! Encoder pyramid shapes, divisibility preconditions, and determinism.

mod common;

use common::rand_tensor;
use univ2d_core::encoder::{check_divisible, encode};
use univ2d_core::params::ParamKind;
use univ2d_core::{init_params, Error, ModelConfig, Tensor};

#[test]
fn default_config_pyramid_shape_schedule() {
    let cfg = ModelConfig::default();
    let store = init_params(&cfg).unwrap();
    let img = rand_tensor(&[3, 64, 64], 1, 0.0, 1.0);
    let pyr = encode(&img, &store, &cfg, "enc").unwrap();
    assert_eq!(pyr.len(), 4);
    assert_eq!(pyr[0].shape(), &[32, 64, 64]);
    assert_eq!(pyr[1].shape(), &[64, 32, 32]);
    assert_eq!(pyr[2].shape(), &[128, 16, 16]);
    assert_eq!(pyr[3].shape(), &[256, 8, 8]);
    for (l, t) in pyr.iter().enumerate() {
        assert!(t.data().iter().all(|v| v.is_finite()), "level {l} must be finite");
    }
}

#[test]
fn tiny_config_pyramid_and_determinism() {
    let cfg = ModelConfig::tiny(5);
    let store = init_params(&cfg).unwrap();
    let img = rand_tensor(&[3, 16, 16], 2, 0.0, 1.0);
    let a = encode(&img, &store, &cfg, "enc").unwrap();
    assert_eq!(a[0].shape(), &[4, 16, 16]);
    assert_eq!(a[1].shape(), &[8, 8, 8]);

    let b = encode(&img, &store, &cfg, "enc").unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.data(), y.data(), "encode must be deterministic");
    }
}

#[test]
fn divisibility_and_channel_preconditions() {
    let cfg = ModelConfig::default();
    let ok = Tensor::zeros(&[3, 64, 64]);
    check_divisible(&ok, &cfg).unwrap();

    // 64x60: width not divisible by 2^(levels-1) = 8.
    let bad_w = Tensor::zeros(&[3, 64, 60]);
    assert!(matches!(check_divisible(&bad_w, &cfg), Err(Error::Shape { .. })));

    let tiny = ModelConfig::tiny(0);
    let odd = Tensor::zeros(&[3, 15, 16]);
    assert!(matches!(check_divisible(&odd, &tiny), Err(Error::Shape { .. })));

    let gray = Tensor::zeros(&[1, 64, 64]);
    assert!(matches!(check_divisible(&gray, &cfg), Err(Error::Shape { .. })));

    let store = init_params(&tiny).unwrap();
    let err = encode(&Tensor::zeros(&[3, 15, 16]), &store, &tiny, "enc");
    assert!(matches!(err, Err(Error::Shape { .. })));
}

#[test]
fn zeroed_store_produces_zero_pyramid() {
    // With all weights, biases, and batch-norm affine terms zeroed, every
    // convolution and normalization outputs zero, so the pyramid is zero.
    let cfg = ModelConfig::tiny(3);
    let mut store = init_params(&cfg).unwrap();
    let names: Vec<String> = store.iter().map(|(n, _)| n.clone()).collect();
    for n in names {
        let t = store.get_mut(&n);
        for v in t.data_mut() {
            *v = 0.0;
        }
    }
    let img = rand_tensor(&[3, 16, 16], 4, 0.0, 1.0);
    let pyr = encode(&img, &store, &cfg, "enc").unwrap();
    for (l, t) in pyr.iter().enumerate() {
        assert!(t.data().iter().all(|v| *v == 0.0), "level {l} must be all zero");
    }
}

#[test]
fn encoder_parameter_inventory() {
    // Stem plus one (down, residual) pair per level past the first, each
    // carrying conv weights, biases, and batch-norm arrays.
    let cfg = ModelConfig::tiny(0);
    let store = init_params(&cfg).unwrap();
    for name in [
        "enc.stem.w",
        "enc.stem.b",
        "enc.l1.down.conv.w",
        "enc.l1.down.conv.b",
        "enc.l1.down.bn.gamma",
        "enc.l1.down.bn.beta",
        "enc.l1.down.bn.running_mean",
        "enc.l1.down.bn.running_var",
        "enc.l1.res.c1.conv.w",
        "enc.l1.res.c2.conv.w",
    ] {
        assert!(store.contains(name), "missing {name}");
    }
    assert_eq!(store.get("enc.stem.w").shape(), &[4, 3, 3, 3]);
    assert_eq!(store.get("enc.l1.down.conv.w").shape(), &[8, 4, 3, 3]);
    assert_eq!(store.get("enc.l1.res.c1.conv.w").shape(), &[8, 8, 3, 3]);

    // Running statistics are buffers, not trainable parameters.
    assert!(!store.kind("enc.l1.down.bn.running_mean").trainable());
    assert!(store.kind("enc.l1.down.bn.gamma").trainable());
    assert!(matches!(store.kind("enc.stem.w"), ParamKind::Weight));
}
