//! Helpers shared by the integration test suites: seeded random tensors,
//! central finite differences, and tolerance checks.
#![allow(dead_code)]

pub mod oracles;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use univ2d_core::Tensor;

/// Relative error with a floor on the denominator so that near-zero pairs
/// are compared absolutely at the floor scale.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

/// Random tensor with entries uniform in [lo, hi), deterministic in `seed`.
pub fn rand_tensor(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_vec(shape, data)
}

/// Random [1,H,W] plane with entries strictly inside (0,1).
pub fn rand_plane(h: usize, w: usize, seed: u64) -> Tensor {
    rand_tensor(&[1, h, w], seed, 1e-3, 1.0 - 1e-3)
}

/// Random binary [1,H,W] plane; each pixel is 1 with probability `p`.
pub fn rand_binary(h: usize, w: usize, seed: u64, p: f64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..h * w).map(|_| if rng.gen::<f64>() < p { 1.0 } else { 0.0 }).collect();
    Tensor::from_vec(&[1, h, w], data)
}

/// Central finite-difference gradient of a scalar function of one tensor.
pub fn fd_grad<F>(f: F, x0: &Tensor, h: f64) -> Tensor
where
    F: Fn(&Tensor) -> f64,
{
    let mut g = Tensor::zeros(x0.shape());
    for i in 0..x0.numel() {
        let mut xp = x0.clone();
        xp.data_mut()[i] += h;
        let mut xm = x0.clone();
        xm.data_mut()[i] -= h;
        g.data_mut()[i] = (f(&xp) - f(&xm)) / (2.0 * h);
    }
    g
}

/// Asserts two gradient tensors agree elementwise:
/// |a-b| <= tol_abs + tol_rel * max(|a|,|b|).
pub fn assert_grads_close(analytic: &Tensor, numeric: &Tensor, tol_abs: f64, tol_rel: f64, what: &str) {
    assert_eq!(analytic.shape(), numeric.shape(), "{what}: shape mismatch");
    for i in 0..analytic.numel() {
        let a = analytic.data()[i];
        let n = numeric.data()[i];
        let tol = tol_abs + tol_rel * a.abs().max(n.abs());
        assert!(
            (a - n).abs() <= tol,
            "{what}: grad[{i}] analytic={a:.12e} numeric={n:.12e} diff={:.3e} tol={tol:.3e}",
            (a - n).abs()
        );
    }
}
