//! Training objectives: preliminary and refined mask losses, the
//! structure-aware content loss, the perceptual loss, and their weighted
//! total. Every loss has a differentiable tape form plus a plain wrapper
//! for direct evaluation.

use crate::config::LossWeights;
use crate::error::Result;
use crate::kernels::gaussian_kernel;
use crate::perceptual::PerceptualExtractor;
use crate::tape::{Tape, Var};
use crate::tensor::{check_same_shape, Image, SaliencyMask, Tensor};

/// Pixel clamp applied inside the cross-entropy to keep logs finite.
pub const BCE_EPS: f64 = 1e-7;
/// Soft-IoU smoothing constant (prevents 0/0 on empty masks).
pub const IOU_EPS: f64 = 1.0;
/// SSIM window taps and width, shared with the metrics module.
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 1e-4;
pub const SSIM_C2: f64 = 9e-4;

/// Reduction applied over pixels in the cross-entropy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    /// Mean over pixels (the default: loss scale independent of
    /// resolution).
    Mean,
    /// Plain sum (fidelity mode).
    Sum,
}

/// Scalar values of every term of one training step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub mask_pre: f64,
    pub mask_fin: f64,
    pub content: f64,
    pub perceptual: f64,
    pub total: f64,
}

/// Binary cross-entropy on the tape, with predictions clamped to
/// [eps, 1-eps].
pub fn bce_t(tape: &mut Tape, pred: Var, gt: Var, reduction: Reduction) -> Var {
    let p = tape.clamp(pred, BCE_EPS, 1.0 - BCE_EPS);
    let one = tape.constant(Tensor::filled(&[1, 1, 1], 1.0));
    let ln_p = tape.ln(p);
    let pos = tape.mul(gt, ln_p);
    let q = tape.sub(one, p);
    let ln_q = tape.ln(q);
    let g_inv = tape.sub(one, gt);
    let neg = tape.mul(g_inv, ln_q);
    let s = tape.add(pos, neg);
    let red = match reduction {
        Reduction::Mean => tape.mean_all(s),
        Reduction::Sum => tape.sum_all(s),
    };
    tape.mul_scalar(red, -1.0)
}

/// Soft IoU loss on the tape: 1 - (sum(p*g)+eps) / (sum(p)+sum(g)-sum(p*g)+eps).
pub fn iou_t(tape: &mut Tape, pred: Var, gt: Var) -> Var {
    let pg = tape.mul(pred, gt);
    let inter = tape.sum_all(pg);
    let sp = tape.sum_all(pred);
    let sg = tape.sum_all(gt);
    let sum = tape.add(sp, sg);
    let union = tape.sub(sum, inter);
    let num = tape.add_scalar(inter, IOU_EPS);
    let den = tape.add_scalar(union, IOU_EPS);
    let frac = tape.div(num, den);
    let neg = tape.mul_scalar(frac, -1.0);
    tape.add_scalar(neg, 1.0)
}

/// Refined mask loss on the tape: BCE + soft IoU.
pub fn mask_loss_final_t(tape: &mut Tape, pred: Var, gt: Var) -> Var {
    let b = bce_t(tape, pred, gt, Reduction::Mean);
    let i = iou_t(tape, pred, gt);
    tape.add(b, i)
}

/// Mean structural similarity on the tape: 11x11 Gaussian window over the
/// valid interior, averaged over channels and positions. Differentiable.
pub fn ssim_t(tape: &mut Tape, x: Var, y: Var) -> Var {
    let k = tape.register_kernel(gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA));
    let blur = |tape: &mut Tape, v: Var| {
        let h = tape.sep_h(v, k);
        tape.sep_v(h, k)
    };
    let mu_x = blur(tape, x);
    let mu_y = blur(tape, y);
    let xx = tape.mul(x, x);
    let yy = tape.mul(y, y);
    let xy = tape.mul(x, y);
    let exx = blur(tape, xx);
    let eyy = blur(tape, yy);
    let exy = blur(tape, xy);
    let mu_xx = tape.mul(mu_x, mu_x);
    let mu_yy = tape.mul(mu_y, mu_y);
    let mu_xy = tape.mul(mu_x, mu_y);
    let var_x = tape.sub(exx, mu_xx);
    let var_y = tape.sub(eyy, mu_yy);
    let cov = tape.sub(exy, mu_xy);
    let two_mu = tape.mul_scalar(mu_xy, 2.0);
    let n1 = tape.add_scalar(two_mu, SSIM_C1);
    let two_cov = tape.mul_scalar(cov, 2.0);
    let n2 = tape.add_scalar(two_cov, SSIM_C2);
    let num = tape.mul(n1, n2);
    let mu2 = tape.add(mu_xx, mu_yy);
    let d1 = tape.add_scalar(mu2, SSIM_C1);
    let var2 = tape.add(var_x, var_y);
    let d2 = tape.add_scalar(var2, SSIM_C2);
    let den = tape.mul(d1, d2);
    let map = tape.div(num, den);
    tape.mean_all(map)
}

/// Content loss on the tape: mean absolute error plus the structural
/// dissimilarity 1 - SSIM.
pub fn content_loss_t(tape: &mut Tape, pred: Var, gt: Var) -> Var {
    let d = tape.sub(pred, gt);
    let a = tape.abs(d);
    let l1 = tape.mean_all(a);
    let s = ssim_t(tape, pred, gt);
    let neg = tape.mul_scalar(s, -1.0);
    let dssim = tape.add_scalar(neg, 1.0);
    tape.add(l1, dssim)
}

/// Perceptual loss on the tape against precomputed ground-truth tap
/// activations (constants, so the ground-truth branch costs no gradient
/// work).
pub fn perceptual_loss_t(tape: &mut Tape, extractor: &PerceptualExtractor, pred: Var, gt_taps: &[Tensor]) -> Var {
    let taps = extractor.features_t(tape, pred);
    assert_eq!(taps.len(), gt_taps.len(), "tap count mismatch");
    let mut total: Option<Var> = None;
    for (tap, gt) in taps.into_iter().zip(gt_taps) {
        let g = tape.constant(gt.clone());
        let d = tape.sub(tap, g);
        let a = tape.abs(d);
        let m = tape.mean_all(a);
        total = Some(match total {
            Some(t) => tape.add(t, m),
            None => m,
        });
    }
    total.expect("extractor has at least one stage")
}

/// Weighted total on the tape:
/// alpha * (mask_pre + mask_fin) + content + perceptual.
pub fn total_loss_t(
    tape: &mut Tape,
    mask_pre: Var,
    mask_fin: Var,
    content: Var,
    perceptual: Var,
    weights: &LossWeights,
) -> Var {
    let masks = tape.add(mask_pre, mask_fin);
    let weighted = tape.mul_scalar(masks, weights.alpha);
    let rest = tape.add(content, perceptual);
    tape.add(weighted, rest)
}

fn eval_pair(pred: &Tensor, gt: &Tensor, context: &str, f: impl FnOnce(&mut Tape, Var, Var) -> Var) -> Result<f64> {
    check_same_shape(pred, gt, context)?;
    let mut tape = Tape::new();
    let p = tape.constant(pred.clone());
    let g = tape.constant(gt.clone());
    let v = f(&mut tape, p, g);
    Ok(tape.value(v).data()[0])
}

/// Mean binary cross-entropy between a predicted and a ground-truth mask.
pub fn bce_loss(pred: &SaliencyMask, gt: &SaliencyMask) -> Result<f64> {
    eval_pair(pred, gt, "bce_loss", |t, p, g| bce_t(t, p, g, Reduction::Mean))
}

/// Sum-reduced cross-entropy (fidelity mode).
pub fn bce_loss_sum(pred: &SaliencyMask, gt: &SaliencyMask) -> Result<f64> {
    eval_pair(pred, gt, "bce_loss", |t, p, g| bce_t(t, p, g, Reduction::Sum))
}

/// Soft IoU loss between a predicted and a ground-truth mask.
pub fn iou_loss(pred: &SaliencyMask, gt: &SaliencyMask) -> Result<f64> {
    eval_pair(pred, gt, "iou_loss", iou_t)
}

/// Refined mask loss: BCE + soft IoU.
pub fn mask_loss_final(pred: &SaliencyMask, gt: &SaliencyMask) -> Result<f64> {
    eval_pair(pred, gt, "mask_loss_final", mask_loss_final_t)
}

/// Content loss: mean |pred - gt| + (1 - SSIM(pred, gt)).
pub fn content_loss(pred: &Image, gt: &Image) -> Result<f64> {
    check_same_shape(pred, gt, "content_loss")?;
    let (_, h, w) = pred.dims3();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(crate::error::Error::TooSmall {
            context: "content_loss".to_string(),
            min_dim: SSIM_WINDOW,
            got: h.min(w),
        });
    }
    eval_pair(pred, gt, "content_loss", content_loss_t)
}

/// Perceptual loss: sum over taps of mean |phi_k(pred) - phi_k(gt)|.
pub fn perceptual_loss(pred: &Image, gt: &Image, extractor: &PerceptualExtractor) -> Result<f64> {
    check_same_shape(pred, gt, "perceptual_loss")?;
    let gt_taps = extractor.features(gt)?;
    let mut tape = Tape::new();
    let p = tape.constant(pred.clone());
    let v = perceptual_loss_t(&mut tape, extractor, p, &gt_taps);
    Ok(tape.value(v).data()[0])
}

/// Combines the four term values into a breakdown with the weighted total.
pub fn total_loss(mask_pre: f64, mask_fin: f64, content: f64, perceptual: f64, weights: &LossWeights) -> LossBreakdown {
    LossBreakdown {
        mask_pre,
        mask_fin,
        content,
        perceptual,
        total: weights.alpha * (mask_pre + mask_fin) + content + perceptual,
    }
}
