//! Training objectives: closed-form cases for every loss term, agreement
//! between the tape forms and direct arithmetic, the weighted total, and
//! finite-difference gradients of each term with respect to the prediction.

mod common;

use common::{assert_grads_close, fd_grad, rand_plane, rand_tensor};
use univ2d_core::losses::{
    bce_loss, bce_loss_sum, bce_t, content_loss, content_loss_t, iou_loss, iou_t, mask_loss_final,
    perceptual_loss_t, ssim_t, total_loss, total_loss_t, Reduction, BCE_EPS,
};
use univ2d_core::metrics::ssim;
use univ2d_core::perceptual::{zero_extractor, PerceptualExtractor};
use univ2d_core::tape::{Tape, Var};
use univ2d_core::{Error, LossWeights, Tensor};

fn scalar_of(build: impl FnOnce(&mut Tape, Var, Var) -> Var, pred: &Tensor, gt: &Tensor) -> f64 {
    let mut tape = Tape::new();
    let p = tape.constant(pred.clone());
    let g = tape.constant(gt.clone());
    let v = build(&mut tape, p, g);
    tape.scalar(v)
}

#[test]
fn bce_closed_form_cases() {
    // Uniform 0.5 prediction scores ln 2 against any binary target.
    let half = Tensor::filled(&[1, 8, 8], 0.5);
    let gt = common::rand_binary(8, 8, 1, 0.4);
    assert!((bce_loss(&half, &gt).unwrap() - std::f64::consts::LN_2).abs() < 1e-9);

    // A perfect binary prediction only pays the clamp epsilon.
    assert!((bce_loss(&gt, &gt).unwrap() - -(1.0 - BCE_EPS).ln()).abs() < 1e-12);

    // Constant 0.75 against an all-ones target: -ln 0.75.
    let p = Tensor::filled(&[1, 4, 4], 0.75);
    let ones = Tensor::filled(&[1, 4, 4], 1.0);
    assert!((bce_loss(&p, &ones).unwrap() - -(0.75f64.ln())).abs() < 1e-12);

    // Maximally wrong prediction saturates at the clamp.
    let zeros_pred = Tensor::zeros(&[1, 4, 4]);
    assert!((bce_loss(&zeros_pred, &ones).unwrap() - -(BCE_EPS.ln())).abs() < 1e-9);

    // Sum reduction is the mean times the pixel count.
    let pred = rand_plane(6, 5, 2);
    let target = common::rand_binary(6, 5, 3, 0.5);
    let mean = bce_loss(&pred, &target).unwrap();
    let sum = bce_loss_sum(&pred, &target).unwrap();
    assert!((sum - mean * 30.0).abs() < 1e-9);

    assert!(matches!(
        bce_loss(&pred, &Tensor::zeros(&[1, 5, 6])),
        Err(Error::Shape { context, .. }) if context == "bce_loss"
    ));
}

#[test]
fn iou_closed_form_cases() {
    // Perfect overlap gives zero loss regardless of mask polarity.
    let ones = Tensor::filled(&[1, 10, 10], 1.0);
    assert!(iou_loss(&ones, &ones).unwrap().abs() < 1e-9);
    let zeros = Tensor::zeros(&[1, 10, 10]);
    assert!(iou_loss(&zeros, &zeros).unwrap().abs() < 1e-9);

    // Half prediction against a full target on 100x100:
    // inter = 5000, union = 10000, loss = 1 - 5001/10001.
    let half = Tensor::filled(&[1, 100, 100], 0.5);
    let full = Tensor::filled(&[1, 100, 100], 1.0);
    let expected = 1.0 - 5001.0 / 10001.0;
    assert!((iou_loss(&half, &full).unwrap() - expected).abs() < 1e-12);

    // Random pair against the direct formula.
    let p = rand_plane(7, 9, 4);
    let g = rand_plane(7, 9, 5);
    let inter: f64 = p.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
    let union = p.data().iter().sum::<f64>() + g.data().iter().sum::<f64>() - inter;
    let expected = 1.0 - (inter + 1.0) / (union + 1.0);
    assert!((iou_loss(&p, &g).unwrap() - expected).abs() < 1e-12);
}

#[test]
fn final_mask_loss_is_bce_plus_iou() {
    let p = rand_plane(9, 6, 6);
    let g = common::rand_binary(9, 6, 7, 0.45);
    let total = mask_loss_final(&p, &g).unwrap();
    let parts = bce_loss(&p, &g).unwrap() + iou_loss(&p, &g).unwrap();
    assert!((total - parts).abs() < 1e-12);
}

#[test]
fn tape_ssim_matches_metric() {
    let a = rand_tensor(&[3, 16, 16], 8, 0.0, 1.0);
    let b = rand_tensor(&[3, 16, 16], 9, 0.0, 1.0);
    let tape_val = scalar_of(ssim_t, &a, &b);
    assert!((tape_val - ssim(&a, &b).unwrap()).abs() < 1e-9);
    let self_val = scalar_of(ssim_t, &a, &a);
    assert!((self_val - 1.0).abs() < 1e-9);
}

#[test]
fn content_loss_closed_form_cases() {
    let gt = rand_tensor(&[3, 16, 16], 10, 0.2, 0.8);
    assert!(content_loss(&gt, &gt).unwrap().abs() < 1e-9);

    // A constant shift adds exactly the shift to the L1 term; the SSIM term
    // contributes 1 - SSIM of the shifted pair.
    let shifted = Tensor::from_vec(gt.shape(), gt.data().iter().map(|v| v + 0.1).collect());
    let expected = 0.1 + (1.0 - ssim(&shifted, &gt).unwrap());
    assert!((content_loss(&shifted, &gt).unwrap() - expected).abs() < 1e-12);

    // Constant planes hit the SSIM constant-pair closed form.
    let zeros = Tensor::zeros(&[3, 12, 12]);
    let ones = Tensor::filled(&[3, 12, 12], 1.0);
    let ssim_const = (1e-4 * 9e-4) / ((1.0 + 1e-4) * 9e-4);
    let expected = 1.0 + (1.0 - ssim_const);
    assert!((content_loss(&zeros, &ones).unwrap() - expected).abs() < 1e-12);

    assert!(matches!(
        content_loss(&rand_tensor(&[3, 10, 10], 11, 0.0, 1.0), &rand_tensor(&[3, 10, 10], 12, 0.0, 1.0)),
        Err(Error::TooSmall { min_dim: 11, got: 10, .. })
    ));
}

#[test]
fn perceptual_loss_cases() {
    let ext = PerceptualExtractor::seeded(13);
    let img = rand_tensor(&[3, 16, 16], 14, 0.0, 1.0);
    let other = rand_tensor(&[3, 16, 16], 15, 0.0, 1.0);
    let self_loss = univ2d_core::losses::perceptual_loss(&img, &img, &ext).unwrap();
    assert!(self_loss.abs() < 1e-12);
    let cross = univ2d_core::losses::perceptual_loss(&img, &other, &ext).unwrap();
    assert!(cross > 0.0 && cross.is_finite());

    // The all-zero extractor maps every image to identical activations.
    let zero = zero_extractor();
    assert!(univ2d_core::losses::perceptual_loss(&img, &other, &zero).unwrap().abs() < 1e-12);
}

#[test]
fn total_loss_weighs_mask_terms() {
    let w = LossWeights::default();
    assert!((w.alpha - 0.5).abs() < 1e-12);
    let b = total_loss(0.2, 0.4, 0.1, 0.3, &w);
    assert!((b.total - 0.7).abs() < 1e-12);
    assert_eq!((b.mask_pre, b.mask_fin, b.content, b.perceptual), (0.2, 0.4, 0.1, 0.3));

    // The total is linear in alpha with slope mask_pre + mask_fin.
    for seed in 0..10u64 {
        let vals = rand_tensor(&[1, 1, 4], seed + 16, 0.0, 2.0);
        let [mp, mf, c, p] = [vals.data()[0], vals.data()[1], vals.data()[2], vals.data()[3]];
        let lo = total_loss(mp, mf, c, p, &LossWeights { alpha: 0.25 });
        let hi = total_loss(mp, mf, c, p, &LossWeights { alpha: 0.75 });
        assert!((hi.total - lo.total - 0.5 * (mp + mf)).abs() < 1e-12);
    }

    // Tape form agrees with the plain combination.
    let mut tape = Tape::new();
    let terms: Vec<Var> = [0.2, 0.4, 0.1, 0.3]
        .iter()
        .map(|&v| tape.constant(Tensor::from_vec(&[1, 1, 1], vec![v])))
        .collect();
    let t = total_loss_t(&mut tape, terms[0], terms[1], terms[2], terms[3], &w);
    assert!((tape.scalar(t) - 0.7).abs() < 1e-12);
}

/// Central-difference check of a loss term's gradient with respect to the
/// prediction.
fn fd_loss_check(name: &str, pred0: &Tensor, gt: &Tensor, build: impl Fn(&mut Tape, Var, Var) -> Var) {
    let mut tape = Tape::new();
    let p = tape.input(pred0.clone());
    let g = tape.constant(gt.clone());
    let s = build(&mut tape, p, g);
    let grads = tape.backward(s);
    let analytic = grads.of(p).expect("prediction must receive a gradient").clone();

    let numeric = fd_grad(
        |t: &Tensor| {
            let mut tape = Tape::new();
            let p = tape.input(t.clone());
            let g = tape.constant(gt.clone());
            let s = build(&mut tape, p, g);
            tape.scalar(s)
        },
        pred0,
        1e-5,
    );
    assert_grads_close(&analytic, &numeric, 1e-8, 1e-4, name);
}

#[test]
fn loss_gradients_match_finite_differences() {
    // Prediction and target ranges are separated so the |.| inside the
    // content term stays away from its kink.
    let pred = rand_tensor(&[1, 12, 12], 17, 0.55, 0.95);
    let gt = rand_tensor(&[1, 12, 12], 18, 0.05, 0.45);
    fd_loss_check("bce", &pred, &gt, |t, p, g| bce_t(t, p, g, Reduction::Mean));
    fd_loss_check("bce_sum", &pred, &gt, |t, p, g| bce_t(t, p, g, Reduction::Sum));
    fd_loss_check("iou", &pred, &gt, iou_t);

    let pred3 = rand_tensor(&[3, 12, 12], 19, 0.55, 0.95);
    let gt3 = rand_tensor(&[3, 12, 12], 20, 0.05, 0.45);
    fd_loss_check("ssim", &pred3, &gt3, ssim_t);
    fd_loss_check("content", &pred3, &gt3, content_loss_t);

    let ext = PerceptualExtractor::seeded(21);
    let gt_img = rand_tensor(&[3, 16, 16], 22, 0.05, 0.45);
    let gt_taps = ext.features(&gt_img).unwrap();
    let pred_img = rand_tensor(&[3, 16, 16], 23, 0.55, 0.95);
    let mut tape = Tape::new();
    let p = tape.input(pred_img.clone());
    let s = perceptual_loss_t(&mut tape, &ext, p, &gt_taps);
    let grads = tape.backward(s);
    let analytic = grads.of(p).unwrap().clone();
    let numeric = fd_grad(
        |t: &Tensor| {
            let mut tape = Tape::new();
            let p = tape.input(t.clone());
            let s = perceptual_loss_t(&mut tape, &ext, p, &gt_taps);
            tape.scalar(s)
        },
        &pred_img,
        1e-5,
    );
    assert_grads_close(&analytic, &numeric, 1e-8, 1e-4, "perceptual");
}
