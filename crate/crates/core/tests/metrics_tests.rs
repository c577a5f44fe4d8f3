//! Metric semantics: analytic values, agreement with direct-formula
//! oracles on random inputs, degenerate-input conventions, and the CSV
//! report format.

mod common;

use common::oracles::{e_measure_oracle, edt_brute, s_measure_oracle, weighted_f_oracle};
use common::{rand_binary, rand_plane, rand_tensor};
use univ2d_core::losses::{SSIM_C1, SSIM_C2};
use univ2d_core::metrics::{
    e_measure, edt, mae_metric, psnr, s_measure, ssim, weighted_f_measure, MetricReport, MetricRow,
};
use univ2d_core::{Error, Tensor};

#[test]
fn psnr_analytic_cases() {
    let x = rand_tensor(&[3, 8, 8], 11, 0.0, 1.0);
    assert_eq!(psnr(&x, &x).unwrap(), 99.0);

    // Constant difference of 0.1 gives MSE 0.01, i.e. exactly 20 dB.
    let gt = Tensor::filled(&[3, 8, 8], 0.3);
    let pred = Tensor::filled(&[3, 8, 8], 0.4);
    assert!((psnr(&pred, &gt).unwrap() - 20.0).abs() < 1e-9);

    let zeros = Tensor::zeros(&[1, 4, 4]);
    let ones = Tensor::filled(&[1, 4, 4], 1.0);
    assert_eq!(psnr(&zeros, &ones).unwrap(), 0.0);

    let narrow = Tensor::zeros(&[3, 8, 4]);
    assert!(matches!(psnr(&x, &narrow), Err(Error::Shape { .. })));
}

#[test]
fn psnr_symmetric_and_decreasing_in_noise_amplitude() {
    let base = rand_tensor(&[3, 12, 12], 21, 0.3, 0.7);
    let noise = rand_tensor(&[3, 12, 12], 22, -1.0, 1.0);
    let mut prev = f64::INFINITY;
    for amp in [0.01, 0.05, 0.1] {
        let mut noisy = base.clone();
        for (o, n) in noisy.data_mut().iter_mut().zip(noise.data()) {
            *o += amp * n;
        }
        let fwd = psnr(&noisy, &base).unwrap();
        let rev = psnr(&base, &noisy).unwrap();
        assert!((fwd - rev).abs() < 1e-12, "psnr must be symmetric");
        assert!(fwd < prev, "psnr must strictly decrease: {fwd} !< {prev}");
        prev = fwd;
    }
}

#[test]
fn ssim_identity_symmetry_and_size_guard() {
    let a = rand_tensor(&[3, 16, 16], 31, 0.0, 1.0);
    let b = rand_tensor(&[3, 16, 16], 32, 0.0, 1.0);
    assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-6);
    assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-9);

    // 11x11 is the smallest legal input: exactly one window.
    let c = rand_tensor(&[1, 11, 11], 33, 0.0, 1.0);
    assert!((ssim(&c, &c).unwrap() - 1.0).abs() < 1e-6);

    let small = rand_tensor(&[1, 10, 12], 34, 0.0, 1.0);
    match ssim(&small, &small) {
        Err(Error::TooSmall { min_dim, got, .. }) => {
            assert_eq!(min_dim, 11);
            assert_eq!(got, 10);
        }
        other => panic!("expected TooSmall, got {other:?}"),
    }
}

#[test]
fn ssim_constant_pair_matches_windowed_formula() {
    // Constant images have zero variance, so every window reduces to the
    // same closed form in the stabilizing constants.
    let zeros = Tensor::zeros(&[1, 16, 16]);
    let ones = Tensor::filled(&[1, 16, 16], 1.0);
    let expected = (2.0 * 0.0 * 1.0 + SSIM_C1) * (2.0 * 0.0 + SSIM_C2)
        / ((0.0 + 1.0 + SSIM_C1) * (0.0 + 0.0 + SSIM_C2));
    let got = ssim(&zeros, &ones).unwrap();
    assert!(
        (got - expected).abs() < 1e-12,
        "constant-pair ssim {got} != windowed formula {expected}"
    );
}

#[test]
fn mae_analytic_and_brute_force() {
    let quarter = Tensor::filled(&[1, 4, 4], 0.25);
    let zero = Tensor::zeros(&[1, 4, 4]);
    assert!((mae_metric(&quarter, &zero).unwrap() - 0.25).abs() < 1e-15);
    assert_eq!(mae_metric(&quarter, &quarter).unwrap(), 0.0);

    let p = rand_plane(4, 4, 41);
    let g = rand_plane(4, 4, 42);
    let brute = p
        .data()
        .iter()
        .zip(g.data())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / 16.0;
    assert!((mae_metric(&p, &g).unwrap() - brute).abs() < 1e-15);
}

#[test]
fn s_measure_perfect_and_degenerate_cases() {
    let gt = rand_binary(8, 8, 51, 0.4);
    let n_fg = gt.data().iter().filter(|v| **v > 0.5).count();
    assert!(n_fg > 0 && n_fg < 64, "fixture must be non-degenerate");
    assert!((s_measure(&gt, &gt).unwrap() - 1.0).abs() < 1e-9);

    let zeros = Tensor::zeros(&[1, 8, 8]);
    assert_eq!(s_measure(&zeros, &zeros).unwrap(), 1.0);

    let c = Tensor::filled(&[1, 8, 8], 0.3);
    assert!((s_measure(&c, &zeros).unwrap() - 0.7).abs() < 1e-12);

    let ones = Tensor::filled(&[1, 8, 8], 1.0);
    let p = rand_plane(8, 8, 52);
    let mean_p = p.data().iter().sum::<f64>() / 64.0;
    assert!((s_measure(&p, &ones).unwrap() - mean_p).abs() < 1e-12);

    let rgb = rand_tensor(&[3, 8, 8], 53, 0.0, 1.0);
    assert!(matches!(s_measure(&rgb, &ones), Err(Error::Shape { .. })));
}

#[test]
fn saliency_metrics_match_oracles_on_random_pairs() {
    for i in 0..100u64 {
        let pred = rand_plane(8, 8, 1000 + i);
        // Sweep the foreground density, including rates that occasionally
        // produce degenerate all-background masks.
        let p_fg = 0.05 + 0.9 * (i as f64 / 99.0);
        let gt = rand_binary(8, 8, 2000 + i, p_fg);

        let s = s_measure(&pred, &gt).unwrap();
        let so = s_measure_oracle(&pred, &gt);
        assert!((s - so).abs() <= 1e-6, "s_measure[{i}]: {s} vs oracle {so}");

        let f = weighted_f_measure(&pred, &gt).unwrap();
        let fo = weighted_f_oracle(&pred, &gt);
        assert!((f - fo).abs() <= 1e-6, "weighted_f[{i}]: {f} vs oracle {fo}");

        let e = e_measure(&pred, &gt).unwrap();
        let eo = e_measure_oracle(&pred, &gt);
        assert!((e - eo).abs() <= 1e-6, "e_measure[{i}]: {e} vs oracle {eo}");

        assert!((0.0..=1.0).contains(&s), "s_measure out of range: {s}");
        assert!((0.0..=1.0).contains(&f), "weighted_f out of range: {f}");
        assert!((0.0..=1.0).contains(&e), "e_measure out of range: {e}");
    }
}

#[test]
fn saliency_metrics_match_oracles_on_degenerate_ground_truths() {
    let zeros = Tensor::zeros(&[1, 8, 8]);
    let ones = Tensor::filled(&[1, 8, 8], 1.0);
    for (k, gt) in [zeros, ones].iter().enumerate() {
        for i in 0..5u64 {
            let pred = rand_plane(8, 8, 3000 + 10 * k as u64 + i);
            let s = s_measure(&pred, gt).unwrap();
            assert!((s - s_measure_oracle(&pred, gt)).abs() <= 1e-6);
            let f = weighted_f_measure(&pred, gt).unwrap();
            assert!((f - weighted_f_oracle(&pred, gt)).abs() <= 1e-6);
            let e = e_measure(&pred, gt).unwrap();
            assert!((e - e_measure_oracle(&pred, gt)).abs() <= 1e-6);
        }
    }
}

#[test]
fn edt_matches_brute_force_on_random_grids() {
    for i in 0..20u64 {
        let h = 1 + (i as usize * 3) % 8;
        let w = 1 + (i as usize * 5) % 8;
        let mask = rand_binary(h, w, 4000 + i, 0.2);
        let fg: Vec<bool> = mask.data().iter().map(|v| *v > 0.5).collect();
        let (d2, idx) = edt::exact(&fg, h, w);
        let (bd2, bidx) = edt_brute(&fg, h, w);
        assert_eq!(d2, bd2, "distances differ on grid {i} ({h}x{w})");
        assert_eq!(idx, bidx, "indices differ on grid {i} ({h}x{w})");
    }
}

#[test]
fn edt_degenerate_grids() {
    // All background: infinite distance, self indices.
    let fg = vec![false; 12];
    let (d2, idx) = edt::exact(&fg, 3, 4);
    assert!(d2.iter().all(|d| *d == usize::MAX));
    assert_eq!(idx, (0..12).collect::<Vec<_>>());

    // Single foreground pixel at (2, 3) in a 6x7 grid.
    let h = 6;
    let w = 7;
    let mut fg = vec![false; h * w];
    fg[2 * w + 3] = true;
    let (d2, idx) = edt::exact(&fg, h, w);
    for r in 0..h {
        for c in 0..w {
            let dr = r.abs_diff(2);
            let dc = c.abs_diff(3);
            assert_eq!(d2[r * w + c], dr * dr + dc * dc);
            assert_eq!(idx[r * w + c], 2 * w + 3);
        }
    }

    // All foreground: zero distance to oneself.
    let fg = vec![true; 20];
    let (d2, idx) = edt::exact(&fg, 4, 5);
    assert!(d2.iter().all(|d| *d == 0));
    assert_eq!(idx, (0..20).collect::<Vec<_>>());
}

#[test]
fn weighted_f_perfect_zero_and_empty_cases() {
    let gt = rand_binary(10, 10, 61, 0.45);
    assert!(gt.data().iter().any(|v| *v > 0.5));
    assert!((weighted_f_measure(&gt, &gt).unwrap() - 1.0).abs() < 1e-9);

    // An all-zero prediction against an interior foreground square has zero
    // weighted recall; the square sits 4 pixels from every border so the
    // dependency blur has full support on the foreground.
    let mut gt_sq = Tensor::zeros(&[1, 12, 12]);
    for r in 4..8 {
        for c in 4..8 {
            gt_sq.data_mut()[r * 12 + c] = 1.0;
        }
    }
    let zeros = Tensor::zeros(&[1, 12, 12]);
    let f = weighted_f_measure(&zeros, &gt_sq).unwrap();
    assert!(f.abs() < 1e-12, "zero prediction must score ~0, got {f}");

    // Empty ground truth scores 0 by convention.
    let pred = rand_plane(12, 12, 62);
    assert_eq!(weighted_f_measure(&pred, &Tensor::zeros(&[1, 12, 12])).unwrap(), 0.0);
}

#[test]
fn e_measure_perfect_inverted_and_degenerate_cases() {
    let gt = rand_binary(8, 8, 71, 0.5);
    let n_fg = gt.data().iter().filter(|v| **v > 0.5).count();
    assert!(n_fg > 0 && n_fg < 64, "fixture must be non-degenerate");
    assert!((e_measure(&gt, &gt).unwrap() - 1.0).abs() < 1e-9);

    // Inverted prediction on a 4x4 map: locked against the brute-force
    // threshold sweep.
    let gt4 = rand_binary(4, 4, 72, 0.5);
    let mut inv = gt4.clone();
    for v in inv.data_mut() {
        *v = 1.0 - *v;
    }
    let e = e_measure(&inv, &gt4).unwrap();
    let eo = e_measure_oracle(&inv, &gt4);
    assert!((e - eo).abs() <= 1e-9, "inverted: {e} vs oracle {eo}");
    assert!(e < 0.5, "inverted prediction must align poorly, got {e}");

    // Degenerate conventions: agreement on empty / full ground truths.
    let zeros = Tensor::zeros(&[1, 8, 8]);
    let ones = Tensor::filled(&[1, 8, 8], 1.0);
    assert_eq!(e_measure(&zeros, &zeros).unwrap(), 1.0);
    assert_eq!(e_measure(&ones, &ones).unwrap(), 1.0);
}

#[test]
fn metric_report_csv_golden() {
    let report = MetricReport {
        rows: vec![
            MetricRow {
                name: "a.png".to_string(),
                psnr: 20.0,
                ssim: 0.5,
                mae: 0.25,
                s_measure: 0.75,
                weighted_f_measure: 0.5,
                e_measure: 1.0,
            },
            MetricRow {
                name: "b.png".to_string(),
                psnr: 30.0,
                ssim: 1.0,
                mae: 0.0,
                s_measure: 1.0,
                weighted_f_measure: 0.25,
                e_measure: 0.5,
            },
        ],
    };
    let expected = "filename,psnr,ssim,mae,s_measure,weighted_f_measure,e_measure,uiqm,uciqe,pcqi\n\
                    a.png,20.000000,0.500000,0.250000,0.750000,0.500000,1.000000,,,\n\
                    b.png,30.000000,1.000000,0.000000,1.000000,0.250000,0.500000,,,\n\
                    MEAN,25.000000,0.750000,0.125000,0.875000,0.375000,0.750000,,,\n";
    assert_eq!(report.to_csv_string(), expected);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.csv");
    report.write_csv(&path).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap(), expected);
}
