//! Direct-formula reference implementations of the saliency metrics,
//! written independently of the library code: plain nested loops, 2-D
//! Gaussian built from its closed form, brute-force nearest-foreground
//! search. The suites compare the library against these on random inputs.

use univ2d_core::Tensor;

const EPS: f64 = f64::EPSILON;

fn plane<'a>(t: &'a Tensor, what: &str) -> (&'a [f64], usize, usize) {
    let (c, h, w) = t.dims3();
    assert_eq!(c, 1, "{what}: expected [1,H,W]");
    (t.data(), h, w)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n-1 normalization), 0 for fewer than two values.
fn sample_std(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n <= 1 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64).sqrt()
}

fn object(selection: &[f64]) -> f64 {
    let x = mean(selection);
    let sigma = sample_std(selection);
    2.0 * x / (x * x + 1.0 + sigma + EPS)
}

fn s_object(pred: &[f64], gt: &[f64]) -> f64 {
    let fg: Vec<f64> = pred.iter().zip(gt).filter(|(_, &g)| g > 0.5).map(|(&p, _)| p).collect();
    let bg: Vec<f64> = pred
        .iter()
        .zip(gt)
        .filter(|(_, &g)| g <= 0.5)
        .map(|(&p, _)| 1.0 - p)
        .collect();
    let u = mean(gt);
    u * object(&fg) + (1.0 - u) * object(&bg)
}

/// Region similarity of one quadrant, from the published closed form.
fn region_q(pred: &[f64], gt: &[f64]) -> f64 {
    if pred.is_empty() {
        // An empty quadrant always has zero weight; its score is moot.
        return 0.0;
    }
    let n = pred.len() as f64;
    let x = mean(pred);
    let y = mean(gt);
    let sx2 = pred.iter().map(|p| (p - x) * (p - x)).sum::<f64>() / (n - 1.0 + EPS);
    let sy2 = gt.iter().map(|g| (g - y) * (g - y)).sum::<f64>() / (n - 1.0 + EPS);
    let sxy = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| (p - x) * (g - y))
        .sum::<f64>()
        / (n - 1.0 + EPS);
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sx2 + sy2);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn quadrant(data: &[f64], h: usize, w: usize, r0: usize, r1: usize, c0: usize, c1: usize) -> Vec<f64> {
    let _ = h;
    let mut out = Vec::new();
    for r in r0..r1 {
        for c in c0..c1 {
            out.push(data[r * w + c]);
        }
    }
    out
}

fn s_region(pred: &[f64], gt: &[f64], h: usize, w: usize) -> f64 {
    // Foreground centroid, 1-based with round-half-away-from-zero, the
    // image center when the foreground is empty.
    let total: f64 = gt.iter().sum();
    let (x, y) = if total == 0.0 {
        ((w as f64 / 2.0).round() as usize, (h as f64 / 2.0).round() as usize)
    } else {
        let mut sx = 0.0;
        let mut sy = 0.0;
        for r in 0..h {
            for c in 0..w {
                let g = gt[r * w + c];
                sx += g * (c + 1) as f64;
                sy += g * (r + 1) as f64;
            }
        }
        (((sx / total).round()) as usize, ((sy / total).round()) as usize)
    };
    let area = (h * w) as f64;
    let w1 = (x * y) as f64 / area;
    let w2 = ((w - x) * y) as f64 / area;
    let w3 = (x * (h - y)) as f64 / area;
    let w4 = 1.0 - w1 - w2 - w3;
    let q = |r0, r1, c0, c1| {
        let p = quadrant(pred, h, w, r0, r1, c0, c1);
        let g = quadrant(gt, h, w, r0, r1, c0, c1);
        region_q(&p, &g)
    };
    w1 * q(0, y, 0, x) + w2 * q(0, y, x, w) + w3 * q(y, h, 0, x) + w4 * q(y, h, x, w)
}

/// Structure measure reference.
pub fn s_measure_oracle(pred: &Tensor, gt: &Tensor) -> f64 {
    let (p, h, w) = plane(pred, "s_measure_oracle pred");
    let (g, gh, gw) = plane(gt, "s_measure_oracle gt");
    assert_eq!((h, w), (gh, gw));
    let y = mean(g);
    if y == 0.0 {
        1.0 - mean(p)
    } else if y == 1.0 {
        mean(p)
    } else {
        (0.5 * s_object(p, g) + 0.5 * s_region(p, g, h, w)).max(0.0)
    }
}

/// Brute-force exact nearest-foreground search. Returns squared distances
/// and the linear index of the chosen foreground pixel; ties resolve to the
/// smaller row-major index. Background-free inputs map every pixel to
/// (usize::MAX, its own index).
pub fn edt_brute(fg: &[bool], h: usize, w: usize) -> (Vec<usize>, Vec<usize>) {
    let mut d2 = vec![usize::MAX; h * w];
    let mut idx = (0..h * w).collect::<Vec<usize>>();
    for r in 0..h {
        for c in 0..w {
            let p = r * w + c;
            // Scanning candidates in row-major order makes the first
            // minimum win, which is exactly the smaller-index tie rule.
            for fr in 0..h {
                for fc in 0..w {
                    let q = fr * w + fc;
                    if !fg[q] {
                        continue;
                    }
                    let dr = r.abs_diff(fr);
                    let dc = c.abs_diff(fc);
                    let d = dr * dr + dc * dc;
                    if d < d2[p] {
                        d2[p] = d;
                        idx[p] = q;
                    }
                }
            }
        }
    }
    (d2, idx)
}

/// Weighted F-measure reference.
pub fn weighted_f_oracle(pred: &Tensor, gt: &Tensor) -> f64 {
    let (p, h, w) = plane(pred, "weighted_f_oracle pred");
    let (g, gh, gw) = plane(gt, "weighted_f_oracle gt");
    assert_eq!((h, w), (gh, gw));
    let n = h * w;
    let fg: Vec<bool> = g.iter().map(|&v| v > 0.5).collect();
    if fg.iter().all(|&v| !v) {
        return 0.0;
    }
    let e: Vec<f64> = p.iter().zip(g).map(|(&pv, &gv)| (pv - gv).abs()).collect();
    let (d2, idx) = edt_brute(&fg, h, w);
    // Error transfer: background pixels take the error of their nearest
    // foreground pixel.
    let mut et = e.clone();
    for i in 0..n {
        if !fg[i] {
            et[i] = e[idx[i]];
        }
    }
    // 7x7 sigma=5 Gaussian from its 2-D closed form, normalized, applied as
    // a zero-padded correlation.
    let mut k = [[0.0f64; 7]; 7];
    let mut ksum = 0.0;
    for (i, row) in k.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let dy = i as f64 - 3.0;
            let dx = j as f64 - 3.0;
            *v = (-(dx * dx + dy * dy) / (2.0 * 25.0)).exp();
            ksum += *v;
        }
    }
    let mut ea = vec![0.0f64; n];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (i, row) in k.iter().enumerate() {
                for (j, &kv) in row.iter().enumerate() {
                    let rr = r as isize + i as isize - 3;
                    let cc = c as isize + j as isize - 3;
                    if rr >= 0 && rr < h as isize && cc >= 0 && cc < w as isize {
                        acc += kv * et[rr as usize * w + cc as usize];
                    }
                }
            }
            ea[r * w + c] = acc / ksum;
        }
    }
    let mut min_e_ea = e.clone();
    for i in 0..n {
        if fg[i] && ea[i] < e[i] {
            min_e_ea[i] = ea[i];
        }
    }
    // Pixel importance: distance-decayed weight on the background.
    let mut b = vec![1.0f64; n];
    for i in 0..n {
        if !fg[i] {
            let dst = (d2[i] as f64).sqrt();
            b[i] = 2.0 - (0.5f64.ln() / 5.0 * dst).exp();
        }
    }
    let ew: Vec<f64> = min_e_ea.iter().zip(&b).map(|(&m, &bv)| m * bv).collect();
    let gt_sum: f64 = g.iter().sum();
    let ew_fg: Vec<f64> = ew.iter().zip(&fg).filter(|(_, &f)| f).map(|(&v, _)| v).collect();
    let ew_bg: f64 = ew.iter().zip(&fg).filter(|(_, &f)| !f).map(|(&v, _)| v).sum();
    let tpw = gt_sum - ew_fg.iter().sum::<f64>();
    let fpw = ew_bg;
    let r = 1.0 - mean(&ew_fg);
    let prec = tpw / (EPS + tpw + fpw);
    2.0 * r * prec / (EPS + r + prec)
}

/// Enhanced-alignment measure reference for one binarized prediction:
/// the enhanced alignment matrix averaged over pixels.
fn e_measure_binary(fm: &[f64], gt: &[f64]) -> f64 {
    let n = fm.len();
    let gt_sum: f64 = gt.iter().sum();
    let enhanced: Vec<f64> = if gt_sum == 0.0 {
        fm.iter().map(|&v| 1.0 - v).collect()
    } else if gt_sum == n as f64 {
        fm.to_vec()
    } else {
        let mu_fm = mean(fm);
        let mu_gt = mean(gt);
        fm.iter()
            .zip(gt)
            .map(|(&f, &g)| {
                let af = f - mu_fm;
                let ag = g - mu_gt;
                let align = 2.0 * ag * af / (ag * ag + af * af + EPS);
                (align + 1.0) * (align + 1.0) / 4.0
            })
            .collect()
    };
    enhanced.iter().sum::<f64>() / n as f64
}

/// Max E-measure reference: best score over 256 binarization thresholds.
pub fn e_measure_oracle(pred: &Tensor, gt: &Tensor) -> f64 {
    let (p, h, w) = plane(pred, "e_measure_oracle pred");
    let (g, gh, gw) = plane(gt, "e_measure_oracle gt");
    assert_eq!((h, w), (gh, gw));
    let mut best = f64::NEG_INFINITY;
    for i in 0..256 {
        let t = i as f64 / 255.0;
        let fm: Vec<f64> = p.iter().map(|&v| if v >= t { 1.0 } else { 0.0 }).collect();
        best = best.max(e_measure_binary(&fm, g));
    }
    best
}
