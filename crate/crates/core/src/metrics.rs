//! Evaluation metrics: PSNR, SSIM, MAE, S-measure, weighted F-measure, and
//! max E-measure, plus the CSV report the evaluator emits. The three
//! saliency metrics follow the reference implementations of their original
//! papers (Fan 2017 structure-measure, Margolin 2014 weighted F-beta, Fan
//! 2018 enhanced-alignment measure), including their degenerate-input
//! conventions, which are locked by golden tests.

use std::path::Path;

use crate::error::{Error, Result};
use crate::kernels::{gaussian_kernel, sep_corr_h_fwd, sep_corr_v_fwd};
use crate::losses::{SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW};
use crate::tensor::{check_same_shape, Image, SaliencyMask, Tensor};

/// Peak signal-to-noise ratio in decibels for unit-range images, capped at
/// 99 dB when the mean squared error drops below 1e-10.
pub fn psnr(pred: &Image, gt: &Image) -> Result<f64> {
    check_same_shape(pred, gt, "psnr")?;
    let n = pred.numel() as f64;
    let mse: f64 = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    if mse < 1e-10 {
        Ok(99.0)
    } else {
        Ok(10.0 * (1.0 / mse).log10())
    }
}

/// Mean structural similarity: 11x11 Gaussian window (sigma 1.5) over the
/// valid interior, averaged over channels and positions. Matches the
/// differentiable form used by the content loss.
pub fn ssim(pred: &Image, gt: &Image) -> Result<f64> {
    check_same_shape(pred, gt, "ssim")?;
    let (c, h, w) = pred.dims3();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::TooSmall {
            context: "ssim".to_string(),
            min_dim: SSIM_WINDOW,
            got: h.min(w),
        });
    }
    let kern = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA);
    let oh = h - SSIM_WINDOW + 1;
    let ow = w - SSIM_WINDOW + 1;
    let blur = |x: &[f64]| -> Vec<f64> {
        let mut mid = vec![0.0; c * h * ow];
        sep_corr_h_fwd(x, c, h, w, &kern, &mut mid);
        let mut out = vec![0.0; c * oh * ow];
        sep_corr_v_fwd(&mid, c, h, ow, &kern, &mut out);
        out
    };
    let x = pred.data();
    let y = gt.data();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let mu_x = blur(x);
    let mu_y = blur(y);
    let e_xx = blur(&xx);
    let e_yy = blur(&yy);
    let e_xy = blur(&xy);
    let mut acc = 0.0;
    for i in 0..mu_x.len() {
        let mx = mu_x[i];
        let my = mu_y[i];
        let vx = e_xx[i] - mx * mx;
        let vy = e_yy[i] - my * my;
        let cov = e_xy[i] - mx * my;
        let num = (2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2);
        let den = (mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2);
        acc += num / den;
    }
    Ok(acc / mu_x.len() as f64)
}

/// Mean absolute error.
pub fn mae_metric(pred: &SaliencyMask, gt: &SaliencyMask) -> Result<f64> {
    check_same_shape(pred, gt, "mae")?;
    let n = pred.numel() as f64;
    Ok(pred.data().iter().zip(gt.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / n)
}

fn plane<'a>(t: &'a Tensor, context: &str) -> Result<(usize, usize, &'a [f64])> {
    let (c, h, w) = t.dims3();
    if c != 1 {
        return Err(Error::shape(context, "[1,H,W]", format!("[{c},{h},{w}]")));
    }
    Ok((h, w, t.data()))
}

fn mean_of(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Sample standard deviation (n-1 normalization); 0 for fewer than two
/// values, matching MATLAB's std2 on the reference code path.
fn sample_std(v: &[f64]) -> f64 {
    let n = v.len();
    if n <= 1 {
        return 0.0;
    }
    let m = mean_of(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n as f64 - 1.0)).sqrt()
}

/// Object-level score 2x / (x^2 + 1 + sigma_x) over the pixels selected by
/// `select`.
fn object_score(pred: &[f64], select: impl Fn(usize) -> bool) -> f64 {
    let vals: Vec<f64> = (0..pred.len()).filter(|&i| select(i)).map(|i| pred[i]).collect();
    let x = mean_of(&vals);
    let sigma = sample_std(&vals);
    2.0 * x / (x * x + 1.0 + sigma + f64::EPSILON)
}

fn s_object(pred: &[f64], gt: &[f64]) -> f64 {
    let fg: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| if *g > 0.5 { *p } else { 0.0 }).collect();
    let bg: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| if *g > 0.5 { 0.0 } else { 1.0 - *p }).collect();
    let o_fg = object_score(&fg, |i| gt[i] > 0.5);
    let o_bg = object_score(&bg, |i| gt[i] <= 0.5);
    let u = mean_of(gt);
    u * o_fg + (1.0 - u) * o_bg
}

/// Foreground centroid with 1-based indices, rounded half away from zero;
/// image center when the mask is empty.
fn centroid_1based(gt: &[f64], h: usize, w: usize) -> (usize, usize) {
    let total: f64 = gt.iter().sum();
    if total == 0.0 {
        return ((w as f64 / 2.0).round() as usize, (h as f64 / 2.0).round() as usize);
    }
    let mut sx = 0.0;
    let mut sy = 0.0;
    for r in 0..h {
        for c in 0..w {
            let g = gt[r * w + c];
            sx += g * (c + 1) as f64;
            sy += g * (r + 1) as f64;
        }
    }
    ((sx / total).round() as usize, (sy / total).round() as usize)
}

/// Region similarity of one quadrant, the structure-measure's own
/// statistic: 4*x*y*sigma_xy / ((x^2+y^2) * (sigma_x^2+sigma_y^2) + eps),
/// with the 1.0 / 0.0 conventions on a zero numerator. Empty quadrants
/// score 0; their area weight is provably 0.
fn region_quadrant(pred: &[f64], gt: &[f64]) -> f64 {
    let n = pred.len();
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    let x = mean_of(pred);
    let y = mean_of(gt);
    let denom = nf - 1.0 + f64::EPSILON;
    let mut sx2 = 0.0;
    let mut sy2 = 0.0;
    let mut sxy = 0.0;
    for i in 0..n {
        let dx = pred[i] - x;
        let dy = gt[i] - y;
        sx2 += dx * dx;
        sy2 += dy * dy;
        sxy += dx * dy;
    }
    sx2 /= denom;
    sy2 /= denom;
    sxy /= denom;
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sx2 + sy2);
    if alpha != 0.0 {
        alpha / (beta + f64::EPSILON)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn slice_quadrant(src: &[f64], w: usize, r0: usize, r1: usize, c0: usize, c1: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity((r1 - r0) * (c1 - c0));
    for r in r0..r1 {
        out.extend_from_slice(&src[r * w + c0..r * w + c1]);
    }
    out
}

fn s_region(pred: &[f64], gt: &[f64], h: usize, w: usize) -> f64 {
    let (cx, cy) = centroid_1based(gt, h, w);
    let area = (h * w) as f64;
    // Quadrant split at the centroid (1-based): rows 1..cy and cols 1..cx
    // belong to the top-left block.
    let w1 = (cx * cy) as f64 / area;
    let w2 = ((w - cx) * cy) as f64 / area;
    let w3 = (cx * (h - cy)) as f64 / area;
    let w4 = 1.0 - w1 - w2 - w3;
    let quads = [
        (0, cy, 0, cx),
        (0, cy, cx, w),
        (cy, h, 0, cx),
        (cy, h, cx, w),
    ];
    let weights = [w1, w2, w3, w4];
    let mut total = 0.0;
    for (q, wt) in quads.iter().zip(weights) {
        let p = slice_quadrant(pred, w, q.0, q.1, q.2, q.3);
        let g = slice_quadrant(gt, w, q.0, q.1, q.2, q.3);
        total += wt * region_quadrant(&p, &g);
    }
    total
}

/// Structure-measure: 0.5 * object similarity + 0.5 * region similarity.
/// Degenerate ground truths follow the reference code: all-background
/// scores 1 - mean(pred), all-foreground scores mean(pred); the result is
/// floored at 0.
pub fn s_measure(pred: &SaliencyMask, gt: &SaliencyMask) -> Result<f64> {
    check_same_shape(pred, gt, "s_measure")?;
    let (h, w, p) = plane(pred, "s_measure")?;
    let (_, _, g) = plane(gt, "s_measure")?;
    let y = mean_of(g);
    if y == 0.0 {
        return Ok(1.0 - mean_of(p));
    }
    if y == 1.0 {
        return Ok(mean_of(p));
    }
    let q = 0.5 * s_object(p, g) + 0.5 * s_region(p, g, h, w);
    Ok(q.max(0.0))
}

/// Exact Euclidean distance transform. For every pixel, the squared
/// distance to the nearest foreground pixel and that pixel's index; ties
/// resolve to the smallest (row, column). All-background inputs yield
/// usize::MAX distances with self indices.
pub mod edt {
    /// Squared distances and nearest-foreground indices (row-major).
    pub fn exact(fg: &[bool], h: usize, w: usize) -> (Vec<usize>, Vec<usize>) {
        // nearest_col[r*w+c] = column of the nearest foreground pixel within
        // row r (ties to the left), or usize::MAX when row r is empty.
        let mut nearest_col = vec![usize::MAX; h * w];
        for r in 0..h {
            let row = r * w;
            let mut last: Option<usize> = None;
            for c in 0..w {
                if fg[row + c] {
                    last = Some(c);
                }
                if let Some(l) = last {
                    nearest_col[row + c] = l;
                }
            }
            let mut next: Option<usize> = None;
            for c in (0..w).rev() {
                if fg[row + c] {
                    next = Some(c);
                }
                if let Some(n) = next {
                    let cur = nearest_col[row + c];
                    let better = cur == usize::MAX || {
                        let dn = n - c;
                        let dc = c - cur;
                        // Strictly closer wins; an exact tie keeps the left
                        // (smaller-column) candidate.
                        dn < dc
                    };
                    if better {
                        nearest_col[row + c] = n;
                    }
                }
            }
        }
        let mut dist2 = vec![usize::MAX; h * w];
        let mut index = vec![0usize; h * w];
        for r0 in 0..h {
            for c0 in 0..w {
                let i0 = r0 * w + c0;
                let mut best = usize::MAX;
                let mut best_idx = i0;
                for r in 0..h {
                    let nc = nearest_col[r * w + c0];
                    if nc == usize::MAX {
                        continue;
                    }
                    let dr = r.abs_diff(r0);
                    let dc = nc.abs_diff(c0);
                    let d2 = dr * dr + dc * dc;
                    if d2 < best || (d2 == best && r * w + nc < best_idx) {
                        best = d2;
                        best_idx = r * w + nc;
                    }
                }
                dist2[i0] = best;
                index[i0] = if best == usize::MAX { i0 } else { best_idx };
            }
        }
        (dist2, index)
    }
}

/// 7x7 Gaussian (sigma 5) correlation with zero padding, the weighted
/// F-measure's dependency filter.
fn gauss7_filter(x: &[f64], h: usize, w: usize) -> Vec<f64> {
    let taps = gaussian_kernel(7, 5.0);
    let mut k2 = vec![0.0; 49];
    for (i, a) in taps.iter().enumerate() {
        for (j, b) in taps.iter().enumerate() {
            k2[i * 7 + j] = a * b;
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for i in 0..7usize {
                let rr = r as isize + i as isize - 3;
                if rr < 0 || rr >= h as isize {
                    continue;
                }
                for j in 0..7usize {
                    let cc = c as isize + j as isize - 3;
                    if cc < 0 || cc >= w as isize {
                        continue;
                    }
                    acc += k2[i * 7 + j] * x[rr as usize * w + cc as usize];
                }
            }
            out[r * w + c] = acc;
        }
    }
    out
}

/// Weighted F-beta measure (beta^2 = 1) with the reference dependency and
/// importance weighting. An empty ground truth scores 0 by convention.
pub fn weighted_f_measure(pred: &SaliencyMask, gt: &SaliencyMask) -> Result<f64> {
    check_same_shape(pred, gt, "weighted_f_measure")?;
    let (h, w, p) = plane(pred, "weighted_f_measure")?;
    let (_, _, g) = plane(gt, "weighted_f_measure")?;
    let fg: Vec<bool> = g.iter().map(|v| *v > 0.5).collect();
    let n_fg = fg.iter().filter(|b| **b).count();
    if n_fg == 0 {
        return Ok(0.0);
    }
    let e: Vec<f64> = p.iter().zip(g).map(|(a, b)| (a - b).abs()).collect();
    let (dist2, index) = edt::exact(&fg, h, w);
    // Background pixels inherit the error of their nearest foreground pixel
    // before the dependency blur.
    let mut et = e.clone();
    for i in 0..et.len() {
        if !fg[i] {
            et[i] = e[index[i]];
        }
    }
    let ea = gauss7_filter(&et, h, w);
    let mut min_e_ea = e.clone();
    for i in 0..min_e_ea.len() {
        if fg[i] && ea[i] < e[i] {
            min_e_ea[i] = ea[i];
        }
    }
    // Importance: foreground weighs 1; background decays toward 2 with
    // distance from the foreground.
    let ln_half = 0.5f64.ln();
    let mut ew = vec![0.0; e.len()];
    for i in 0..ew.len() {
        let b = if fg[i] {
            1.0
        } else {
            2.0 - (ln_half / 5.0 * (dist2[i] as f64).sqrt()).exp()
        };
        ew[i] = min_e_ea[i] * b;
    }
    let sum_ew_fg: f64 = (0..ew.len()).filter(|&i| fg[i]).map(|i| ew[i]).sum();
    let sum_ew_bg: f64 = (0..ew.len()).filter(|&i| !fg[i]).map(|i| ew[i]).sum();
    let tpw = n_fg as f64 - sum_ew_fg;
    let fpw = sum_ew_bg;
    let recall = 1.0 - sum_ew_fg / n_fg as f64;
    let precision = tpw / (f64::EPSILON + tpw + fpw);
    Ok(2.0 * recall * precision / (f64::EPSILON + recall + precision))
}

/// Enhanced-alignment score of one binarized map against a binary ground
/// truth, with the reference degenerate conventions. Normalized by the
/// pixel count so a perfect match scores 1 and the range stays in [0, 1].
fn e_align(fm: &[bool], g: &[f64], n: usize) -> f64 {
    let n_fg = g.iter().filter(|v| **v > 0.5).count();
    let sum: f64 = if n_fg == 0 {
        fm.iter().map(|b| if *b { 0.0 } else { 1.0 }).sum()
    } else if n_fg == n {
        fm.iter().map(|b| if *b { 1.0 } else { 0.0 }).sum()
    } else {
        let mu_fm = fm.iter().filter(|b| **b).count() as f64 / n as f64;
        let mu_gt = n_fg as f64 / n as f64;
        let mut acc = 0.0;
        for i in 0..n {
            let a_fm = if fm[i] { 1.0 } else { 0.0 } - mu_fm;
            let a_gt = if g[i] > 0.5 { 1.0 } else { 0.0 } - mu_gt;
            let align = 2.0 * a_gt * a_fm / (a_gt * a_gt + a_fm * a_fm + f64::EPSILON);
            acc += (align + 1.0) * (align + 1.0) / 4.0;
        }
        acc
    };
    sum / n as f64
}

/// Max E-measure: the enhanced-alignment score maximized over 256 uniform
/// binarization thresholds t = i/255 (prediction >= t).
pub fn e_measure(pred: &SaliencyMask, gt: &SaliencyMask) -> Result<f64> {
    check_same_shape(pred, gt, "e_measure")?;
    let (_, _, p) = plane(pred, "e_measure")?;
    let (_, _, g) = plane(gt, "e_measure")?;
    let n = p.len();
    let mut best = f64::NEG_INFINITY;
    for i in 0..256usize {
        let t = i as f64 / 255.0;
        let fm: Vec<bool> = p.iter().map(|v| *v >= t).collect();
        best = best.max(e_align(&fm, g, n));
    }
    Ok(best)
}

/// Per-image metric values for one evaluated sample.
#[derive(Clone, Debug)]
pub struct MetricRow {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
    pub mae: f64,
    pub s_measure: f64,
    pub weighted_f_measure: f64,
    pub e_measure: f64,
}

/// Per-image rows plus their arithmetic mean, serialized as the eval CSV.
#[derive(Clone, Debug, Default)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    /// Arithmetic mean over rows (the MEAN row of the CSV).
    pub fn mean(&self) -> MetricRow {
        let n = self.rows.len().max(1) as f64;
        let sum = |f: fn(&MetricRow) -> f64| self.rows.iter().map(f).sum::<f64>() / n;
        MetricRow {
            name: "MEAN".to_string(),
            psnr: sum(|r| r.psnr),
            ssim: sum(|r| r.ssim),
            mae: sum(|r| r.mae),
            s_measure: sum(|r| r.s_measure),
            weighted_f_measure: sum(|r| r.weighted_f_measure),
            e_measure: sum(|r| r.e_measure),
        }
    }

    /// Writes the CSV: one row per image, a final MEAN row, and reserved
    /// empty columns for no-reference metrics the schema anticipates.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }

    /// Renders the CSV to a string (used by round-trip comparisons).
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("filename,psnr,ssim,mae,s_measure,weighted_f_measure,e_measure,uiqm,uciqe,pcqi\n");
        for row in self.rows.iter().chain(std::iter::once(&self.mean())) {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},,,\n",
                row.name, row.psnr, row.ssim, row.mae, row.s_measure, row.weighted_f_measure, row.e_measure
            ));
        }
        out
    }
}
