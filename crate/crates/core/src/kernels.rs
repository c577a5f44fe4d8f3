//! Low-level numeric kernels used by the autodiff tape: direct 2-d
//! convolution (forward and the three backward passes), bilinear resampling,
//! and depthwise separable 1-d correlation for windowed statistics.
//!
//! All kernels are plain loops over contiguous rows; inner loops run along
//! the x axis so the compiler can vectorize them.

/// Output spatial size of a convolution.
pub fn conv_out_dim(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - k) / stride + 1
}

/// Direct convolution: x [Cin,H,W], w [Cout,Cin,K,K], out [Cout,OH,OW].
#[allow(clippy::too_many_arguments)]
pub fn conv2d_fwd(
    x: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    wgt: &[f64],
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    bias: Option<&[f64]>,
    out: &mut [f64],
) {
    let oh = conv_out_dim(h, k, stride, pad);
    let ow = conv_out_dim(w, k, stride, pad);
    debug_assert_eq!(out.len(), cout * oh * ow);
    for co in 0..cout {
        let b = bias.map_or(0.0, |b| b[co]);
        out[co * oh * ow..(co + 1) * oh * ow].fill(b);
    }
    for co in 0..cout {
        let out_plane = co * oh * ow;
        for ci in 0..cin {
            let x_plane = ci * h * w;
            for ky in 0..k {
                for kx in 0..k {
                    let wv = wgt[((co * cin + ci) * k + ky) * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    // Valid output rows: iy = oy*stride + ky - pad in [0, h).
                    let oy_lo = pad.saturating_sub(ky).div_ceil(stride);
                    let oy_hi = if h + pad > ky {
                        (((h + pad - ky - 1) / stride) + 1).min(oh)
                    } else {
                        0
                    };
                    let ox_lo = pad.saturating_sub(kx).div_ceil(stride);
                    let ox_hi = if w + pad > kx {
                        (((w + pad - kx - 1) / stride) + 1).min(ow)
                    } else {
                        0
                    };
                    if oy_lo >= oy_hi || ox_lo >= ox_hi {
                        continue;
                    }
                    for oy in oy_lo..oy_hi {
                        let iy = oy * stride + ky - pad;
                        let xrow = x_plane + iy * w;
                        let orow = out_plane + oy * ow;
                        if stride == 1 {
                            let ix0 = ox_lo + kx - pad;
                            let n = ox_hi - ox_lo;
                            let xs = &x[xrow + ix0..xrow + ix0 + n];
                            let os = &mut out[orow + ox_lo..orow + ox_lo + n];
                            for i in 0..n {
                                os[i] += wv * xs[i];
                            }
                        } else {
                            for ox in ox_lo..ox_hi {
                                let ix = ox * stride + kx - pad;
                                out[orow + ox] += wv * x[xrow + ix];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Gradient w.r.t. the convolution input.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_bwd_input(
    dy: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    wgt: &[f64],
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    dx: &mut [f64],
) {
    let oh = conv_out_dim(h, k, stride, pad);
    let ow = conv_out_dim(w, k, stride, pad);
    for co in 0..cout {
        let dy_plane = co * oh * ow;
        for ci in 0..cin {
            let dx_plane = ci * h * w;
            for ky in 0..k {
                for kx in 0..k {
                    let wv = wgt[((co * cin + ci) * k + ky) * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let oy_lo = pad.saturating_sub(ky).div_ceil(stride);
                    let oy_hi = if h + pad > ky {
                        (((h + pad - ky - 1) / stride) + 1).min(oh)
                    } else {
                        0
                    };
                    let ox_lo = pad.saturating_sub(kx).div_ceil(stride);
                    let ox_hi = if w + pad > kx {
                        (((w + pad - kx - 1) / stride) + 1).min(ow)
                    } else {
                        0
                    };
                    if oy_lo >= oy_hi || ox_lo >= ox_hi {
                        continue;
                    }
                    for oy in oy_lo..oy_hi {
                        let iy = oy * stride + ky - pad;
                        let dxrow = dx_plane + iy * w;
                        let dyrow = dy_plane + oy * ow;
                        if stride == 1 {
                            let ix0 = ox_lo + kx - pad;
                            let n = ox_hi - ox_lo;
                            let dys = &dy[dyrow + ox_lo..dyrow + ox_lo + n];
                            let dxs = &mut dx[dxrow + ix0..dxrow + ix0 + n];
                            for i in 0..n {
                                dxs[i] += wv * dys[i];
                            }
                        } else {
                            for ox in ox_lo..ox_hi {
                                let ix = ox * stride + kx - pad;
                                dx[dxrow + ix] += wv * dy[dyrow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Gradient w.r.t. the convolution weights.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_bwd_weight(
    dy: &[f64],
    x: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    dw: &mut [f64],
) {
    let oh = conv_out_dim(h, k, stride, pad);
    let ow = conv_out_dim(w, k, stride, pad);
    for co in 0..cout {
        let dy_plane = co * oh * ow;
        for ci in 0..cin {
            let x_plane = ci * h * w;
            for ky in 0..k {
                for kx in 0..k {
                    let oy_lo = pad.saturating_sub(ky).div_ceil(stride);
                    let oy_hi = if h + pad > ky {
                        (((h + pad - ky - 1) / stride) + 1).min(oh)
                    } else {
                        0
                    };
                    let ox_lo = pad.saturating_sub(kx).div_ceil(stride);
                    let ox_hi = if w + pad > kx {
                        (((w + pad - kx - 1) / stride) + 1).min(ow)
                    } else {
                        0
                    };
                    if oy_lo >= oy_hi || ox_lo >= ox_hi {
                        continue;
                    }
                    let mut acc = 0.0;
                    for oy in oy_lo..oy_hi {
                        let iy = oy * stride + ky - pad;
                        let xrow = x_plane + iy * w;
                        let dyrow = dy_plane + oy * ow;
                        if stride == 1 {
                            let ix0 = ox_lo + kx - pad;
                            let n = ox_hi - ox_lo;
                            let xs = &x[xrow + ix0..xrow + ix0 + n];
                            let dys = &dy[dyrow + ox_lo..dyrow + ox_lo + n];
                            for i in 0..n {
                                acc += xs[i] * dys[i];
                            }
                        } else {
                            for ox in ox_lo..ox_hi {
                                let ix = ox * stride + kx - pad;
                                acc += x[xrow + ix] * dy[dyrow + ox];
                            }
                        }
                    }
                    dw[((co * cin + ci) * k + ky) * k + kx] += acc;
                }
            }
        }
    }
}

/// Gradient w.r.t. the convolution bias.
pub fn conv2d_bwd_bias(dy: &[f64], cout: usize, oh: usize, ow: usize, db: &mut [f64]) {
    for co in 0..cout {
        db[co] += dy[co * oh * ow..(co + 1) * oh * ow].iter().sum::<f64>();
    }
}

/// Source coordinate and interpolation weights for one output coordinate
/// under half-pixel-center bilinear mapping.
#[inline]
fn bilinear_axis(o: usize, scale: f64, in_dim: usize) -> (usize, usize, f64) {
    let src = (o as f64 + 0.5) * scale - 0.5;
    let src = src.clamp(0.0, (in_dim - 1) as f64);
    let i0 = src.floor() as usize;
    let i1 = (i0 + 1).min(in_dim - 1);
    (i0, i1, src - i0 as f64)
}

/// Bilinear resize of [C,H,W] to [C,OH,OW] with half-pixel centers.
pub fn bilinear_fwd(x: &[f64], c: usize, h: usize, w: usize, oh: usize, ow: usize, out: &mut [f64]) {
    let sy = h as f64 / oh as f64;
    let sx = w as f64 / ow as f64;
    // Precompute per-axis taps once; reused across channels.
    let ys: Vec<(usize, usize, f64)> = (0..oh).map(|o| bilinear_axis(o, sy, h)).collect();
    let xs: Vec<(usize, usize, f64)> = (0..ow).map(|o| bilinear_axis(o, sx, w)).collect();
    for ci in 0..c {
        let xp = ci * h * w;
        let op = ci * oh * ow;
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            let r0 = xp + y0 * w;
            let r1 = xp + y1 * w;
            let orow = op + oy * ow;
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let v00 = x[r0 + x0];
                let v01 = x[r0 + x1];
                let v10 = x[r1 + x0];
                let v11 = x[r1 + x1];
                let top = v00 + (v01 - v00) * fx;
                let bot = v10 + (v11 - v10) * fx;
                out[orow + ox] = top + (bot - top) * fy;
            }
        }
    }
}

/// Backward of bilinear resize: scatters output gradients to the four taps.
pub fn bilinear_bwd(dy: &[f64], c: usize, h: usize, w: usize, oh: usize, ow: usize, dx: &mut [f64]) {
    let sy = h as f64 / oh as f64;
    let sx = w as f64 / ow as f64;
    let ys: Vec<(usize, usize, f64)> = (0..oh).map(|o| bilinear_axis(o, sy, h)).collect();
    let xs: Vec<(usize, usize, f64)> = (0..ow).map(|o| bilinear_axis(o, sx, w)).collect();
    for ci in 0..c {
        let xp = ci * h * w;
        let op = ci * oh * ow;
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            let r0 = xp + y0 * w;
            let r1 = xp + y1 * w;
            let drow = op + oy * ow;
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let g = dy[drow + ox];
                dx[r0 + x0] += g * (1.0 - fy) * (1.0 - fx);
                dx[r0 + x1] += g * (1.0 - fy) * fx;
                dx[r1 + x0] += g * fy * (1.0 - fx);
                dx[r1 + x1] += g * fy * fx;
            }
        }
    }
}

/// Depthwise valid 1-d correlation along x: out [C,H,W-K+1].
pub fn sep_corr_h_fwd(x: &[f64], c: usize, h: usize, w: usize, kern: &[f64], out: &mut [f64]) {
    let k = kern.len();
    let ow = w - k + 1;
    for ci in 0..c {
        for y in 0..h {
            let xrow = (ci * h + y) * w;
            let orow = (ci * h + y) * ow;
            for ox in 0..ow {
                let mut acc = 0.0;
                for (i, &kv) in kern.iter().enumerate() {
                    acc += kv * x[xrow + ox + i];
                }
                out[orow + ox] = acc;
            }
        }
    }
}

pub fn sep_corr_h_bwd(dy: &[f64], c: usize, h: usize, w: usize, kern: &[f64], dx: &mut [f64]) {
    let k = kern.len();
    let ow = w - k + 1;
    for ci in 0..c {
        for y in 0..h {
            let dxrow = (ci * h + y) * w;
            let dyrow = (ci * h + y) * ow;
            for ox in 0..ow {
                let g = dy[dyrow + ox];
                for (i, &kv) in kern.iter().enumerate() {
                    dx[dxrow + ox + i] += kv * g;
                }
            }
        }
    }
}

/// Depthwise valid 1-d correlation along y: out [C,H-K+1,W].
pub fn sep_corr_v_fwd(x: &[f64], c: usize, h: usize, w: usize, kern: &[f64], out: &mut [f64]) {
    let k = kern.len();
    let oh = h - k + 1;
    for ci in 0..c {
        for oy in 0..oh {
            let orow = (ci * oh + oy) * w;
            for (i, &kv) in kern.iter().enumerate() {
                let xrow = (ci * h + oy + i) * w;
                if i == 0 {
                    for xx in 0..w {
                        out[orow + xx] = kv * x[xrow + xx];
                    }
                } else {
                    for xx in 0..w {
                        out[orow + xx] += kv * x[xrow + xx];
                    }
                }
            }
        }
    }
}

pub fn sep_corr_v_bwd(dy: &[f64], c: usize, h: usize, w: usize, kern: &[f64], dx: &mut [f64]) {
    let k = kern.len();
    let oh = h - k + 1;
    for ci in 0..c {
        for oy in 0..oh {
            let dyrow = (ci * oh + oy) * w;
            for (i, &kv) in kern.iter().enumerate() {
                let dxrow = (ci * h + oy + i) * w;
                for xx in 0..w {
                    dx[dxrow + xx] += kv * dy[dyrow + xx];
                }
            }
        }
    }
}

/// Normalized 1-d Gaussian taps.
pub fn gaussian_kernel(len: usize, sigma: f64) -> Vec<f64> {
    let half = (len - 1) as f64 / 2.0;
    let mut k: Vec<f64> = (0..len)
        .map(|i| {
            let d = i as f64 - half;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    for v in &mut k {
        *v /= s;
    }
    k
}
