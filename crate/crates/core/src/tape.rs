//! Reverse-mode automatic differentiation over f64 tensors.
//!
//! The tape evaluates eagerly: every operation computes its value when it is
//! recorded, so shapes are checked immediately and batch-norm statistics can
//! be read out mid-forward. `backward` then walks the recorded nodes in
//! reverse, accumulating gradients for every node that (transitively) depends
//! on a gradient-tracked leaf.
//!
//! Binary elementwise ops broadcast over the three [C,H,W] axes with
//! NumPy-style rules (each axis must match or be 1); gradients are reduced
//! back over the broadcast axes.

use crate::kernels;
use crate::tensor::Tensor;

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Abs(Var),
    Ln(Var),
    Sqrt(Var),
    Clamp(Var, f64, f64),
    AddScalar(Var),
    MulScalar(Var, f64),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
        grad_w: bool,
    },
    ConcatC(Vec<Var>),
    SliceC {
        x: Var,
        start: usize,
        len: usize,
    },
    Bilinear(Var),
    MeanHw(Var),
    MeanAll(Var),
    SumAll(Var),
    SepH {
        x: Var,
        kernel: usize,
    },
    SepV {
        x: Var,
        kernel: usize,
    },
}

struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by `Var`.
pub struct Grads {
    g: Vec<Option<Tensor>>,
}

impl Grads {
    /// Gradient of the backward root w.r.t. `v`, if it was tracked and reached.
    pub fn of(&self, v: Var) -> Option<&Tensor> {
        self.g.get(v.0).and_then(|o| o.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.g.get_mut(v.0).and_then(|o| o.take())
    }
}

/// Strided read view implementing broadcast fetch: axes of size 1 get
/// stride 0 so the same element serves the whole broadcast axis.
struct View3<'a> {
    data: &'a [f64],
    sc: usize,
    sy: usize,
    sx: usize,
}

fn dims3(t: &Tensor) -> (usize, usize, usize) {
    t.dims3()
}

fn broadcast_shape(a: &Tensor, b: &Tensor, what: &str) -> (usize, usize, usize) {
    let (ac, ah, aw) = dims3(a);
    let (bc, bh, bw) = dims3(b);
    let m = |x: usize, y: usize, axis: &str| -> usize {
        if x == y || y == 1 {
            x.max(y)
        } else if x == 1 {
            y
        } else {
            panic!("{what}: incompatible {axis} axis {x} vs {y}");
        }
    };
    (m(ac, bc, "channel"), m(ah, bh, "height"), m(aw, bw, "width"))
}

fn view3<'a>(t: &'a Tensor, out: (usize, usize, usize)) -> View3<'a> {
    let (tc, th, tw) = dims3(t);
    debug_assert!(tc == out.0 || tc == 1);
    debug_assert!(th == out.1 || th == 1);
    debug_assert!(tw == out.2 || tw == 1);
    View3 {
        data: t.data(),
        sc: if tc == 1 { 0 } else { th * tw },
        sy: if th == 1 { 0 } else { tw },
        sx: if tw == 1 { 0 } else { 1 },
    }
}

/// Elementwise binary op with broadcasting.
fn bcast_apply(a: &Tensor, b: &Tensor, what: &str, f: impl Fn(f64, f64) -> f64) -> Tensor {
    if a.shape() == b.shape() {
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        return Tensor::from_vec(a.shape(), data);
    }
    let (c, h, w) = broadcast_shape(a, b, what);
    let av = view3(a, (c, h, w));
    let bv = view3(b, (c, h, w));
    let mut out = vec![0.0; c * h * w];
    let mut i = 0;
    for ci in 0..c {
        for yi in 0..h {
            let ab = ci * av.sc + yi * av.sy;
            let bb = ci * bv.sc + yi * bv.sy;
            for xi in 0..w {
                out[i] = f(av.data[ab + xi * av.sx], bv.data[bb + xi * bv.sx]);
                i += 1;
            }
        }
    }
    Tensor::from_vec(&[c, h, w], out)
}

/// Accumulates per-output-element contributions into a gradient tensor whose
/// shape may be a broadcast-reduced version of the output shape.
fn bcast_accumulate(
    target: &mut Tensor,
    out_shape: (usize, usize, usize),
    contrib: impl Fn(usize) -> f64,
) {
    let (c, h, w) = out_shape;
    let (tc, th, tw) = dims3(target);
    if (tc, th, tw) == (c, h, w) {
        let data = target.data_mut();
        for (i, slot) in data.iter_mut().enumerate() {
            *slot += contrib(i);
        }
        return;
    }
    let sc = if tc == 1 { 0 } else { th * tw };
    let sy = if th == 1 { 0 } else { tw };
    let sx = if tw == 1 { 0 } else { 1 };
    let data = target.data_mut();
    let mut i = 0;
    for ci in 0..c {
        for yi in 0..h {
            let tb = ci * sc + yi * sy;
            for xi in 0..w {
                data[tb + xi * sx] += contrib(i);
                i += 1;
            }
        }
    }
}

/// The autodiff tape.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    kernels: Vec<Vec<f64>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Value of a node.
    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Leaf whose gradient will be computed (parameters, probed inputs).
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t, true)
    }

    /// Leaf treated as a constant (ground truths, frozen weights, buffers).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t, false)
    }

    /// Registers fixed filter taps for the separable correlation ops.
    pub fn register_kernel(&mut self, taps: Vec<f64>) -> usize {
        self.kernels.push(taps);
        self.kernels.len() - 1
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = bcast_apply(self.value(a), self.value(b), "add", |x, y| x + y);
        let g = self.ng(a) || self.ng(b);
        self.push(Op::Add(a, b), v, g)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = bcast_apply(self.value(a), self.value(b), "sub", |x, y| x - y);
        let g = self.ng(a) || self.ng(b);
        self.push(Op::Sub(a, b), v, g)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = bcast_apply(self.value(a), self.value(b), "mul", |x, y| x * y);
        let g = self.ng(a) || self.ng(b);
        self.push(Op::Mul(a, b), v, g)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let v = bcast_apply(self.value(a), self.value(b), "div", |x, y| x / y);
        let g = self.ng(a) || self.ng(b);
        self.push(Op::Div(a, b), v, g)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|v| v.max(0.0));
        let g = self.ng(x);
        self.push(Op::Relu(x), v, g)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).map(stable_sigmoid);
        let g = self.ng(x);
        self.push(Op::Sigmoid(x), v, g)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::tanh);
        let g = self.ng(x);
        self.push(Op::Tanh(x), v, g)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::abs);
        let g = self.ng(x);
        self.push(Op::Abs(x), v, g)
    }

    pub fn ln(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::ln);
        let g = self.ng(x);
        self.push(Op::Ln(x), v, g)
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::sqrt);
        let g = self.ng(x);
        self.push(Op::Sqrt(x), v, g)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(x).map(|v| v.clamp(lo, hi));
        let g = self.ng(x);
        self.push(Op::Clamp(x, lo, hi), v, g)
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        let v = self.value(x).map(|v| v + s);
        let g = self.ng(x);
        self.push(Op::AddScalar(x), v, g)
    }

    pub fn mul_scalar(&mut self, x: Var, s: f64) -> Var {
        let v = self.value(x).map(|v| v * s);
        let g = self.ng(x);
        self.push(Op::MulScalar(x, s), v, g)
    }

    /// 2-d convolution. `x` is [Cin,H,W], `w` is [Cout,Cin,K,K], `b` is [Cout].
    /// `grad_w=false` skips weight/bias gradients (frozen extractors).
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize, grad_w: bool) -> Var {
        let (cin, h, wdt) = dims3(self.value(x));
        let ws = self.value(w).shape();
        assert_eq!(ws.len(), 4, "conv weight must be [O,I,K,K], got {ws:?}");
        let (cout, wcin, k) = (ws[0], ws[1], ws[2]);
        assert_eq!(ws[2], ws[3], "conv kernel must be square");
        assert_eq!(wcin, cin, "conv input channels {cin} != weight channels {wcin}");
        let oh = kernels::conv_out_dim(h, k, stride, pad);
        let ow = kernels::conv_out_dim(wdt, k, stride, pad);
        let mut out = vec![0.0; cout * oh * ow];
        let bias = b.map(|bv| {
            let bt = self.value(bv);
            assert_eq!(bt.numel(), cout, "conv bias length");
            bt.data().to_vec()
        });
        kernels::conv2d_fwd(
            self.value(x).data(),
            cin,
            h,
            wdt,
            self.value(w).data(),
            cout,
            k,
            stride,
            pad,
            bias.as_deref(),
            &mut out,
        );
        let needs = self.ng(x) || (grad_w && (self.ng(w) || b.map_or(false, |bv| self.ng(bv))));
        self.push(
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
                grad_w,
            },
            Tensor::from_vec(&[cout, oh, ow], out),
            needs,
        )
    }

    /// Concatenation along the channel axis.
    pub fn concat_c(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let (_, h, w) = dims3(self.value(parts[0]));
        let mut c_total = 0;
        for &p in parts {
            let (pc, ph, pw) = dims3(self.value(p));
            assert_eq!((ph, pw), (h, w), "concat_c spatial mismatch");
            c_total += pc;
        }
        let mut data = Vec::with_capacity(c_total * h * w);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let needs = parts.iter().any(|&p| self.ng(p));
        self.push(
            Op::ConcatC(parts.to_vec()),
            Tensor::from_vec(&[c_total, h, w], data),
            needs,
        )
    }

    /// Channel slice [start, start+len).
    pub fn slice_c(&mut self, x: Var, start: usize, len: usize) -> Var {
        let (c, h, w) = dims3(self.value(x));
        assert!(start + len <= c, "slice_c out of range");
        let data = self.value(x).data()[start * h * w..(start + len) * h * w].to_vec();
        let g = self.ng(x);
        self.push(
            Op::SliceC { x, start, len },
            Tensor::from_vec(&[len, h, w], data),
            g,
        )
    }

    /// Bilinear resize to [C,OH,OW] with half-pixel centers.
    pub fn bilinear(&mut self, x: Var, oh: usize, ow: usize) -> Var {
        let (c, h, w) = dims3(self.value(x));
        if (h, w) == (oh, ow) {
            // Identity resize: still record a node so backward passes through.
            let v = self.value(x).clone();
            let g = self.ng(x);
            return self.push(Op::MulScalar(x, 1.0), v, g);
        }
        let mut out = vec![0.0; c * oh * ow];
        kernels::bilinear_fwd(self.value(x).data(), c, h, w, oh, ow, &mut out);
        let g = self.ng(x);
        self.push(Op::Bilinear(x), Tensor::from_vec(&[c, oh, ow], out), g)
    }

    /// Spatial mean per channel: [C,H,W] -> [C,1,1].
    pub fn mean_hw(&mut self, x: Var) -> Var {
        let (c, h, w) = dims3(self.value(x));
        let d = self.value(x).data();
        let mut out = vec![0.0; c];
        for ci in 0..c {
            out[ci] = d[ci * h * w..(ci + 1) * h * w].iter().sum::<f64>() / (h * w) as f64;
        }
        let g = self.ng(x);
        self.push(Op::MeanHw(x), Tensor::from_vec(&[c, 1, 1], out), g)
    }

    /// Mean over all elements -> [1,1,1].
    pub fn mean_all(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let m = t.data().iter().sum::<f64>() / t.numel() as f64;
        let g = self.ng(x);
        self.push(Op::MeanAll(x), Tensor::from_vec(&[1, 1, 1], vec![m]), g)
    }

    /// Sum over all elements -> [1,1,1].
    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum::<f64>();
        let g = self.ng(x);
        self.push(Op::SumAll(x), Tensor::from_vec(&[1, 1, 1], vec![s]), g)
    }

    /// Depthwise valid correlation along x with a registered kernel.
    pub fn sep_h(&mut self, x: Var, kernel: usize) -> Var {
        let (c, h, w) = dims3(self.value(x));
        let k = self.kernels[kernel].len();
        assert!(w >= k, "sep_h input narrower than kernel");
        let mut out = vec![0.0; c * h * (w - k + 1)];
        kernels::sep_corr_h_fwd(self.value(x).data(), c, h, w, &self.kernels[kernel], &mut out);
        let g = self.ng(x);
        self.push(
            Op::SepH { x, kernel },
            Tensor::from_vec(&[c, h, w - k + 1], out),
            g,
        )
    }

    /// Depthwise valid correlation along y with a registered kernel.
    pub fn sep_v(&mut self, x: Var, kernel: usize) -> Var {
        let (c, h, w) = dims3(self.value(x));
        let k = self.kernels[kernel].len();
        assert!(h >= k, "sep_v input shorter than kernel");
        let mut out = vec![0.0; c * (h - k + 1) * w];
        kernels::sep_corr_v_fwd(self.value(x).data(), c, h, w, &self.kernels[kernel], &mut out);
        let g = self.ng(x);
        self.push(
            Op::SepV { x, kernel },
            Tensor::from_vec(&[c, h - k + 1, w], out),
            g,
        )
    }

    /// Scalar value of a [1,1,1] node.
    pub fn scalar(&self, v: Var) -> f64 {
        let t = self.value(v);
        assert_eq!(t.numel(), 1, "scalar() on non-scalar node");
        t.data()[0]
    }

    /// Reverse pass from a scalar root. Returns per-var gradients.
    pub fn backward(&self, root: Var) -> Grads {
        assert_eq!(self.value(root).numel(), 1, "backward root must be scalar");
        let mut g: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        g[root.0] = Some(Tensor::filled(self.value(root).shape(), 1.0));
        for idx in (0..=root.0).rev() {
            if !self.nodes[idx].needs_grad || g[idx].is_none() {
                continue;
            }
            let dy = g[idx].take().unwrap();
            self.backprop_node(idx, &dy, &mut g);
            g[idx] = Some(dy);
        }
        Grads { g }
    }

    fn ensure<'a>(&self, g: &'a mut Vec<Option<Tensor>>, v: Var) -> &'a mut Tensor {
        if g[v.0].is_none() {
            g[v.0] = Some(Tensor::zeros(self.value(v).shape()));
        }
        g[v.0].as_mut().unwrap()
    }

    fn backprop_node(&self, idx: usize, dy: &Tensor, g: &mut Vec<Option<Tensor>>) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                let out = dims3(&node.value);
                if self.ng(*a) {
                    bcast_accumulate(self.ensure(g, *a), out, |i| dy.data()[i]);
                }
                if self.ng(*b) {
                    bcast_accumulate(self.ensure(g, *b), out, |i| dy.data()[i]);
                }
            }
            Op::Sub(a, b) => {
                let out = dims3(&node.value);
                if self.ng(*a) {
                    bcast_accumulate(self.ensure(g, *a), out, |i| dy.data()[i]);
                }
                if self.ng(*b) {
                    bcast_accumulate(self.ensure(g, *b), out, |i| -dy.data()[i]);
                }
            }
            Op::Mul(a, b) => {
                let out = dims3(&node.value);
                if self.ng(*a) {
                    let bv = view3(self.value(*b), out);
                    let fetch = make_fetch(&bv, out);
                    bcast_accumulate(self.ensure(g, *a), out, |i| dy.data()[i] * fetch(i));
                }
                if self.ng(*b) {
                    let av = view3(self.value(*a), out);
                    let fetch = make_fetch(&av, out);
                    bcast_accumulate(self.ensure(g, *b), out, |i| dy.data()[i] * fetch(i));
                }
            }
            Op::Div(a, b) => {
                let out = dims3(&node.value);
                if self.ng(*a) {
                    let bv = view3(self.value(*b), out);
                    let fetch = make_fetch(&bv, out);
                    bcast_accumulate(self.ensure(g, *a), out, |i| dy.data()[i] / fetch(i));
                }
                if self.ng(*b) {
                    let av = view3(self.value(*a), out);
                    let bv = view3(self.value(*b), out);
                    let fa = make_fetch(&av, out);
                    let fb = make_fetch(&bv, out);
                    bcast_accumulate(self.ensure(g, *b), out, |i| {
                        let bvl = fb(i);
                        -dy.data()[i] * fa(i) / (bvl * bvl)
                    });
                }
            }
            Op::Relu(x) => {
                if self.ng(*x) {
                    let xv = self.value(*x).data();
                    let gx = self.ensure(g, *x).data_mut();
                    for i in 0..gx.len() {
                        if xv[i] > 0.0 {
                            gx[i] += dy.data()[i];
                        }
                    }
                }
            }
            Op::Sigmoid(x) => {
                if self.ng(*x) {
                    let yv = node.value.data();
                    let gx = self.ensure(g, *x).data_mut();
                    for i in 0..gx.len() {
                        gx[i] += dy.data()[i] * yv[i] * (1.0 - yv[i]);
                    }
                }
            }
            Op::Tanh(x) => {
                if self.ng(*x) {
                    let yv = node.value.data();
                    let gx = self.ensure(g, *x).data_mut();
                    for i in 0..gx.len() {
                        gx[i] += dy.data()[i] * (1.0 - yv[i] * yv[i]);
                    }
                }
            }
            Op::Abs(x) => {
                if self.ng(*x) {
                    let xv = self.value(*x).data();
                    let gx = self.ensure(g, *x).data_mut();
                    for i in 0..gx.len() {
                        gx[i] += dy.data()[i] * xv[i].signum() * (xv[i] != 0.0) as u8 as f64;
                    }
                }
            }
            Op::Ln(x) => {
                if self.ng(*x) {
                    let xv = self.value(*x).data();
                    let gx = self.ensure(g, *x).data_mut();
                    for i in 0..gx.len() {
                        gx[i] += dy.data()[i] / xv[i];
                    }
                }
            }
            Op::Sqrt(x) => {
                if self.ng(*x) {
                    let yv = node.value.data();
                    let gx = self.ensure(g, *x).data_mut();
                    for i in 0..gx.len() {
                        gx[i] += dy.data()[i] * 0.5 / yv[i];
                    }
                }
            }
            Op::Clamp(x, lo, hi) => {
                if self.ng(*x) {
                    let xv = self.value(*x).data();
                    let (lo, hi) = (*lo, *hi);
                    let gx = self.ensure(g, *x).data_mut();
                    for i in 0..gx.len() {
                        if xv[i] >= lo && xv[i] <= hi {
                            gx[i] += dy.data()[i];
                        }
                    }
                }
            }
            Op::AddScalar(x) => {
                if self.ng(*x) {
                    let gx = self.ensure(g, *x).data_mut();
                    for i in 0..gx.len() {
                        gx[i] += dy.data()[i];
                    }
                }
            }
            Op::MulScalar(x, s) => {
                if self.ng(*x) {
                    let s = *s;
                    let gx = self.ensure(g, *x).data_mut();
                    for i in 0..gx.len() {
                        gx[i] += dy.data()[i] * s;
                    }
                }
            }
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
                grad_w,
            } => {
                let (cin, h, wdt) = dims3(self.value(*x));
                let ws = self.value(*w).shape();
                let (cout, k) = (ws[0], ws[2]);
                let (_, oh, ow) = dims3(&node.value);
                if self.ng(*x) {
                    let wdata = self.value(*w).data().to_vec();
                    let dx = self.ensure(g, *x).data_mut();
                    kernels::conv2d_bwd_input(dy.data(), cin, h, wdt, &wdata, cout, k, *stride, *pad, dx);
                }
                if *grad_w {
                    if self.ng(*w) {
                        let xdata = self.value(*x).data().to_vec();
                        let dw = self.ensure(g, *w).data_mut();
                        kernels::conv2d_bwd_weight(dy.data(), &xdata, cin, h, wdt, cout, k, *stride, *pad, dw);
                    }
                    if let Some(bv) = b {
                        if self.ng(*bv) {
                            let db = self.ensure(g, *bv).data_mut();
                            kernels::conv2d_bwd_bias(dy.data(), cout, oh, ow, db);
                        }
                    }
                }
            }
            Op::ConcatC(parts) => {
                let (_, h, w) = dims3(&node.value);
                let mut offset = 0;
                for &p in parts {
                    let (pc, _, _) = dims3(self.value(p));
                    let n = pc * h * w;
                    if self.ng(p) {
                        let gp = self.ensure(g, p).data_mut();
                        for i in 0..n {
                            gp[i] += dy.data()[offset + i];
                        }
                    }
                    offset += n;
                }
            }
            Op::SliceC { x, start, len } => {
                if self.ng(*x) {
                    let (_, h, w) = dims3(self.value(*x));
                    let n = len * h * w;
                    let off = start * h * w;
                    let gx = self.ensure(g, *x).data_mut();
                    for i in 0..n {
                        gx[off + i] += dy.data()[i];
                    }
                }
            }
            Op::Bilinear(x) => {
                if self.ng(*x) {
                    let (c, h, w) = dims3(self.value(*x));
                    let (_, oh, ow) = dims3(&node.value);
                    let dx = self.ensure(g, *x).data_mut();
                    kernels::bilinear_bwd(dy.data(), c, h, w, oh, ow, dx);
                }
            }
            Op::MeanHw(x) => {
                if self.ng(*x) {
                    let (c, h, w) = dims3(self.value(*x));
                    let inv = 1.0 / (h * w) as f64;
                    let gx = self.ensure(g, *x).data_mut();
                    for ci in 0..c {
                        let gy = dy.data()[ci] * inv;
                        for slot in gx[ci * h * w..(ci + 1) * h * w].iter_mut() {
                            *slot += gy;
                        }
                    }
                }
            }
            Op::MeanAll(x) => {
                if self.ng(*x) {
                    let n = self.value(*x).numel();
                    let gy = dy.data()[0] / n as f64;
                    let gx = self.ensure(g, *x).data_mut();
                    for slot in gx.iter_mut() {
                        *slot += gy;
                    }
                }
            }
            Op::SumAll(x) => {
                if self.ng(*x) {
                    let gy = dy.data()[0];
                    let gx = self.ensure(g, *x).data_mut();
                    for slot in gx.iter_mut() {
                        *slot += gy;
                    }
                }
            }
            Op::SepH { x, kernel } => {
                if self.ng(*x) {
                    let (c, h, w) = dims3(self.value(*x));
                    let kern = self.kernels[*kernel].clone();
                    let dx = self.ensure(g, *x).data_mut();
                    kernels::sep_corr_h_bwd(dy.data(), c, h, w, &kern, dx);
                }
            }
            Op::SepV { x, kernel } => {
                if self.ng(*x) {
                    let (c, h, w) = dims3(self.value(*x));
                    let kern = self.kernels[*kernel].clone();
                    let dx = self.ensure(g, *x).data_mut();
                    kernels::sep_corr_v_bwd(dy.data(), c, h, w, &kern, dx);
                }
            }
        }
    }
}

/// Broadcast fetch closure over a strided view.
fn make_fetch<'a>(v: &'a View3<'a>, out: (usize, usize, usize)) -> impl Fn(usize) -> f64 + 'a {
    let (_, h, w) = out;
    let (sc, sy, sx) = (v.sc, v.sy, v.sx);
    let data = v.data;
    move |i: usize| {
        let xi = i % w;
        let rest = i / w;
        let yi = rest % h;
        let ci = rest / h;
        data[ci * sc + yi * sy + xi * sx]
    }
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
