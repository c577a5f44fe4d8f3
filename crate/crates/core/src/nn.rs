//! Building blocks shared by the encoder and the decoder branches: plain
//! convolutions, batch normalization, conv-norm-ReLU stacks, residual
//! resampling blocks, and the forward-pass context that ties a tape to a
//! bound parameter set.

use crate::params::{BoundParams, ParamBuilder};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Whether normalization uses batch statistics (training) or the running
/// buffers (evaluation).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Batch statistics captured by one norm layer during a train-mode forward
/// pass, consumed by the train step to update the running buffers.
#[derive(Clone, Debug)]
pub struct BnBatchStat {
    /// Name prefix of the norm layer (the store holds `{name}.running_mean`).
    pub name: String,
    pub mean: Tensor,
    /// Biased variance (divided by the position count), as used for
    /// normalization.
    pub var_biased: Tensor,
    /// Number of positions the statistics were computed over
    /// (batch size x H x W).
    pub count: usize,
}

/// Context for one forward pass over a batch of same-sized samples.
pub struct Fwd<'a> {
    pub tape: &'a mut Tape,
    pub params: &'a BoundParams,
    pub mode: Mode,
    /// Batch statistics collected from every norm layer in train mode, one
    /// entry per layer per forward pass.
    pub bn_stats: Vec<BnBatchStat>,
}

impl<'a> Fwd<'a> {
    pub fn new(tape: &'a mut Tape, params: &'a BoundParams, mode: Mode) -> Self {
        Fwd {
            tape,
            params,
            mode,
            bn_stats: Vec::new(),
        }
    }
}

/// A convolution layer: fixed kernel size, stride, and padding.
#[derive(Clone, Debug)]
pub struct ConvDef {
    pub wname: String,
    pub bname: String,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvDef {
    pub fn new(name: &str, cin: usize, cout: usize, k: usize, stride: usize, pad: usize) -> Self {
        ConvDef {
            wname: format!("{name}.w"),
            bname: format!("{name}.b"),
            cin,
            cout,
            k,
            stride,
            pad,
        }
    }

    /// 3x3 convolution preserving spatial size.
    pub fn conv3(name: &str, cin: usize, cout: usize) -> Self {
        ConvDef::new(name, cin, cout, 3, 1, 1)
    }

    /// 3x3 convolution halving spatial size.
    pub fn conv3_s2(name: &str, cin: usize, cout: usize) -> Self {
        ConvDef::new(name, cin, cout, 3, 2, 1)
    }

    /// 1x1 pointwise convolution.
    pub fn conv1(name: &str, cin: usize, cout: usize) -> Self {
        ConvDef::new(name, cin, cout, 1, 1, 0)
    }

    /// 1x1 pointwise convolution with stride 2.
    pub fn conv1_s2(name: &str, cin: usize, cout: usize) -> Self {
        ConvDef::new(name, cin, cout, 1, 2, 0)
    }

    pub fn register(&self, b: &mut ParamBuilder) {
        b.conv_weight(&self.wname, self.cout, self.cin, self.k);
        b.conv_bias(&self.bname, self.cout);
    }

    pub fn fwd(&self, f: &mut Fwd, x: Var) -> Var {
        let w = f.params.var(&self.wname);
        let b = f.params.var(&self.bname);
        f.tape.conv2d(x, w, Some(b), self.stride, self.pad, true)
    }
}

/// Batch normalization over the batch and spatial axes of same-shaped
/// [C,H,W] samples. In train mode the statistics pool across the whole
/// batch on the tape, so gradients flow through them.
#[derive(Clone, Debug)]
pub struct BnDef {
    pub name: String,
    pub c: usize,
}

impl BnDef {
    pub fn new(name: &str, c: usize) -> Self {
        BnDef {
            name: name.to_string(),
            c,
        }
    }

    pub fn register(&self, b: &mut ParamBuilder) {
        b.batch_norm(&self.name, self.c);
    }

    pub fn fwd(&self, f: &mut Fwd, xs: &[Var]) -> Vec<Var> {
        assert!(!xs.is_empty(), "batch norm needs a non-empty batch");
        debug_assert!(
            xs.iter().all(|&x| f.tape.value(x).shape() == f.tape.value(xs[0]).shape()),
            "batch norm needs same-shaped samples"
        );
        let gamma = f.params.var(&format!("{}.gamma", self.name));
        let beta = f.params.var(&format!("{}.beta", self.name));
        match f.mode {
            Mode::Train => {
                let n = xs.len();
                let inv_n = 1.0 / n as f64;
                let mut mu = f.tape.mean_hw(xs[0]);
                for &x in &xs[1..] {
                    let m = f.tape.mean_hw(x);
                    mu = f.tape.add(mu, m);
                }
                if n > 1 {
                    mu = f.tape.mul_scalar(mu, inv_n);
                }
                let xcs: Vec<Var> = xs.iter().map(|&x| f.tape.sub(x, mu)).collect();
                let mut var = {
                    let sq = f.tape.mul(xcs[0], xcs[0]);
                    f.tape.mean_hw(sq)
                };
                for &xc in &xcs[1..] {
                    let sq = f.tape.mul(xc, xc);
                    let v = f.tape.mean_hw(sq);
                    var = f.tape.add(var, v);
                }
                if n > 1 {
                    var = f.tape.mul_scalar(var, inv_n);
                }
                let (_, h, w) = f.tape.value(xs[0]).dims3();
                f.bn_stats.push(BnBatchStat {
                    name: self.name.clone(),
                    mean: f.tape.value(mu).clone(),
                    var_biased: f.tape.value(var).clone(),
                    count: n * h * w,
                });
                let var_eps = f.tape.add_scalar(var, BN_EPS);
                let std = f.tape.sqrt(var_eps);
                xcs.into_iter()
                    .map(|xc| {
                        let xn = f.tape.div(xc, std);
                        let scaled = f.tape.mul(xn, gamma);
                        f.tape.add(scaled, beta)
                    })
                    .collect()
            }
            Mode::Eval => {
                let mu = f.params.var(&format!("{}.running_mean", self.name));
                let var = f.params.var(&format!("{}.running_var", self.name));
                let var_eps = f.tape.add_scalar(var, BN_EPS);
                let std = f.tape.sqrt(var_eps);
                xs.iter()
                    .map(|&x| {
                        let xc = f.tape.sub(x, mu);
                        let xn = f.tape.div(xc, std);
                        let scaled = f.tape.mul(xn, gamma);
                        f.tape.add(scaled, beta)
                    })
                    .collect()
            }
        }
    }
}

/// Conv + batch norm + ReLU (the CNR block).
#[derive(Clone, Debug)]
pub struct CbrDef {
    pub conv: ConvDef,
    pub bn: BnDef,
}

impl CbrDef {
    pub fn conv3(name: &str, cin: usize, cout: usize) -> Self {
        CbrDef {
            conv: ConvDef::conv3(&format!("{name}.conv"), cin, cout),
            bn: BnDef::new(&format!("{name}.bn"), cout),
        }
    }

    pub fn conv3_s2(name: &str, cin: usize, cout: usize) -> Self {
        CbrDef {
            conv: ConvDef::conv3_s2(&format!("{name}.conv"), cin, cout),
            bn: BnDef::new(&format!("{name}.bn"), cout),
        }
    }

    pub fn register(&self, b: &mut ParamBuilder) {
        self.conv.register(b);
        self.bn.register(b);
    }

    pub fn fwd(&self, f: &mut Fwd, xs: &[Var]) -> Vec<Var> {
        self.fwd_ex(f, xs, false)
    }

    /// `linear=true` drops the normalization and activation (test hook used
    /// by the CLFM additivity probe).
    pub fn fwd_ex(&self, f: &mut Fwd, xs: &[Var], linear: bool) -> Vec<Var> {
        let ys: Vec<Var> = xs.iter().map(|&x| self.conv.fwd(f, x)).collect();
        if linear {
            return ys;
        }
        let ys = self.bn.fwd(f, &ys);
        ys.into_iter().map(|y| f.tape.relu(y)).collect()
    }
}

/// Residual upsampling: bilinear resize to the target size, then a 3x3
/// conv-norm-ReLU path plus a 1x1 projection path, summed.
#[derive(Clone, Debug)]
pub struct ResUpDef {
    pub cbr: CbrDef,
    pub proj: ConvDef,
}

impl ResUpDef {
    pub fn new(name: &str, cin: usize, cout: usize) -> Self {
        ResUpDef {
            cbr: CbrDef::conv3(&format!("{name}.cbr"), cin, cout),
            proj: ConvDef::conv1(&format!("{name}.proj"), cin, cout),
        }
    }

    pub fn register(&self, b: &mut ParamBuilder) {
        self.cbr.register(b);
        self.proj.register(b);
    }

    pub fn fwd(&self, f: &mut Fwd, xs: &[Var], oh: usize, ow: usize) -> Vec<Var> {
        self.fwd_ex(f, xs, oh, ow, false)
    }

    pub fn fwd_ex(&self, f: &mut Fwd, xs: &[Var], oh: usize, ow: usize, linear: bool) -> Vec<Var> {
        let ups: Vec<Var> = xs.iter().map(|&x| f.tape.bilinear(x, oh, ow)).collect();
        let a = self.cbr.fwd_ex(f, &ups, linear);
        ups.into_iter()
            .zip(a)
            .map(|(up, a)| {
                let b = self.proj.fwd(f, up);
                f.tape.add(a, b)
            })
            .collect()
    }
}

/// Residual downsampling: stride-2 3x3 conv-norm-ReLU path plus a stride-2
/// 1x1 projection path, summed. Halves H and W exactly for even inputs.
#[derive(Clone, Debug)]
pub struct ResDownDef {
    pub cbr: CbrDef,
    pub proj: ConvDef,
}

impl ResDownDef {
    pub fn new(name: &str, cin: usize, cout: usize) -> Self {
        ResDownDef {
            cbr: CbrDef::conv3_s2(&format!("{name}.cbr"), cin, cout),
            proj: ConvDef::conv1_s2(&format!("{name}.proj"), cin, cout),
        }
    }

    pub fn register(&self, b: &mut ParamBuilder) {
        self.cbr.register(b);
        self.proj.register(b);
    }

    pub fn fwd(&self, f: &mut Fwd, xs: &[Var]) -> Vec<Var> {
        self.fwd_ex(f, xs, false)
    }

    pub fn fwd_ex(&self, f: &mut Fwd, xs: &[Var], linear: bool) -> Vec<Var> {
        let a = self.cbr.fwd_ex(f, xs, linear);
        xs.iter()
            .zip(a)
            .map(|(&x, a)| {
                let b = self.proj.fwd(f, x);
                f.tape.add(a, b)
            })
            .collect()
    }
}

/// Two conv-norm-ReLU stacks with an identity skip: y = x + cbr2(cbr1(x)).
#[derive(Clone, Debug)]
pub struct ResBlockDef {
    pub cbr1: CbrDef,
    pub cbr2: CbrDef,
}

impl ResBlockDef {
    pub fn new(name: &str, c: usize) -> Self {
        ResBlockDef {
            cbr1: CbrDef::conv3(&format!("{name}.c1"), c, c),
            cbr2: CbrDef::conv3(&format!("{name}.c2"), c, c),
        }
    }

    pub fn register(&self, b: &mut ParamBuilder) {
        self.cbr1.register(b);
        self.cbr2.register(b);
    }

    pub fn fwd(&self, f: &mut Fwd, xs: &[Var]) -> Vec<Var> {
        let y = self.cbr1.fwd(f, xs);
        let y = self.cbr2.fwd(f, &y);
        xs.iter().zip(y).map(|(&x, y)| f.tape.add(x, y)).collect()
    }
}
