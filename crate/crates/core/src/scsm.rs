//! Self-Calibrated Saliency Masking decoder. Each level fuses the decoder
//! state with the skip feature, estimates a coarse weight map, pools a
//! global salient descriptor under that map, calibrates an affinity map
//! against the descriptor, and emits the level's saliency estimate, which
//! also gates the feature passed to the next level. The finest level's mask
//! is the initial prediction M-hat'.

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{CbrDef, ConvDef, Fwd, Mode};
use crate::params::{bind_params, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::{SaliencyMask, Tensor};

/// Parameters of one SCSM decoder level.
#[derive(Clone, Debug)]
pub struct ScsmLevelDef {
    /// 3x3 conv-norm-ReLU over the upsampled concatenation.
    pub fuse_cbr: CbrDef,
    /// 1x1 projection path over the same concatenation.
    pub fuse_proj: ConvDef,
    /// Calibration layers; absent when the branch is ablated.
    pub calib: Option<ScsmCalibDef>,
}

#[derive(Clone, Debug)]
pub struct ScsmCalibDef {
    pub coarse: ConvDef,
    pub phi_q: ConvDef,
    pub phi_k: ConvDef,
    pub phi_v: ConvDef,
    pub aff: ConvDef,
    pub head: ConvDef,
}

impl ScsmLevelDef {
    pub fn new(prefix: &str, state_c: usize, skip_c: usize, enabled: bool) -> Self {
        let cat_c = state_c + skip_c;
        ScsmLevelDef {
            fuse_cbr: CbrDef::conv3(&format!("{prefix}.fuse.cbr"), cat_c, skip_c),
            fuse_proj: ConvDef::conv1(&format!("{prefix}.fuse.proj"), cat_c, skip_c),
            calib: enabled.then(|| ScsmCalibDef {
                coarse: ConvDef::conv1(&format!("{prefix}.coarse"), skip_c, 1),
                phi_q: ConvDef::conv1(&format!("{prefix}.phi_q"), skip_c, skip_c),
                phi_k: ConvDef::conv1(&format!("{prefix}.phi_k"), skip_c, skip_c),
                phi_v: ConvDef::conv1(&format!("{prefix}.phi_v"), skip_c, skip_c),
                aff: ConvDef::conv1(&format!("{prefix}.aff"), 2 * skip_c, 1),
                head: ConvDef::conv1(&format!("{prefix}.head"), 1 + skip_c, 1),
            }),
        }
    }

    pub fn register(&self, b: &mut crate::params::ParamBuilder) {
        self.fuse_cbr.register(b);
        self.fuse_proj.register(b);
        if let Some(c) = &self.calib {
            c.coarse.register(b);
            c.phi_q.register(b);
            c.phi_k.register(b);
            c.phi_v.register(b);
            c.aff.register(b);
            c.head.register(b);
        }
    }

    /// Residual fusion: upsample the decoder states to the skips'
    /// resolution (when needed), concatenate, and run the conv + projection
    /// paths.
    pub fn fuse(&self, f: &mut Fwd, states: &[Var], skips: &[Var]) -> Vec<Var> {
        let cats: Vec<Var> = states
            .iter()
            .zip(skips)
            .map(|(&state, &skip)| {
                let (_, sh, sw) = f.tape.value(skip).dims3();
                let up = f.tape.bilinear(state, sh, sw);
                f.tape.concat_c(&[up, skip])
            })
            .collect();
        let a = self.fuse_cbr.fwd(f, &cats);
        cats.into_iter()
            .zip(a)
            .map(|(cat, a)| {
                let b = self.fuse_proj.fwd(f, cat);
                f.tape.add(a, b)
            })
            .collect()
    }

    /// Runs the calibration chain on a fused feature; returns the level mask.
    pub fn calibrate(&self, f: &mut Fwd, x_in: Var) -> Var {
        let c = self.calib.as_ref().expect("calibrate on ablated SCSM level");
        let coarse_logit = c.coarse.fwd(f, x_in);
        let m_k = f.tape.sigmoid(coarse_logit);
        let x_k = descriptor_t(f.tape, x_in, m_k);
        let s = affinity_t(f, c, x_in, x_k);
        let v = c.phi_v.fwd(f, x_in);
        let cat = f.tape.concat_c(&[s, v]);
        let logit = c.head.fwd(f, cat);
        f.tape.sigmoid(logit)
    }
}

/// Attention-weighted global pooling on the tape: X_k[c] = sum(m*x) / sum(m).
fn descriptor_t(tape: &mut Tape, x_in: Var, m_k: Var) -> Var {
    let prod = tape.mul(x_in, m_k);
    let num = tape.mean_hw(prod);
    let den = tape.mean_hw(m_k);
    tape.div(num, den)
}

/// Affinity map on the tape: sigmoid(1x1(tanh(cat(broadcast(phi_k(x_k)), phi_q(x_in))))).
fn affinity_t(f: &mut Fwd, c: &ScsmCalibDef, x_in: Var, x_k: Var) -> Var {
    let (_, h, w) = f.tape.value(x_in).dims3();
    let k_proj = c.phi_k.fwd(f, x_k);
    let k_map = f.tape.bilinear(k_proj, h, w);
    let q = c.phi_q.fwd(f, x_in);
    let cat = f.tape.concat_c(&[k_map, q]);
    let t = f.tape.tanh(cat);
    let logit = c.aff.fwd(f, t);
    f.tape.sigmoid(logit)
}

/// The full SCSM branch: one level per fusion step plus an optional plain
/// head used when the branch is ablated.
#[derive(Clone, Debug)]
pub struct ScsmDef {
    pub enabled: bool,
    /// Level t fuses the state from level t+1 with pyramid level t.
    pub levels: Vec<ScsmLevelDef>,
    /// 1x1 conv + sigmoid head replacing the calibration chain when ablated.
    pub plain_head: Option<ConvDef>,
}

impl ScsmDef {
    pub fn new(prefix: &str, cfg: &ModelConfig) -> Self {
        let enabled = cfg.enable_scsm;
        let levels = (0..cfg.levels - 1)
            .map(|t| {
                ScsmLevelDef::new(
                    &format!("{prefix}.l{t}"),
                    cfg.channels[t + 1],
                    cfg.channels[t],
                    enabled,
                )
            })
            .collect();
        ScsmDef {
            enabled,
            levels,
            plain_head: (!enabled).then(|| ConvDef::conv1(&format!("{prefix}.plain_head"), cfg.channels[0], 1)),
        }
    }

    pub fn register(&self, b: &mut crate::params::ParamBuilder) {
        for l in &self.levels {
            l.register(b);
        }
        if let Some(h) = &self.plain_head {
            h.register(b);
        }
    }

    /// Decodes a batch of pyramids (`pyramid[level][sample]`); returns the
    /// initial masks (full resolution, one per sample) and the per-level
    /// decoder features (`feats[level][sample]`, levels 0..L-2).
    pub fn fwd(&self, f: &mut Fwd, pyramid: &[Vec<Var>]) -> (Vec<Var>, Vec<Vec<Var>>) {
        let l = pyramid.len();
        let n = pyramid[0].len();
        let mut states = pyramid[l - 1].clone();
        let mut feats = vec![Vec::new(); l - 1];
        let mut final_masks = Vec::new();
        for t in (0..l - 1).rev() {
            let x_ins = self.levels[t].fuse(f, &states, &pyramid[t]);
            if self.enabled {
                states = Vec::with_capacity(n);
                for &x_in in &x_ins {
                    let m_level = self.levels[t].calibrate(f, x_in);
                    states.push(f.tape.mul(x_in, m_level));
                    if t == 0 {
                        final_masks.push(m_level);
                    }
                }
            } else {
                states = x_ins;
            }
            feats[t] = states.clone();
        }
        let masks = match (&self.plain_head, final_masks.is_empty()) {
            (_, false) => final_masks,
            (Some(h), true) => feats[0]
                .iter()
                .map(|&s| {
                    let logit = h.fwd(f, s);
                    f.tape.sigmoid(logit)
                })
                .collect(),
            _ => unreachable!(),
        };
        (masks, feats)
    }
}

fn check_fuse_dims(decoder: &Tensor, skip: &Tensor) -> Result<()> {
    let (_, dh, dw) = decoder.dims3();
    let (_, sh, sw) = skip.dims3();
    let ok = (dh == sh && dw == sw) || (dh * 2 == sh && dw * 2 == sw);
    if !ok {
        return Err(Error::shape(
            "fuse_and_upsample",
            format!("skip spatial = decoder spatial x1 or x2 (decoder {dh}x{dw})"),
            format!("{sh}x{sw}"),
        ));
    }
    Ok(())
}

/// Fuses a decoder feature with its skip feature (residual upsampling over
/// the concatenation). `level_prefix` names the level, e.g. "scsm.l0".
pub fn fuse_and_upsample(
    decoder_feat: &Tensor,
    skip_feat: &Tensor,
    store: &ParamStore,
    level_prefix: &str,
) -> Result<Tensor> {
    check_fuse_dims(decoder_feat, skip_feat)?;
    let (dc, _, _) = decoder_feat.dims3();
    let (sc, _, _) = skip_feat.dims3();
    let def = ScsmLevelDef::new(level_prefix, dc, sc, false);
    let mut tape = Tape::new();
    let bound = bind_params(&mut tape, store, false);
    let d = tape.constant(decoder_feat.clone());
    let s = tape.constant(skip_feat.clone());
    let mut f = Fwd::new(&mut tape, &bound, Mode::Eval);
    let out = def.fuse(&mut f, &[d], &[s]);
    Ok(tape.value(out[0]).clone())
}

/// Coarse per-pixel weighting: sigmoid(1x1 conv(x_in)).
pub fn coarse_weight_map(x_in: &Tensor, store: &ParamStore, level_prefix: &str) -> Tensor {
    let def = ConvDef::conv1(&format!("{level_prefix}.coarse"), x_in.dims3().0, 1);
    let mut tape = Tape::new();
    let bound = bind_params(&mut tape, store, false);
    let x = tape.constant(x_in.clone());
    let mut f = Fwd::new(&mut tape, &bound, Mode::Eval);
    let logit = def.fwd(&mut f, x);
    let m = tape.sigmoid(logit);
    tape.value(m).clone()
}

/// Attention-weighted global pooling: X_k[c] = sum_ij m(i,j) x(c,i,j) / sum_ij m(i,j).
pub fn global_salient_descriptor(x_in: &Tensor, m_k: &Tensor) -> Tensor {
    let (c, h, w) = x_in.dims3();
    let (mc, mh, mw) = m_k.dims3();
    assert_eq!((mc, mh, mw), (1, h, w), "weight map must be [1,H,W] matching x_in");
    let m = m_k.data();
    let den: f64 = m.iter().sum();
    let mut out = vec![0.0; c];
    for ci in 0..c {
        let plane = &x_in.data()[ci * h * w..(ci + 1) * h * w];
        out[ci] = plane.iter().zip(m).map(|(&x, &wv)| x * wv).sum::<f64>() / den;
    }
    Tensor::from_vec(&[c], out)
}

/// Saliency affinity map from the fused feature and the global descriptor.
pub fn affinity_map(x_in: &Tensor, x_k: &Tensor, store: &ParamStore, level_prefix: &str) -> Tensor {
    let (c, _, _) = x_in.dims3();
    assert_eq!(x_k.numel(), c, "descriptor length must match x_in channels");
    let def = ScsmLevelDef::new(level_prefix, c, c, true);
    let calib = def.calib.as_ref().unwrap();
    let mut tape = Tape::new();
    let bound = bind_params(&mut tape, store, false);
    let x = tape.constant(x_in.clone());
    let k = tape.constant(x_k.reshaped(&[c, 1, 1]));
    let mut f = Fwd::new(&mut tape, &bound, Mode::Eval);
    let s = affinity_t(&mut f, calib, x, k);
    tape.value(s).clone()
}

/// Initial per-level saliency estimate: sigmoid(1x1(cat(S, phi_v(x_in)))).
/// Returned at the level's resolution; the forward pass upsamples the finest
/// level's estimate to the input resolution.
pub fn initial_saliency(affinity: &Tensor, x_in: &Tensor, store: &ParamStore, level_prefix: &str) -> SaliencyMask {
    let (c, h, w) = x_in.dims3();
    assert_eq!(affinity.dims3(), (1, h, w), "affinity must be [1,H,W] matching x_in");
    let def = ScsmLevelDef::new(level_prefix, c, c, true);
    let calib = def.calib.as_ref().unwrap();
    let mut tape = Tape::new();
    let bound = bind_params(&mut tape, store, false);
    let s = tape.constant(affinity.clone());
    let x = tape.constant(x_in.clone());
    let mut f = Fwd::new(&mut tape, &bound, Mode::Eval);
    let v = calib.phi_v.fwd(&mut f, x);
    let cat = f.tape.concat_c(&[s, v]);
    let logit = calib.head.fwd(&mut f, cat);
    let m = f.tape.sigmoid(logit);
    tape.value(m).clone()
}

/// Runs the whole SCSM branch on an encoded pyramid (inference-mode
/// normalization). Returns the initial mask and the per-level decoder
/// features for reuse by MACR and the refinement stage.
pub fn scsm_forward(
    pyramid: &[Tensor],
    store: &ParamStore,
    config: &ModelConfig,
) -> Result<(SaliencyMask, Vec<Tensor>)> {
    if pyramid.len() != config.levels {
        return Err(Error::shape(
            "scsm_forward",
            format!("{} pyramid levels", config.levels),
            format!("{}", pyramid.len()),
        ));
    }
    let def = ScsmDef::new("scsm", config);
    let mut tape = Tape::new();
    let bound = bind_params(&mut tape, store, false);
    let pyr: Vec<Vec<Var>> = pyramid.iter().map(|t| vec![tape.constant(t.clone())]).collect();
    let mut f = Fwd::new(&mut tape, &bound, Mode::Eval);
    let (masks, feats) = def.fwd(&mut f, &pyr);
    Ok((
        tape.value(masks[0]).clone(),
        feats.into_iter().map(|v| tape.value(v[0]).clone()).collect(),
    ))
}
