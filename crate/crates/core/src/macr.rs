//! Mask-Aware Content Restoration decoder. Each level upsamples the decoder
//! state, projects it to the level width, concatenates the raw skip feature,
//! and (unless ablated) modulates the right half of the channels with a
//! weight map conditioned on the initial saliency mask.

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{BnDef, CbrDef, ConvDef, Fwd, Mode, ResUpDef};
use crate::params::{bind_params, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::{Image, SaliencyMask, Tensor};

/// Parameters of one MACR decoder level. The decoder state entering this
/// level has `state_c` channels; the level's output has `2 * out_c` where
/// `out_c = channels[level]` (projected half plus raw skip half).
#[derive(Clone, Debug)]
pub struct MacrLevelDef {
    pub up: ResUpDef,
    pub cnr: CbrDef,
    /// Modulation layers; absent when MACR is ablated.
    pub modulation: Option<MacrModDef>,
    pub bn: BnDef,
    pub out_c: usize,
}

#[derive(Clone, Debug)]
pub struct MacrModDef {
    pub w1: ConvDef,
    pub w2: ConvDef,
    pub r: ConvDef,
}

impl MacrLevelDef {
    pub fn new(prefix: &str, state_c: usize, out_c: usize, enabled: bool) -> Self {
        MacrLevelDef {
            up: ResUpDef::new(&format!("{prefix}.up"), state_c, state_c),
            cnr: CbrDef::conv3(&format!("{prefix}.cnr"), state_c, out_c),
            modulation: enabled.then(|| MacrModDef {
                w1: ConvDef::conv3(&format!("{prefix}.w1"), out_c + 1, out_c),
                w2: ConvDef::conv3(&format!("{prefix}.w2"), out_c, out_c),
                r: ConvDef::conv3(&format!("{prefix}.r"), out_c, 2 * out_c),
            }),
            bn: BnDef::new(&format!("{prefix}.bn"), 2 * out_c),
            out_c,
        }
    }

    pub fn register(&self, b: &mut crate::params::ParamBuilder) {
        self.up.register(b);
        self.cnr.register(b);
        if let Some(m) = &self.modulation {
            m.w1.register(b);
            m.w2.register(b);
            m.r.register(b);
        }
        self.bn.register(b);
    }

    /// Decode step: G = cat(CNR(ResUp(state)), skip).
    pub fn decode_step(&self, f: &mut Fwd, states: &[Var], skips: &[Var]) -> Vec<Var> {
        let (_, sh, sw) = f.tape.value(skips[0]).dims3();
        let up = self.up.fwd(f, states, sh, sw);
        let c = self.cnr.fwd(f, &up);
        c.into_iter()
            .zip(skips)
            .map(|(c, &skip)| f.tape.concat_c(&[c, skip]))
            .collect()
    }

    /// Saliency-conditioned weight map: W = sigmoid(conv(relu(conv(cat(g_left, mask))))).
    pub fn mask_weight(&self, f: &mut Fwd, g_left: Var, mask: Var) -> Var {
        let m = self.modulation.as_ref().expect("mask_weight on ablated MACR level");
        let (_, h, w) = f.tape.value(g_left).dims3();
        let mask_r = f.tape.bilinear(mask, h, w);
        let cat = f.tape.concat_c(&[g_left, mask_r]);
        let a = m.w1.fwd(f, cat);
        let a = f.tape.relu(a);
        let logit = m.w2.fwd(f, a);
        f.tape.sigmoid(logit)
    }

    /// Modulation and aggregation: F = ReLU(BN(conv(G_right * W) + G)).
    pub fn modulate(&self, f: &mut Fwd, gs: &[Var], wmaps: &[Var]) -> Vec<Var> {
        let m = self.modulation.as_ref().expect("modulate on ablated MACR level");
        let sums: Vec<Var> = gs
            .iter()
            .zip(wmaps)
            .map(|(&g, &wmap)| {
                let g_right = f.tape.slice_c(g, self.out_c, self.out_c);
                let gated = f.tape.mul(g_right, wmap);
                let r = m.r.fwd(f, gated);
                f.tape.add(r, g)
            })
            .collect();
        let n = self.bn.fwd(f, &sums);
        n.into_iter().map(|n| f.tape.relu(n)).collect()
    }

    /// Ablated path: F = ReLU(BN(G)).
    pub fn norm_only(&self, f: &mut Fwd, gs: &[Var]) -> Vec<Var> {
        let n = self.bn.fwd(f, gs);
        n.into_iter().map(|n| f.tape.relu(n)).collect()
    }

    pub fn fwd(&self, f: &mut Fwd, states: &[Var], skips: &[Var], masks: Option<&[Var]>) -> Vec<Var> {
        let gs = self.decode_step(f, states, skips);
        match (&self.modulation, masks) {
            (Some(_), Some(masks)) => {
                let wmaps: Vec<Var> = gs
                    .iter()
                    .zip(masks)
                    .map(|(&g, &mask)| {
                        let g_left = f.tape.slice_c(g, 0, self.out_c);
                        self.mask_weight(f, g_left, mask)
                    })
                    .collect();
                self.modulate(f, &gs, &wmaps)
            }
            _ => self.norm_only(f, &gs),
        }
    }
}

/// The full MACR branch.
#[derive(Clone, Debug)]
pub struct MacrDef {
    pub enabled: bool,
    pub levels: Vec<MacrLevelDef>,
    pub head: ConvDef,
}

impl MacrDef {
    pub fn new(prefix: &str, cfg: &ModelConfig) -> Self {
        let l = cfg.levels;
        let levels = (0..l - 1)
            .map(|t| {
                let state_c = if t == l - 2 {
                    cfg.channels[l - 1]
                } else {
                    2 * cfg.channels[t + 1]
                };
                MacrLevelDef::new(&format!("{prefix}.l{t}"), state_c, cfg.channels[t], cfg.enable_macr)
            })
            .collect();
        MacrDef {
            enabled: cfg.enable_macr,
            levels,
            head: ConvDef::conv3(&format!("{prefix}.head"), 2 * cfg.channels[0], 3),
        }
    }

    pub fn register(&self, b: &mut crate::params::ParamBuilder) {
        for l in &self.levels {
            l.register(b);
        }
        self.head.register(b);
    }

    /// Decodes a batch of pyramids (`pyramid[level][sample]`) under the mask
    /// priors; returns the coarse restored images (one per sample) and
    /// per-level decoder features (`feats[level][sample]`, levels 0..L-2).
    pub fn fwd(&self, f: &mut Fwd, pyramid: &[Vec<Var>], masks: &[Var]) -> (Vec<Var>, Vec<Vec<Var>>) {
        let l = pyramid.len();
        let mut states = pyramid[l - 1].clone();
        let mut feats = vec![Vec::new(); l - 1];
        for t in (0..l - 1).rev() {
            let m = self.enabled.then_some(masks);
            states = self.levels[t].fwd(f, &states, &pyramid[t], m);
            feats[t] = states.clone();
        }
        let imgs = feats[0]
            .iter()
            .map(|&s| {
                let logit = self.head.fwd(f, s);
                f.tape.sigmoid(logit)
            })
            .collect();
        (imgs, feats)
    }
}

fn check_step_dims(prev: &Tensor, skip: &Tensor) -> Result<()> {
    let (_, ph, pw) = prev.dims3();
    let (_, sh, sw) = skip.dims3();
    if ph * 2 != sh || pw * 2 != sw {
        return Err(Error::shape(
            "macr_decode_step",
            format!("skip spatial = 2x prev spatial (prev {ph}x{pw})"),
            format!("{sh}x{sw}"),
        ));
    }
    Ok(())
}

/// One decode step: G_i = cat(CNR(ResUp(prev)), skip).
pub fn macr_decode_step(prev: &Tensor, skip: &Tensor, store: &ParamStore, level_prefix: &str) -> Result<Tensor> {
    check_step_dims(prev, skip)?;
    let (pc, _, _) = prev.dims3();
    let (sc, _, _) = skip.dims3();
    let def = MacrLevelDef::new(level_prefix, pc, sc, false);
    let mut tape = Tape::new();
    let bound = bind_params(&mut tape, store, false);
    let p = tape.constant(prev.clone());
    let s = tape.constant(skip.clone());
    let mut f = Fwd::new(&mut tape, &bound, Mode::Eval);
    let g = def.decode_step(&mut f, &[p], &[s]);
    Ok(tape.value(g[0]).clone())
}

/// Saliency-conditioned weight map over the left channel half.
pub fn mask_weight(g_left: &Tensor, mask: &SaliencyMask, store: &ParamStore, level_prefix: &str) -> Tensor {
    let (c, _, _) = g_left.dims3();
    let def = MacrLevelDef::new(level_prefix, c, c, true);
    let mut tape = Tape::new();
    let bound = bind_params(&mut tape, store, false);
    let g = tape.constant(g_left.clone());
    let m = tape.constant(mask.clone());
    let mut f = Fwd::new(&mut tape, &bound, Mode::Eval);
    let wmap = def.mask_weight(&mut f, g, m);
    tape.value(wmap).clone()
}

/// Mask-enhanced residual aggregation for a full decoder state.
pub fn modulate(g: &Tensor, w: &Tensor, store: &ParamStore, level_prefix: &str) -> Result<Tensor> {
    let (gc, gh, gw) = g.dims3();
    if gc % 2 != 0 {
        return Err(Error::shape("modulate", "even channel count", format!("{gc}")));
    }
    let (wc, wh, ww) = w.dims3();
    if (wc, wh, ww) != (gc / 2, gh, gw) {
        return Err(Error::shape(
            "modulate",
            format!("[{},{gh},{gw}] weight map", gc / 2),
            format!("[{wc},{wh},{ww}]"),
        ));
    }
    let def = MacrLevelDef::new(level_prefix, gc, gc / 2, true);
    let mut tape = Tape::new();
    let bound = bind_params(&mut tape, store, false);
    let gv = tape.constant(g.clone());
    let wv = tape.constant(w.clone());
    let mut f = Fwd::new(&mut tape, &bound, Mode::Eval);
    let out = def.modulate(&mut f, &[gv], &[wv]);
    Ok(tape.value(out[0]).clone())
}

/// Runs the whole MACR branch on an encoded pyramid under a mask prior
/// (inference-mode normalization). Returns the coarse restored image and the
/// per-level decoder features.
pub fn macr_forward(
    pyramid: &[Tensor],
    mask: &SaliencyMask,
    store: &ParamStore,
    config: &ModelConfig,
) -> Result<(Image, Vec<Tensor>)> {
    if pyramid.len() != config.levels {
        return Err(Error::shape(
            "macr_forward",
            format!("{} pyramid levels", config.levels),
            format!("{}", pyramid.len()),
        ));
    }
    let def = MacrDef::new("macr", config);
    let mut tape = Tape::new();
    let bound = bind_params(&mut tape, store, false);
    let pyr: Vec<Vec<Var>> = pyramid.iter().map(|t| vec![tape.constant(t.clone())]).collect();
    let m = tape.constant(mask.clone());
    let mut f = Fwd::new(&mut tape, &bound, Mode::Eval);
    let (imgs, feats) = def.fwd(&mut f, &pyr, &[m]);
    Ok((
        tape.value(imgs[0]).clone(),
        feats.into_iter().map(|v| tape.value(v[0]).clone()).collect(),
    ))
}
