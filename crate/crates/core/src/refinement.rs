//! Task-reciprocal refinement stage: the saliency-aware composite image is
//! re-encoded by a dedicated encoder, fused with the stage-1 decoder
//! features, modulated across levels (CLFM), and decoded into the final
//! restored image and the final saliency mask.

use crate::config::ModelConfig;
use crate::encoder::EncoderDef;
use crate::error::{Error, Result};
use crate::nn::{BnDef, CbrDef, ConvDef, Fwd, Mode, ResDownDef, ResUpDef};
use crate::params::{bind_params, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::{check_same_shape, Image, SaliencyMask, Tensor};

/// Saliency-aware composite: I_pre = restored * mask + (1 - mask) * raw.
/// The foreground keeps the coarse restoration; the background keeps the
/// raw input. The mask broadcasts over the three color channels.
pub fn composite_image(restored: &Image, mask: &SaliencyMask, raw: &Image) -> Result<Image> {
    check_same_shape(restored, raw, "composite_image")?;
    let (_, h, w) = restored.dims3();
    let (mc, mh, mw) = mask.dims3();
    if (mc, mh, mw) != (1, h, w) {
        return Err(Error::shape(
            "composite_image",
            format!("[1,{h},{w}] mask"),
            format!("[{mc},{mh},{mw}]"),
        ));
    }
    let mut out = Tensor::zeros(restored.shape());
    let m = mask.data();
    let plane = h * w;
    for c in 0..3 {
        let r = &restored.data()[c * plane..(c + 1) * plane];
        let i = &raw.data()[c * plane..(c + 1) * plane];
        let o = &mut out.data_mut()[c * plane..(c + 1) * plane];
        for p in 0..plane {
            o[p] = r[p] * m[p] + (1.0 - m[p]) * i[p];
        }
    }
    Ok(out)
}

/// Composite on the tape (same formula, differentiable).
pub fn composite_t(f: &mut Fwd, restored: Var, mask: Var, raw: Var) -> Var {
    let one = f.tape.constant(Tensor::filled(&[1, 1, 1], 1.0));
    let fg = f.tape.mul(restored, mask);
    let inv = f.tape.sub(one, mask);
    let bg = f.tape.mul(inv, raw);
    f.tape.add(fg, bg)
}

/// Cross-Level Feature Modulation over the K finest levels
/// (K = min(3, levels-1)). Stage j consumes level j's feature (plus the
/// running state and an upsampled projection of the coarsest input) and
/// produces a feature one level down: out[j] lives at level j+1 with
/// channels[j+1] channels.
#[derive(Clone, Debug)]
pub struct ClfmDef {
    /// res_ups[j] carries the coarsest input feature into stage j (absent
    /// for the final stage, which adds the coarsest input directly).
    pub res_ups: Vec<ResUpDef>,
    pub res_downs: Vec<ResDownDef>,
}

impl ClfmDef {
    /// `in_channels[j]` is the width of input feature j (level j);
    /// `out_channels[j]` is the width of stage j's output (level j+1).
    pub fn new(prefix: &str, in_channels: &[usize], out_channels: &[usize]) -> Self {
        let k = in_channels.len();
        assert_eq!(out_channels.len(), k);
        let coarse_c = in_channels[k - 1];
        let res_ups = (0..k.saturating_sub(1))
            .map(|j| ResUpDef::new(&format!("{prefix}.up{j}"), coarse_c, in_channels[j]))
            .collect();
        let res_downs = (0..k)
            .map(|j| {
                let cin = if j == 0 { in_channels[0] } else { out_channels[j - 1] };
                ResDownDef::new(&format!("{prefix}.down{j}"), cin, out_channels[j])
            })
            .collect();
        ClfmDef { res_ups, res_downs }
    }

    pub fn from_config(prefix: &str, cfg: &ModelConfig) -> Self {
        let k = cfg.clfm_inputs();
        ClfmDef::new(prefix, &cfg.channels[0..k], &cfg.channels[1..k + 1])
    }

    pub fn register(&self, b: &mut crate::params::ParamBuilder) {
        for u in &self.res_ups {
            u.register(b);
        }
        for d in &self.res_downs {
            d.register(b);
        }
    }

    /// Runs the modulation chain on a batch (`feats[stage][sample]`).
    /// `linear` disables normalization and activations (test hook for the
    /// additivity probe).
    pub fn fwd(&self, f: &mut Fwd, feats: &[Vec<Var>], linear: bool) -> Vec<Vec<Var>> {
        let k = self.res_downs.len();
        assert_eq!(feats.len(), k, "clfm expects {k} features");
        let coarse = &feats[k - 1];
        let mut outs: Vec<Vec<Var>> = Vec::with_capacity(k);
        let mut prev: Option<Vec<Var>> = None;
        for j in 0..k {
            let mut sums = feats[j].clone();
            if let Some(p) = &prev {
                for (sum, &p) in sums.iter_mut().zip(p) {
                    *sum = f.tape.add(p, *sum);
                }
            }
            if j < k - 1 {
                let (_, h, w) = f.tape.value(feats[j][0]).dims3();
                let ups = self.res_ups[j].fwd_ex(f, coarse, h, w, linear);
                for (sum, up) in sums.iter_mut().zip(ups) {
                    *sum = f.tape.add(*sum, up);
                }
            }
            let d = self.res_downs[j].fwd_ex(f, &sums, linear);
            outs.push(d.clone());
            prev = Some(d);
        }
        outs
    }
}

impl ModelConfig {
    /// Number of pyramid levels CLFM consumes.
    pub fn clfm_inputs(&self) -> usize {
        3.min(self.levels - 1)
    }
}

/// One refinement decoder level: the MACR step structure without mask
/// modulation.
#[derive(Clone, Debug)]
pub struct RefDecLevelDef {
    pub up: ResUpDef,
    pub cnr: CbrDef,
    pub bn: BnDef,
}

impl RefDecLevelDef {
    pub fn new(prefix: &str, state_c: usize, out_c: usize) -> Self {
        RefDecLevelDef {
            up: ResUpDef::new(&format!("{prefix}.up"), state_c, state_c),
            cnr: CbrDef::conv3(&format!("{prefix}.cnr"), state_c, out_c),
            bn: BnDef::new(&format!("{prefix}.bn"), 2 * out_c),
        }
    }

    pub fn register(&self, b: &mut crate::params::ParamBuilder) {
        self.up.register(b);
        self.cnr.register(b);
        self.bn.register(b);
    }

    pub fn fwd(&self, f: &mut Fwd, states: &[Var], skips: &[Var]) -> Vec<Var> {
        let (_, sh, sw) = f.tape.value(skips[0]).dims3();
        let up = self.up.fwd(f, states, sh, sw);
        let c = self.cnr.fwd(f, &up);
        let gs: Vec<Var> = c
            .into_iter()
            .zip(skips)
            .map(|(c, &skip)| f.tape.concat_c(&[c, skip]))
            .collect();
        let n = self.bn.fwd(f, &gs);
        n.into_iter().map(|n| f.tape.relu(n)).collect()
    }
}

/// The refinement stage: dedicated encoder, symmetric skip fusion with both
/// stage-1 branches, CLFM, decoder, and the two output heads.
#[derive(Clone, Debug)]
pub struct RefineDef {
    pub enc: EncoderDef,
    /// 1x1 projections for the stage-1 SCSM decoder features, per level.
    pub fuse_scsm: Vec<ConvDef>,
    /// 1x1 projections for the stage-1 MACR decoder features, per level.
    pub fuse_macr: Vec<ConvDef>,
    pub clfm: ClfmDef,
    pub dec: Vec<RefDecLevelDef>,
    pub img_head: ConvDef,
    pub mask_head: ConvDef,
}

impl RefineDef {
    pub fn new(prefix: &str, cfg: &ModelConfig) -> Self {
        let l = cfg.levels;
        let enc_prefix = if cfg.shared_refinement_encoder {
            "enc".to_string()
        } else {
            format!("{prefix}.enc")
        };
        let fuse_scsm = (0..l - 1)
            .map(|t| ConvDef::conv1(&format!("{prefix}.fuse_s.l{t}"), cfg.channels[t], cfg.channels[t]))
            .collect();
        let fuse_macr = (0..l - 1)
            .map(|t| ConvDef::conv1(&format!("{prefix}.fuse_m.l{t}"), 2 * cfg.channels[t], cfg.channels[t]))
            .collect();
        let dec = (0..l - 1)
            .map(|t| {
                let state_c = if t == l - 2 {
                    cfg.channels[l - 1]
                } else {
                    2 * cfg.channels[t + 1]
                };
                RefDecLevelDef::new(&format!("{prefix}.dec.l{t}"), state_c, cfg.channels[t])
            })
            .collect();
        RefineDef {
            enc: EncoderDef::new(&enc_prefix, cfg),
            fuse_scsm,
            fuse_macr,
            clfm: ClfmDef::from_config(&format!("{prefix}.clfm"), cfg),
            dec,
            img_head: ConvDef::conv3(&format!("{prefix}.img_head"), 2 * cfg.channels[0], 3),
            mask_head: ConvDef::conv1(&format!("{prefix}.mask_head"), 2 * cfg.channels[0], 1),
        }
    }

    /// Registers everything except the encoder when it is shared with the
    /// stage-1 encoder (whose arrays already exist under the same names).
    pub fn register(&self, b: &mut crate::params::ParamBuilder, shared_encoder: bool) {
        if !shared_encoder {
            self.enc.register(b);
        }
        for c in &self.fuse_scsm {
            c.register(b);
        }
        for c in &self.fuse_macr {
            c.register(b);
        }
        self.clfm.register(b);
        for d in &self.dec {
            d.register(b);
        }
        self.img_head.register(b);
        self.mask_head.register(b);
    }

    pub fn fwd(
        &self,
        f: &mut Fwd,
        composites: &[Var],
        scsm_feats: &[Vec<Var>],
        macr_feats: &[Vec<Var>],
    ) -> (Vec<Var>, Vec<Var>) {
        let pyr = self.enc.fwd(f, composites);
        let l = pyr.len();
        let mut fused: Vec<Vec<Var>> = Vec::with_capacity(l);
        for (t, ps) in pyr.iter().enumerate() {
            if t < l - 1 {
                let level: Vec<Var> = ps
                    .iter()
                    .enumerate()
                    .map(|(i, &p)| {
                        let s = self.fuse_scsm[t].fwd(f, scsm_feats[t][i]);
                        let m = self.fuse_macr[t].fwd(f, macr_feats[t][i]);
                        let sm = f.tape.add(s, m);
                        f.tape.add(p, sm)
                    })
                    .collect();
                fused.push(level);
            } else {
                fused.push(ps.clone());
            }
        }
        let k = self.clfm.res_downs.len();
        let clfm_outs = self.clfm.fwd(f, &fused[0..k], false);
        for (j, d) in clfm_outs.into_iter().enumerate() {
            for (fv, d) in fused[j + 1].iter_mut().zip(d) {
                *fv = f.tape.add(*fv, d);
            }
        }
        let mut states = fused[l - 1].clone();
        for t in (0..l - 1).rev() {
            states = self.dec[t].fwd(f, &states, &fused[t]);
        }
        let imgs = states
            .iter()
            .map(|&s| {
                let logit = self.img_head.fwd(f, s);
                f.tape.sigmoid(logit)
            })
            .collect();
        let masks = states
            .iter()
            .map(|&s| {
                let logit = self.mask_head.fwd(f, s);
                f.tape.sigmoid(logit)
            })
            .collect();
        (imgs, masks)
    }
}

/// Cross-level modulation of three features (f3 at 1/4 the resolution of
/// f1, f2 at 1/2). Store arrays must exist under `prefix` ("ref.clfm" for
/// the full model, provided the config has at least four levels).
pub fn clfm(
    f1: &Tensor,
    f2: &Tensor,
    f3: &Tensor,
    store: &ParamStore,
    prefix: &str,
) -> Result<(Tensor, Tensor, Tensor)> {
    clfm_with_mode(f1, f2, f3, store, prefix, false)
}

/// Same as [`clfm`] with the linear test hook exposed.
pub fn clfm_with_mode(
    f1: &Tensor,
    f2: &Tensor,
    f3: &Tensor,
    store: &ParamStore,
    prefix: &str,
    linear: bool,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (c1, h1, w1) = f1.dims3();
    let (c2, h2, w2) = f2.dims3();
    let (c3, h3, w3) = f3.dims3();
    if (h2 * 2, w2 * 2) != (h1, w1) || (h3 * 4, w3 * 4) != (h1, w1) {
        return Err(Error::shape(
            "clfm",
            format!("f2 at 1/2 and f3 at 1/4 of f1 ({h1}x{w1})"),
            format!("f2 {h2}x{w2}, f3 {h3}x{w3}"),
        ));
    }
    // Output widths come from the registered ResDown kernels.
    let outs: Vec<usize> = (0..3)
        .map(|j| store.get(&format!("{prefix}.down{j}.cbr.conv.w")).shape()[0])
        .collect();
    let def = ClfmDef::new(prefix, &[c1, c2, c3], &outs);
    let mut tape = Tape::new();
    let bound = bind_params(&mut tape, store, false);
    let vars = [
        vec![tape.constant(f1.clone())],
        vec![tape.constant(f2.clone())],
        vec![tape.constant(f3.clone())],
    ];
    let mut f = Fwd::new(&mut tape, &bound, Mode::Eval);
    let out = def.fwd(&mut f, &vars, linear);
    Ok((
        tape.value(out[0][0]).clone(),
        tape.value(out[1][0]).clone(),
        tape.value(out[2][0]).clone(),
    ))
}

/// Runs the refinement stage on a composite image plus the stage-1 decoder
/// features (inference-mode normalization). When saliency mask flow is
/// disabled the caller passes the raw input in place of the composite.
pub fn refine_forward(
    composite: &Image,
    scsm_feats: &[Tensor],
    macr_feats: &[Tensor],
    store: &ParamStore,
    config: &ModelConfig,
) -> Result<(Image, SaliencyMask)> {
    if scsm_feats.len() != config.levels - 1 || macr_feats.len() != config.levels - 1 {
        return Err(Error::shape(
            "refine_forward",
            format!("{} stage-1 feature levels", config.levels - 1),
            format!("{} and {}", scsm_feats.len(), macr_feats.len()),
        ));
    }
    let def = RefineDef::new("ref", config);
    let mut tape = Tape::new();
    let bound = bind_params(&mut tape, store, false);
    let comp = tape.constant(composite.clone());
    let sf: Vec<Vec<Var>> = scsm_feats.iter().map(|t| vec![tape.constant(t.clone())]).collect();
    let mf: Vec<Vec<Var>> = macr_feats.iter().map(|t| vec![tape.constant(t.clone())]).collect();
    let mut f = Fwd::new(&mut tape, &bound, Mode::Eval);
    let (imgs, masks) = def.fwd(&mut f, &[comp], &sf, &mf);
    Ok((tape.value(imgs[0]).clone(), tape.value(masks[0]).clone()))
}
