//! Shared hierarchical encoder. A 3x3 stem maps the RGB input to
//! `channels[0]` at full resolution; every later level is a stride-2 3x3
//! convolution followed by a residual block, halving the spatial size and
//! following the channel schedule.

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{CbrDef, ConvDef, Fwd, Mode, ResBlockDef};
use crate::params::{bind_params, ParamBuilder, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::{Image, Tensor};

/// One downsampling level: stride-2 conv then a residual block.
#[derive(Clone, Debug)]
pub struct EncLevelDef {
    pub down: CbrDef,
    pub res: ResBlockDef,
}

/// Encoder definition; `levels` holds levels 1..L-1 (level 0 is the stem).
#[derive(Clone, Debug)]
pub struct EncoderDef {
    pub stem: ConvDef,
    pub levels: Vec<EncLevelDef>,
}

impl EncoderDef {
    pub fn new(prefix: &str, cfg: &ModelConfig) -> Self {
        let stem = ConvDef::conv3(&format!("{prefix}.stem"), 3, cfg.channels[0]);
        let levels = (1..cfg.levels)
            .map(|l| EncLevelDef {
                down: CbrDef::conv3_s2(
                    &format!("{prefix}.l{l}.down"),
                    cfg.channels[l - 1],
                    cfg.channels[l],
                ),
                res: ResBlockDef::new(&format!("{prefix}.l{l}.res"), cfg.channels[l]),
            })
            .collect();
        EncoderDef { stem, levels }
    }

    pub fn register(&self, b: &mut ParamBuilder) {
        self.stem.register(b);
        for l in &self.levels {
            l.down.register(b);
            l.res.register(b);
        }
    }

    /// Produces the feature pyramids for a batch, finest (full resolution)
    /// first: `pyramid[level][sample]`.
    pub fn fwd(&self, f: &mut Fwd, images: &[Var]) -> Vec<Vec<Var>> {
        let mut pyramid = Vec::with_capacity(self.levels.len() + 1);
        let mut xs: Vec<Var> = images.iter().map(|&img| self.stem.fwd(f, img)).collect();
        pyramid.push(xs.clone());
        for l in &self.levels {
            xs = l.down.fwd(f, &xs);
            xs = l.res.fwd(f, &xs);
            pyramid.push(xs.clone());
        }
        pyramid
    }
}

/// Checks that an image can be encoded under `config`.
pub fn check_divisible(image: &Tensor, config: &ModelConfig) -> Result<()> {
    let (c, h, w) = image.dims3();
    if c != 3 {
        return Err(Error::shape("encode", "[3,H,W]", format!("[{c},{h},{w}]")));
    }
    let d = config.required_divisor();
    if h % d != 0 || w % d != 0 {
        return Err(Error::shape(
            "encode",
            format!("H and W divisible by {d}"),
            format!("{h}x{w}"),
        ));
    }
    Ok(())
}

/// Encodes an image into its feature pyramid (inference-mode normalization).
///
/// The store must contain the arrays registered by an [`EncoderDef`] with
/// the given prefix ("enc" for the stage-1 encoder).
pub fn encode(image: &Image, store: &ParamStore, config: &ModelConfig, prefix: &str) -> Result<Vec<Tensor>> {
    check_divisible(image, config)?;
    let def = EncoderDef::new(prefix, config);
    let mut tape = Tape::new();
    let bound = bind_params(&mut tape, store, false);
    let img = tape.constant(image.clone());
    let mut f = Fwd::new(&mut tape, &bound, Mode::Eval);
    let pyr = def.fwd(&mut f, &[img]);
    Ok(pyr.into_iter().map(|v| tape.value(v[0]).clone()).collect())
}
