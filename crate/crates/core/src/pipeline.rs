//! End-to-end training (Adam, per-step loss logging, epoch checkpoints),
//! dataset evaluation, and single-image inference.

use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{save_checkpoint, CheckpointData};
use crate::config::{FileConfig, LossWeights, ModelConfig};
use crate::data::{load_image, patchify, save_image, save_mask, Sample};
use crate::encoder::check_divisible;
use crate::error::{Error, Result};
use crate::losses::{
    bce_t, content_loss_t, mask_loss_final_t, perceptual_loss_t, total_loss, total_loss_t, LossBreakdown, Reduction,
};
use crate::metrics::{e_measure, mae_metric, psnr, s_measure, ssim, weighted_f_measure, MetricReport, MetricRow};
use crate::model::Model;
use crate::nn::{Fwd, Mode, BN_MOMENTUM};
use crate::params::{bind_params, derive_seed, ParamStore};
use crate::perceptual::PerceptualExtractor;
use crate::tape::Tape;
use crate::tensor::{check_image, Image, SaliencyMask, Tensor};

/// Optimizer and loop settings.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    /// Training patch edge length (used when `augment` is on).
    pub patch: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Console-log cadence hint for callers; the loop itself logs nothing.
    pub log_every: u64,
    /// Checkpoint directory; no checkpoints when absent.
    pub checkpoint_dir: Option<PathBuf>,
    /// Write a checkpoint every this many epochs.
    pub checkpoint_every: usize,
    /// Global gradient-norm clip; None disables clipping.
    pub clip_norm: Option<f64>,
    /// Random crop + horizontal flip. When off, full samples are used.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            batch_size: 32,
            patch: 256,
            epochs: 150,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            log_every: 10,
            checkpoint_dir: None,
            checkpoint_every: 1,
            clip_norm: Some(5.0),
            augment: true,
        }
    }
}

impl FileConfig {
    /// Train config with file values layered over the defaults. A zero or
    /// negative `clip_norm` in the file disables clipping.
    pub fn train_config(&self) -> TrainConfig {
        let mut tc = TrainConfig::default();
        if let Some(v) = self.lr {
            tc.lr = v;
        }
        if let Some(v) = self.batch_size {
            tc.batch_size = v;
        }
        if let Some(v) = self.patch {
            tc.patch = v;
        }
        if let Some(v) = self.epochs {
            tc.epochs = v;
        }
        if let Some(v) = self.log_every {
            tc.log_every = v;
        }
        if let Some(v) = self.clip_norm {
            tc.clip_norm = if v > 0.0 { Some(v) } else { None };
        }
        if let Some(v) = self.augment {
            tc.augment = v;
        }
        tc
    }
}

/// Mutable training state: parameters, optimizer moments, counters, and
/// the running mean of the loss terms over this run.
#[derive(Debug)]
pub struct TrainState {
    pub step: u64,
    pub epoch: u64,
    pub params: ParamStore,
    pub adam_m: IndexMap<String, Tensor>,
    pub adam_v: IndexMap<String, Tensor>,
    pub running: Option<LossBreakdown>,
}

impl TrainState {
    /// Fresh state with zeroed moments for every trainable parameter.
    pub fn new(params: ParamStore) -> Self {
        let mut adam_m = IndexMap::new();
        let mut adam_v = IndexMap::new();
        for (name, p) in params.iter() {
            if p.kind.trainable() {
                adam_m.insert(name.clone(), Tensor::zeros(p.tensor.shape()));
                adam_v.insert(name.clone(), Tensor::zeros(p.tensor.shape()));
            }
        }
        TrainState {
            step: 0,
            epoch: 0,
            params,
            adam_m,
            adam_v,
            running: None,
        }
    }

    /// Rebuilds state from a loaded checkpoint.
    pub fn from_checkpoint(ck: &CheckpointData) -> Self {
        TrainState {
            step: ck.step,
            epoch: ck.epoch,
            params: clone_store(&ck.params),
            adam_m: ck.adam_m.clone(),
            adam_v: ck.adam_v.clone(),
            running: None,
        }
    }
}

fn clone_store(store: &ParamStore) -> ParamStore {
    let mut out = ParamStore::new();
    for (name, p) in store.iter() {
        out.insert(name.clone(), p.tensor.clone(), p.kind);
    }
    out
}

/// The four outputs of a full forward pass as plain tensors.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub restored_coarse: Image,
    pub mask_initial: SaliencyMask,
    pub restored_final: Image,
    pub mask_final: SaliencyMask,
}

/// Inference-mode forward pass: encode, decode both branches, composite,
/// refine. Normalization uses the running buffers.
pub fn forward_full(image: &Image, params: &ParamStore, config: &ModelConfig) -> Result<ForwardOutput> {
    check_image(image, "forward_full")?;
    check_divisible(image, config)?;
    let model = Model::new(config)?;
    let mut tape = Tape::new();
    let bound = bind_params(&mut tape, params, false);
    let img = tape.constant(image.clone());
    let mut f = Fwd::new(&mut tape, &bound, Mode::Eval);
    let out = model.fwd(&mut f, &[img])[0];
    Ok(ForwardOutput {
        restored_coarse: tape.value(out.restored_coarse).clone(),
        mask_initial: tape.value(out.mask_initial).clone(),
        restored_final: tape.value(out.restored_final).clone(),
        mask_final: tape.value(out.mask_final).clone(),
    })
}

/// One optimizer step over a batch: a single forward pass with pooled
/// batch-normalization statistics, one backward pass of the batch-mean
/// loss, optional global-norm clipping, an Adam update, and the
/// normalization running-buffer update.
pub fn train_step(
    mut state: TrainState,
    batch: &[Sample],
    config: &ModelConfig,
    tc: &TrainConfig,
    weights: &LossWeights,
    extractor: &PerceptualExtractor,
) -> Result<(TrainState, LossBreakdown)> {
    assert!(!batch.is_empty(), "train_step needs a non-empty batch");
    let model = Model::new(config)?;
    let step = state.step + 1;
    for sample in batch {
        check_image(&sample.input, "train_step")?;
        check_divisible(&sample.input, config)?;
    }

    let mut tape = Tape::new();
    let bound = bind_params(&mut tape, &state.params, true);
    let imgs: Vec<_> = batch.iter().map(|s| tape.constant(s.input.clone())).collect();
    let mut f = Fwd::new(&mut tape, &bound, Mode::Train);
    let outs = model.fwd(&mut f, &imgs);
    let stats = std::mem::take(&mut f.bn_stats);
    drop(f);

    let mut parts = [0.0f64; 4];
    let mut totals = Vec::with_capacity(batch.len());
    for (sample, out) in batch.iter().zip(&outs) {
        let gt_mask = tape.constant(sample.gt_mask.clone());
        let gt_img = tape.constant(sample.gt_image.clone());
        let gt_taps = extractor.features(&sample.gt_image)?;
        let l_pre = bce_t(&mut tape, out.mask_initial, gt_mask, Reduction::Mean);
        let l_fin = mask_loss_final_t(&mut tape, out.mask_final, gt_mask);
        let l_content = content_loss_t(&mut tape, out.restored_final, gt_img);
        let l_percep = perceptual_loss_t(&mut tape, extractor, out.restored_final, &gt_taps);
        let total = total_loss_t(&mut tape, l_pre, l_fin, l_content, l_percep, weights);
        parts[0] += tape.value(l_pre).data()[0];
        parts[1] += tape.value(l_fin).data()[0];
        parts[2] += tape.value(l_content).data()[0];
        parts[3] += tape.value(l_percep).data()[0];
        totals.push(total);
    }

    let b = batch.len() as f64;
    let breakdown = total_loss(parts[0] / b, parts[1] / b, parts[2] / b, parts[3] / b, weights);
    if !(breakdown.total.is_finite()
        && breakdown.mask_pre.is_finite()
        && breakdown.mask_fin.is_finite()
        && breakdown.content.is_finite()
        && breakdown.perceptual.is_finite())
    {
        return Err(Error::NonFiniteLoss {
            step,
            mask_pre: breakdown.mask_pre,
            mask_fin: breakdown.mask_fin,
            content: breakdown.content,
            perceptual: breakdown.perceptual,
        });
    }

    let mut objective = totals[0];
    for &t in &totals[1..] {
        objective = tape.add(objective, t);
    }
    if batch.len() > 1 {
        objective = tape.mul_scalar(objective, 1.0 / b);
    }
    let grads = tape.backward(objective);
    let mut grad_sum: IndexMap<String, Tensor> = IndexMap::new();
    for (name, p) in state.params.iter() {
        if p.kind.trainable() {
            grad_sum.insert(name.clone(), Tensor::zeros(p.tensor.shape()));
        }
    }
    for (name, var) in bound.iter() {
        if let Some(g) = grads.of(*var) {
            if let Some(acc) = grad_sum.get_mut(name) {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
        }
    }

    if let Some(clip) = tc.clip_norm {
        let norm: f64 = grad_sum
            .values()
            .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        if norm > clip {
            let scale = clip / norm;
            for (_, g) in grad_sum.iter_mut() {
                for v in g.data_mut() {
                    *v *= scale;
                }
            }
        }
    }

    // Running-buffer update from the pooled batch statistics, the variance
    // unbiased for the buffer.
    for stat in &stats {
        let total_n = stat.count as f64;
        let unbias = if total_n > 1.0 { total_n / (total_n - 1.0) } else { 1.0 };
        let rm = state.params.get_mut(&format!("{}.running_mean", stat.name));
        for i in 0..rm.numel() {
            rm.data_mut()[i] = (1.0 - BN_MOMENTUM) * rm.data()[i] + BN_MOMENTUM * stat.mean.data()[i];
        }
        let rv = state.params.get_mut(&format!("{}.running_var", stat.name));
        for i in 0..rv.numel() {
            rv.data_mut()[i] =
                (1.0 - BN_MOMENTUM) * rv.data()[i] + BN_MOMENTUM * stat.var_biased.data()[i] * unbias;
        }
    }

    // Adam with bias correction.
    let bc1 = 1.0 - tc.beta1.powi(step as i32);
    let bc2 = 1.0 - tc.beta2.powi(step as i32);
    for (name, g) in &grad_sum {
        let m = state.adam_m.get_mut(name).expect("moment exists");
        let v = state.adam_v.get_mut(name).expect("moment exists");
        let p = state.params.get_mut(name);
        for i in 0..g.numel() {
            let gi = g.data()[i];
            let mi = tc.beta1 * m.data()[i] + (1.0 - tc.beta1) * gi;
            let vi = tc.beta2 * v.data()[i] + (1.0 - tc.beta2) * gi * gi;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            let mhat = mi / bc1;
            let vhat = vi / bc2;
            p.data_mut()[i] -= tc.lr * mhat / (vhat.sqrt() + tc.eps);
        }
    }

    state.step = step;
    state.running = Some(match state.running {
        None => breakdown,
        Some(r) => {
            // Running mean over the steps of this run.
            let n = state.step as f64;
            let blend = |old: f64, new: f64| old + (new - old) / n;
            LossBreakdown {
                mask_pre: blend(r.mask_pre, breakdown.mask_pre),
                mask_fin: blend(r.mask_fin, breakdown.mask_fin),
                content: blend(r.content, breakdown.content),
                perceptual: blend(r.perceptual, breakdown.perceptual),
                total: blend(r.total, breakdown.total),
            }
        }
    });
    Ok((state, breakdown))
}

/// One per-step row of the loss curve.
#[derive(Clone, Copy, Debug)]
pub struct LossRow {
    pub step: u64,
    pub mask_pre: f64,
    pub mask_fin: f64,
    pub content: f64,
    pub perceptual: f64,
    pub total: f64,
}

impl LossRow {
    fn new(step: u64, b: &LossBreakdown) -> Self {
        LossRow {
            step,
            mask_pre: b.mask_pre,
            mask_fin: b.mask_fin,
            content: b.content,
            perceptual: b.perceptual,
            total: b.total,
        }
    }
}

/// Renders the loss curve as CSV, full precision.
pub fn loss_rows_to_csv(rows: &[LossRow]) -> String {
    let mut out = String::from("step,mask_pre,mask_fin,content,perceptual,total\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:e},{:e},{:e},{:e},{:e}\n",
            r.step, r.mask_pre, r.mask_fin, r.content, r.perceptual, r.total
        ));
    }
    out
}

pub fn write_loss_csv(path: &Path, rows: &[LossRow]) -> Result<()> {
    std::fs::write(path, loss_rows_to_csv(rows)).map_err(|e| Error::io(path, e))
}

/// Runs (or resumes) the training loop: per-epoch shuffling, optional
/// patch augmentation, one loss row per step, and checkpoints every
/// `checkpoint_every` epochs when a directory is set. All randomness
/// derives from the model seed and the epoch index, so a resumed run
/// reproduces the uninterrupted one exactly from any epoch boundary.
pub fn train_loop(
    dataset: &[Sample],
    config: &ModelConfig,
    tc: &TrainConfig,
    weights: &LossWeights,
    extractor: &PerceptualExtractor,
    resume: Option<TrainState>,
    mut on_step: impl FnMut(&LossRow),
) -> Result<(TrainState, Vec<LossRow>)> {
    assert!(!dataset.is_empty(), "train_loop needs a non-empty dataset");
    let mut state = match resume {
        Some(s) => s,
        None => TrainState::new(crate::model::init_params(config)?),
    };
    let shuffle_base = derive_seed(config.seed, 1);
    let augment_base = derive_seed(config.seed, 2);
    let mut rows = Vec::new();

    for epoch in state.epoch..tc.epochs as u64 {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(shuffle_base, epoch));
        order.shuffle(&mut rng);
        let aug_epoch = derive_seed(augment_base, epoch);

        for (chunk_idx, chunk) in order.chunks(tc.batch_size).enumerate() {
            let batch: Vec<Sample> = chunk
                .iter()
                .enumerate()
                .map(|(j, &idx)| {
                    let slot = (chunk_idx * tc.batch_size + j) as u64;
                    if tc.augment {
                        patchify(&dataset[idx], tc.patch, derive_seed(aug_epoch, slot))
                    } else {
                        Ok(dataset[idx].clone())
                    }
                })
                .collect::<Result<_>>()?;
            let (next, breakdown) = train_step(state, &batch, config, tc, weights, extractor)?;
            state = next;
            let row = LossRow::new(state.step, &breakdown);
            on_step(&row);
            rows.push(row);
        }

        state.epoch = epoch + 1;
        if let Some(dir) = &tc.checkpoint_dir {
            let due = state.epoch % tc.checkpoint_every.max(1) as u64 == 0 || state.epoch == tc.epochs as u64;
            if due {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let path = dir.join(format!("ckpt-{:04}.uv2d", state.epoch));
                save_checkpoint(
                    &path,
                    &CheckpointData {
                        config: config.clone(),
                        step: state.step,
                        epoch: state.epoch,
                        params: clone_store(&state.params),
                        extractor: extractor.clone(),
                        adam_m: state.adam_m.clone(),
                        adam_v: state.adam_v.clone(),
                    },
                )?;
            }
        }
    }
    Ok((state, rows))
}

/// Evaluates a dataset with an arbitrary forward function (the hook tests
/// use to isolate the metrics from the model).
pub fn evaluate_with<F>(dataset: &[Sample], mut forward: F) -> Result<MetricReport>
where
    F: FnMut(&Sample) -> Result<(Image, SaliencyMask)>,
{
    let mut rows = Vec::with_capacity(dataset.len());
    for s in dataset {
        let (restored, mask) = forward(s)?;
        rows.push(MetricRow {
            name: s.id.clone(),
            psnr: psnr(&restored, &s.gt_image)?,
            ssim: ssim(&restored, &s.gt_image)?,
            mae: mae_metric(&mask, &s.gt_mask)?,
            s_measure: s_measure(&mask, &s.gt_mask)?,
            weighted_f_measure: weighted_f_measure(&mask, &s.gt_mask)?,
            e_measure: e_measure(&mask, &s.gt_mask)?,
        });
    }
    Ok(MetricReport { rows })
}

/// Evaluates the model over a dataset: image metrics on the refined
/// restoration, saliency metrics on the refined mask.
pub fn evaluate(dataset: &[Sample], params: &ParamStore, config: &ModelConfig) -> Result<MetricReport> {
    evaluate_with(dataset, |s| {
        let out = forward_full(&s.input, params, config)?;
        Ok((out.restored_final, out.mask_final))
    })
}

/// Restores a checkpoint and runs one image through the model, writing
/// `<stem>_restored.png` and `<stem>_mask.png` into `out_dir`. Returns the
/// two output paths.
pub fn infer(image_path: &Path, checkpoint_path: &Path, out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let ck = crate::checkpoint::load_checkpoint(checkpoint_path)?;
    let image = load_image(image_path)?;
    let out = forward_full(&image, &ck.params, &ck.config)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let stem = image_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("image")
        .to_string();
    let restored_path = out_dir.join(format!("{stem}_restored.png"));
    let mask_path = out_dir.join(format!("{stem}_mask.png"));
    save_image(&restored_path, &out.restored_final)?;
    save_mask(&mask_path, &out.mask_final)?;
    Ok((restored_path, mask_path))
}
