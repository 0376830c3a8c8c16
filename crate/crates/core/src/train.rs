//! Pretraining: augmentation, learning-rate schedule, AdamW and the loop
//! that ties segments to optimizer steps.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{self, ArchConfig, Example, ModelState, PosTables};
use crate::pipeline::{prepare, MapConfig, Prepared, TokenConfig};
use crate::rng::{self, stream};
use crate::synth::Segment;
use crate::tensor::Tensor;
use crate::tokenizer::MaskPlan;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugSpec {
    pub p_flip: f64,
    pub noise_std: f64,
    pub stretch_range: (f64, f64),
}

impl Default for AugSpec {
    fn default() -> Self {
        Self {
            p_flip: 0.5,
            noise_std: 0.05,
            stretch_range: (0.8, 1.25),
        }
    }
}

impl AugSpec {
    pub fn identity() -> Self {
        Self {
            p_flip: 0.0,
            noise_std: 0.0,
            stretch_range: (1.0, 1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.stretch_range;
        if !(0.0..=1.0).contains(&self.p_flip) {
            return Err(Error::config(format!("p_flip {} outside [0, 1]", self.p_flip)));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::config(format!("noise_std {} must be >= 0", self.noise_std)));
        }
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::config(format!("stretch_range ({lo}, {hi}) must be positive and ordered")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub total_steps: usize,
    pub warmup_frac: f64,
    pub grad_clip_norm: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub log_every: usize,
    pub augment: AugSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 1e-4,
            weight_decay: 1e-5,
            batch_size: 32,
            total_steps: 500,
            warmup_frac: 0.10,
            grad_clip_norm: 1.0,
            betas: (0.9, 0.999),
            eps: 1e-8,
            log_every: 10,
            augment: AugSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.warmup_frac > 0.0 && self.warmup_frac < 1.0) {
            return Err(Error::config(format!("warmup_frac {} must lie in (0, 1)", self.warmup_frac)));
        }
        if !(self.grad_clip_norm > 0.0) {
            return Err(Error::config("grad_clip_norm must be > 0"));
        }
        if !(self.base_lr > 0.0) || !(self.weight_decay >= 0.0) || !(self.eps > 0.0) {
            return Err(Error::config("base_lr and eps must be > 0, weight_decay >= 0"));
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(Error::config(format!("betas ({b1}, {b2}) must lie in [0, 1)")));
        }
        if self.batch_size == 0 || self.total_steps == 0 || self.log_every == 0 {
            return Err(Error::config("batch_size, total_steps and log_every must be >= 1"));
        }
        self.augment.validate()
    }

    fn warmup_steps(&self) -> usize {
        ((self.warmup_frac * self.total_steps as f64).round() as usize).clamp(1, self.total_steps)
    }
}

/// Index into `0..len` folded back and forth like a mirror without repeating
/// the edge sample.
fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    (if m < len as isize { m } else { period - m }) as usize
}

/// Rescale in time by `factor` with linear interpolation, then centre-crop
/// or reflect-pad back to the input length.
pub fn stretch(x: &[f64], factor: f64) -> Vec<f64> {
    let t = x.len();
    if t < 2 || factor == 1.0 {
        return x.to_vec();
    }
    let l = ((t as f64 * factor).round() as usize).max(2);
    let scale = (t - 1) as f64 / (l - 1) as f64;
    let y: Vec<f64> = (0..l)
        .map(|i| {
            let pos = i as f64 * scale;
            let k = (pos.floor() as usize).min(t - 2);
            let frac = pos - k as f64;
            x[k] * (1.0 - frac) + x[k + 1] * frac
        })
        .collect();
    if l >= t {
        let start = (l - t) / 2;
        y[start..start + t].to_vec()
    } else {
        let left = ((t - l) / 2) as isize;
        (0..t as isize)
            .map(|i| y[reflect_index(i - left, l)])
            .collect()
    }
}

/// Time flip, additive Gaussian noise and temporal stretch, in that order.
/// The same number of random draws is consumed whatever the outcome.
pub fn augment(x: &[f64], spec: &AugSpec, rng: &mut rng::Rng) -> Vec<f64> {
    let flip = rng.random::<f64>() < spec.p_flip;
    let (lo, hi) = spec.stretch_range;
    let u: f64 = rng.random();
    let factor = lo + (hi - lo) * u;
    let mut y: Vec<f64> = if flip { x.iter().rev().copied().collect() } else { x.to_vec() };
    if spec.noise_std > 0.0 {
        let normal = Normal::new(0.0, spec.noise_std).expect("validated std");
        y.iter_mut().for_each(|v| *v += normal.sample(rng));
    }
    stretch(&y, factor)
}

/// Linear warmup to `base_lr`, then half-cosine decay to zero at
/// `total_steps`.
pub fn lr_at(step: usize, cfg: &TrainConfig) -> Result<f64> {
    if step > cfg.total_steps {
        return Err(Error::Contract(format!(
            "step {step} beyond total_steps {}",
            cfg.total_steps
        )));
    }
    let w = cfg.warmup_steps();
    if step <= w {
        return Ok(cfg.base_lr * step as f64 / w as f64);
    }
    let span = (cfg.total_steps - w) as f64;
    let progress = (step - w) as f64 / span;
    Ok(cfg.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

pub type Grads = BTreeMap<String, Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
    pub t: u64,
}

pub fn global_norm(grads: &Grads) -> f64 {
    grads.values().flatten().map(|g| g * g).sum::<f64>().sqrt()
}

/// Scale `grads` in place so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grads(grads: &mut Grads, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let s = max_norm / norm;
        grads.values_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}

/// One AdamW update with global-norm clipping and decoupled weight decay.
/// Returns the gradient norm before clipping. A non-finite gradient aborts
/// the step with parameters and moments untouched.
pub fn adamw_step(
    params: &mut BTreeMap<String, Tensor>,
    grads: &Grads,
    state: &mut AdamState,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<f64> {
    for (name, p) in params.iter() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::Contract(format!("no gradient for {name}")))?;
        if g.len() != p.len() {
            return Err(Error::shape(format!("gradient for {name} has {} values, expected {}", g.len(), p.len())));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                layer: format!("gradient of {name}"),
            });
        }
    }
    let mut grads = grads.clone();
    let norm = clip_grads(&mut grads, cfg.grad_clip_norm);
    state.t += 1;
    let (b1, b2) = cfg.betas;
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    let decay = 1.0 - lr * cfg.weight_decay;
    for (name, p) in params.iter_mut() {
        let g = &grads[name];
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *w = *w * decay - lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(norm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct PretrainSpec {
    pub arch: ArchConfig,
    pub map: MapConfig,
    pub tok: TokenConfig,
    pub train: TrainConfig,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct PretrainOutput {
    pub state: ModelState,
    pub opt: AdamState,
    pub curve: Vec<LossPoint>,
    pub skipped: usize,
    pub attempted: usize,
}

/// Examples processed together; their gradients are summed in index order so
/// the result does not depend on the worker count.
const GRAD_CHUNK: usize = 8;

fn is_degenerate(e: &Error) -> bool {
    matches!(e, Error::DegenerateSegment(_))
}

fn prepared_example(
    samples: &[f64],
    fs: f64,
    spec: &PretrainSpec,
    mask_seed: u64,
) -> Result<Option<(Prepared, MaskPlan)>> {
    match prepare(samples, fs, spec.arch.mode, &spec.map, &spec.tok) {
        Ok(p) => {
            let mask = p.mask(&spec.tok, mask_seed)?;
            Ok(Some((p, mask)))
        }
        Err(e) if is_degenerate(&e) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Batch-mean loss and gradients, computed one example per tape.
fn batch_grads(state: &ModelState, items: &[(Prepared, MaskPlan)], pos: &PosTables) -> Result<(f64, Grads)> {
    let mut loss = 0.0;
    let mut total: Option<Grads> = None;
    for chunk in items.chunks(GRAD_CHUNK) {
        let results: Vec<Result<(f64, Grads)>> = chunk
            .par_iter()
            .map(|(p, m)| model::loss_and_grads(state, &[Example::new(&p.patches, m)], pos))
            .collect();
        for r in results {
            let (l, g) = r?;
            loss += l;
            match &mut total {
                None => total = Some(g),
                Some(t) => {
                    for (k, v) in g {
                        t.get_mut(&k)
                            .expect("same parameter set")
                            .iter_mut()
                            .zip(v)
                            .for_each(|(a, b)| *a += b);
                    }
                }
            }
        }
    }
    let n = items.len() as f64;
    let mut total = total.expect("non-empty batch");
    total.values_mut().flatten().for_each(|g| *g /= n);
    Ok((loss / n, total))
}

/// Pretrain a fresh model on preprocessed segments.
///
/// Degenerate segments (for example a constant band after augmentation) are
/// skipped and counted; the run aborts once more than half of the attempted
/// segments have been skipped.
pub fn pretrain(
    segments: &[Segment],
    spec: &PretrainSpec,
    mut on_log: impl FnMut(&LossPoint),
) -> Result<PretrainOutput> {
    spec.train.validate()?;
    spec.arch.validate()?;
    if segments.is_empty() {
        return Err(Error::config("no segments to train on"));
    }
    let fs = segments[0].fs_hz;
    let t = segments[0].samples.len();
    if let Some(s) = segments.iter().find(|s| s.samples.len() != t || s.fs_hz != fs) {
        return Err(Error::shape(format!(
            "segment {} has {} samples at {} Hz; expected {t} at {fs} Hz",
            s.segment_id,
            s.samples.len(),
            s.fs_hz
        )));
    }
    let probe = segments
        .iter()
        .find_map(|s| prepare(&s.samples, fs, spec.arch.mode, &spec.map, &spec.tok).ok())
        .ok_or_else(|| Error::DegenerateSegment("no segment yields a valid coefficient map".into()))?;
    if probe.patches.dim != spec.arch.patch_dim {
        return Err(Error::config(format!(
            "arch.patch_dim {} but the tokenizer produces patches of dim {}",
            spec.arch.patch_dim, probe.patches.dim
        )));
    }
    let pos = PosTables::new(&probe.grid, &spec.arch)?;

    let mut state = ModelState::init(spec.arch, rng::derive(spec.seed, stream::INIT))?;
    let mut opt = AdamState::default();
    let mut order_rng = rng::rng(rng::derive(spec.seed, stream::BATCH));
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut curve = Vec::with_capacity(spec.train.total_steps);
    let (mut skipped, mut attempted) = (0usize, 0usize);

    for step in 0..spec.train.total_steps {
        let mut idx = Vec::with_capacity(spec.train.batch_size);
        while idx.len() < spec.train.batch_size {
            if cursor == order.len() {
                order = (0..segments.len()).collect();
                order.shuffle(&mut order_rng);
                cursor = 0;
            }
            idx.push(order[cursor]);
            cursor += 1;
        }
        let prepared: Vec<Result<Option<(Prepared, MaskPlan)>>> = idx
            .par_iter()
            .enumerate()
            .map(|(slot, &i)| {
                let path = [step as u64, slot as u64];
                let mut aug_rng = rng::rng(rng::derive_path(spec.seed, &[stream::AUGMENT, path[0], path[1]]));
                let x = augment(&segments[i].samples, &spec.train.augment, &mut aug_rng);
                let mask_seed = rng::derive_path(spec.seed, &[stream::MASK, path[0], path[1]]);
                prepared_example(&x, fs, spec, mask_seed)
            })
            .collect();
        let mut items = Vec::with_capacity(prepared.len());
        for p in prepared {
            attempted += 1;
            match p? {
                Some(item) => items.push(item),
                None => skipped += 1,
            }
        }
        if 2 * skipped > attempted {
            return Err(Error::Contract(format!(
                "{skipped} of {attempted} segments were degenerate; run aborted"
            )));
        }
        if items.is_empty() {
            continue;
        }
        let (loss, grads) = batch_grads(&state, &items, &pos)?;
        let lr = lr_at(step + 1, &spec.train)?;
        adamw_step(&mut state.params, &grads, &mut opt, lr, &spec.train)?;
        let point = LossPoint { step, lr, loss };
        curve.push(point);
        if step % spec.train.log_every == 0 || step + 1 == spec.train.total_steps {
            on_log(&point);
        }
    }
    Ok(PretrainOutput {
        state,
        opt,
        curve,
        skipped,
        attempted,
    })
}

/// Mean masked-patch loss over clean segments with evaluation masks drawn
/// from `seed`. Degenerate segments are left out.
pub fn masked_mse(
    state: &ModelState,
    segments: &[Segment],
    map: &MapConfig,
    tok: &TokenConfig,
    seed: u64,
) -> Result<f64> {
    let items: Vec<Option<(Prepared, MaskPlan)>> = segments
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mask_seed = rng::derive_path(seed, &[stream::EVAL_MASK, i as u64]);
            match prepare(&s.samples, s.fs_hz, state.cfg.mode, map, tok) {
                Ok(p) => Ok(Some((p.clone(), p.mask(tok, mask_seed)?))),
                Err(e) if is_degenerate(&e) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let items: Vec<(Prepared, MaskPlan)> = items.into_iter().flatten().collect();
    let first = items
        .first()
        .ok_or_else(|| Error::DegenerateSegment("every evaluation segment is degenerate".into()))?;
    let pos = PosTables::new(&first.0.grid, &state.cfg)?;
    let losses: Vec<f64> = items
        .par_iter()
        .map(|(p, m)| model::loss_value(state, &[Example::new(&p.patches, m)], &pos))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}
