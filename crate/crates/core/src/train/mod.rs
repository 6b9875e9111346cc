//! Pretraining: augmentation, learning-rate schedule, AdamW, checkpoints
//! and the masked-reconstruction loop.

mod checkpoint;
mod pretrain;

use std::f64::consts::PI;
use std::ops::Range;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CheckpointRng};
pub use pretrain::{evaluate_reconstruction, pretrain, prepare_sequences, LogRow, PretrainSummary};

use crate::adt::AdSequence;
use crate::error::{Error, Result};
use crate::model::{Gradients, ModelState};
use crate::rng::Rng;
use crate::C64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub enabled: bool,
    pub phase_prob: f64,
    pub amplitude_prob: f64,
    pub noise_prob: f64,
    pub amplitude_range: [f64; 2],
    pub snr_db_range: [f64; 2],
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            enabled: true,
            phase_prob: 0.5,
            amplitude_prob: 0.5,
            noise_prob: 0.5,
            amplitude_range: [0.5, 2.0],
            snr_db_range: [10.0, 30.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr_peak: f64,
    /// Final learning rate as a fraction of `lr_peak`.
    pub lr_min_ratio: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub grad_clip: f64,
    pub warmup_ratio: f64,
    pub total_steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Use only the first this many frames of each sequence (0 = all).
    pub max_frames: usize,
    /// Write a checkpoint every this many steps (0 = only at the end).
    pub checkpoint_every: usize,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_peak: 3e-3,
            lr_min_ratio: 0.01,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: 1.0,
            warmup_ratio: 0.1,
            total_steps: 1000,
            batch_size: 16,
            seed: 0,
            max_frames: 0,
            checkpoint_every: 0,
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if !(self.lr_peak >= 0.0 && (0.0..=1.0).contains(&self.lr_min_ratio)) {
            return Err(Error::invalid("need lr_peak >= 0 and lr_min_ratio in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.warmup_ratio) {
            return Err(Error::invalid("warmup_ratio must be in [0, 1]"));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::invalid("Adam betas must be in [0, 1)"));
        }
        if !(self.grad_clip > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::invalid("grad_clip must be > 0 and weight_decay >= 0"));
        }
        let a = &self.augment;
        if !(0.0 < a.amplitude_range[0] && a.amplitude_range[0] <= a.amplitude_range[1]) || a.snr_db_range[0] > a.snr_db_range[1] {
            return Err(Error::invalid("bad augmentation ranges"));
        }
        Ok(())
    }

    pub fn warmup_steps(&self) -> usize {
        (self.warmup_ratio * self.total_steps as f64).round() as usize
    }

    pub fn lr_min(&self) -> f64 {
        self.lr_peak * self.lr_min_ratio
    }
}

/// Learning rate for 1-based optimizer step `step`: linear warmup to
/// `lr_peak`, then cosine decay reaching `lr_min` at `total_steps`.
pub fn lr_at(step: usize, cfg: &TrainConfig) -> f64 {
    let warm = cfg.warmup_steps();
    let total = cfg.total_steps;
    if step <= warm {
        return if warm == 0 { cfg.lr_peak } else { cfg.lr_peak * step as f64 / warm as f64 };
    }
    if step >= total {
        return cfg.lr_min();
    }
    let progress = (step - warm) as f64 / (total - warm) as f64;
    cfg.lr_min() + (cfg.lr_peak - cfg.lr_min()) * 0.5 * (1.0 + (PI * progress).cos())
}

/// Draws for one augmented sample; `None` = that augmentation is off.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Augmentation {
    pub phase: Option<f64>,
    pub amplitude: Option<f64>,
    pub snr_db: Option<f64>,
}

pub fn sample_augmentation(rng: &mut Rng, cfg: &AugmentConfig) -> Augmentation {
    if !cfg.enabled {
        return Augmentation::default();
    }
    // Always consume the same number of draws so streams stay aligned.
    let (u1, phi): (f64, f64) = (rng.random(), rng.random_range(0.0..2.0 * PI));
    let (u2, amp): (f64, f64) = (rng.random(), draw(rng, cfg.amplitude_range));
    let (u3, snr): (f64, f64) = (rng.random(), draw(rng, cfg.snr_db_range));
    Augmentation {
        phase: (u1 < cfg.phase_prob).then_some(phi),
        amplitude: (u2 < cfg.amplitude_prob).then_some(amp),
        snr_db: (u3 < cfg.noise_prob).then_some(snr),
    }
}

fn draw(rng: &mut Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Global phase rotation and amplitude scaling.
pub fn apply_gain(seq: &AdSequence, aug: &Augmentation) -> AdSequence {
    let mut g = C64::new(1.0, 0.0);
    if let Some(phi) = aug.phase {
        g *= C64::from_polar(1.0, phi);
    }
    if let Some(a) = aug.amplitude {
        g *= a;
    }
    let mut out = seq.clone();
    if g != C64::new(1.0, 0.0) {
        for f in &mut out.frames {
            f.data.iter_mut().for_each(|z| *z *= g);
        }
    }
    out
}

/// Complex AWGN at `snr_db` below the sequence's mean entry power.
pub fn add_noise(seq: &AdSequence, snr_db: f64, rng: &mut Rng) -> AdSequence {
    let sigma = (seq.mean_power() / 10f64.powf(snr_db / 10.0) / 2.0).sqrt();
    let mut out = seq.clone();
    for f in &mut out.frames {
        for z in &mut f.data {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            *z += C64::new(sigma * re, sigma * im);
        }
    }
    out
}

/// Augmented encoder input and the matching clean target: gain changes
/// apply to both, noise only to the input.
pub fn augment_pair(seq: &AdSequence, rng: &mut Rng, cfg: &AugmentConfig) -> (AdSequence, AdSequence) {
    let aug = sample_augmentation(rng, cfg);
    let target = apply_gain(seq, &aug);
    let input = match aug.snr_db {
        Some(snr) => add_noise(&target, snr, rng),
        None => target.clone(),
    };
    (input, target)
}

/// All enabled augmentations applied to one sequence.
pub fn augment(seq: &AdSequence, rng: &mut Rng, cfg: &AugmentConfig) -> AdSequence {
    augment_pair(seq, rng, cfg).0
}

/// AdamW first/second moments.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

/// Clip `grads` in place to global norm `max_norm`; returns the norm
/// before clipping.
pub fn clip_global_norm(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = grads.norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

/// One AdamW update over the parameter ranges in `trainable` (all
/// parameters when empty). Weight decay is decoupled and applies to
/// weight matrices only. Returns the pre-clip gradient norm.
pub fn optimizer_step(
    state: &mut ModelState,
    grads: &Gradients,
    adam: &mut AdamState,
    cfg: &TrainConfig,
    lr: f64,
    trainable: &[Range<usize>],
) -> f64 {
    let mut g = grads.clone();
    let norm = clip_global_norm(&mut g, cfg.grad_clip);
    adam.step += 1;
    let t = adam.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let decay = state.layout.decay_mask();
    let all = [0..state.params.len()];
    let ranges = if trainable.is_empty() { &all[..] } else { trainable };
    for r in ranges {
        for i in r.clone() {
            let gi = g.data[i];
            adam.m[i] = cfg.beta1 * adam.m[i] + (1.0 - cfg.beta1) * gi;
            adam.v[i] = cfg.beta2 * adam.v[i] + (1.0 - cfg.beta2) * gi * gi;
            let mhat = adam.m[i] / bc1;
            let vhat = adam.v[i] / bc2;
            let p = &mut state.params[i];
            if decay[i] {
                *p -= lr * cfg.weight_decay * *p;
            }
            *p -= lr * mhat / (vhat.sqrt() + cfg.adam_eps);
        }
    }
    norm
}

#[cfg(test)]
mod tests;
