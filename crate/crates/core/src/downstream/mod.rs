//! Channel prediction: causal fine-tuning, the sample-and-hold baseline,
//! velocity-binned NMSE reports and the attention cost benchmark.

mod bench;
mod eval;
mod finetune;

use serde::{Deserialize, Serialize};

pub use bench::{bench_attention, check_complexity, BenchRow};
pub use eval::{evaluate, nmse_db, EvalRecord, EvalReport, Method};
pub use finetune::{finetune_predictor, predictor_context, FinetuneOutcome};

use crate::adt::AdSequence;
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::model::{patchify, FinetuneMode, PredictionExample, PredictionLoss};

/// Half-open speed intervals `[e_i, e_{i+1})` in m/s.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VelocityBins {
    pub edges: Vec<f64>,
}

impl Default for VelocityBins {
    fn default() -> Self {
        VelocityBins {
            edges: vec![0.0, 10.0, 20.0, 30.0],
        }
    }
}

impl VelocityBins {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid("velocity bin edges must be strictly increasing, at least two"));
        }
        Ok(VelocityBins { edges })
    }

    pub fn len(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bin_of(&self, speed: f64) -> Option<usize> {
        (0..self.len()).find(|&b| self.edges[b] <= speed && speed < self.edges[b + 1])
    }

    pub fn label(&self, b: usize) -> String {
        format!("[{},{})", self.edges[b], self.edges[b + 1])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Observed frames before the predicted one.
    pub past_frames: usize,
    /// Fine-tuning subset sizes as fractions of the training split.
    pub fractions: Vec<f64>,
    pub modes: Vec<FinetuneMode>,
    pub loss: PredictionLoss,
    pub finetune_steps: usize,
    pub finetune_lr: f64,
    pub batch_size: usize,
    /// Samples used to fit the head in the "0%" column.
    pub calibration_size: usize,
    pub seed: u64,
    pub velocity_edges: Vec<f64>,
    /// Reported NMSE is clamped below at this value.
    pub nmse_floor_db: f64,
    /// Frames per sequence for the attention benchmark.
    pub bench_frames: Vec<usize>,
    /// Largest sequence timed with dense attention; above it the dense
    /// count is analytic only.
    pub bench_dense_max_tokens: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            past_frames: 10,
            fractions: vec![0.0, 0.01, 0.02, 0.10, 0.50, 1.0],
            modes: vec![FinetuneMode::Frozen, FinetuneMode::Full],
            loss: PredictionLoss::Frame,
            finetune_steps: 600,
            finetune_lr: 2e-3,
            batch_size: 8,
            calibration_size: 16,
            seed: 0,
            velocity_edges: VelocityBins::default().edges,
            nmse_floor_db: -100.0,
            bench_frames: vec![1, 5, 20],
            bench_dense_max_tokens: 6000,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.past_frames == 0 {
            return Err(Error::invalid("past_frames must be >= 1"));
        }
        if self.fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::invalid("fine-tuning fractions must lie in [0, 1]"));
        }
        if self.batch_size == 0 || self.calibration_size == 0 {
            return Err(Error::invalid("batch_size and calibration_size must be >= 1"));
        }
        VelocityBins::new(self.velocity_edges.clone())?;
        Ok(())
    }

    pub fn bins(&self) -> VelocityBins {
        VelocityBins {
            edges: self.velocity_edges.clone(),
        }
    }
}

/// Repeat the last observed frame.
pub fn sample_and_hold(past: &[Frame]) -> Result<Frame> {
    past.last()
        .cloned()
        .ok_or_else(|| Error::invalid("sample-and-hold needs at least one past frame"))
}

/// One prediction pair, normalized by the RMS of its past frames.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionSample {
    pub example: PredictionExample,
    /// Normalized past frames (for frame-domain predictors).
    pub past: Vec<Frame>,
    pub rms: f64,
    pub speed: f64,
}

/// Split each sequence into `past_frames` observed frames and the next one.
pub fn prediction_samples(seqs: &[AdSequence], past_frames: usize, patch: [usize; 2]) -> Result<Vec<PredictionSample>> {
    seqs.iter()
        .map(|s| {
            if s.frames.len() <= past_frames {
                return Err(Error::invalid(format!(
                    "sequence has {} frames, need at least {}",
                    s.frames.len(),
                    past_frames + 1
                )));
            }
            let past = &s.frames[..past_frames];
            let power: f64 = past.iter().map(Frame::energy).sum::<f64>() / (past_frames * past[0].data.len()) as f64;
            if !(power > 0.0) || !power.is_finite() {
                return Err(Error::DegenerateSample);
            }
            let rms = power.sqrt();
            let norm = |f: &Frame| {
                let mut g = f.clone();
                g.scale(1.0 / rms);
                g
            };
            let past: Vec<Frame> = past.iter().map(norm).collect();
            let (dims, input) = patchify(&past, patch)?;
            let (_, target) = patchify(&[norm(&s.frames[past_frames])], patch)?;
            Ok(PredictionSample {
                example: PredictionExample { dims, input, target },
                past,
                rms,
                speed: s.meta.speed(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests;
