use rand::seq::SliceRandom;
use rand::Rng as _;

use super::PredictionSample;
use crate::attention::AttentionMode;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::masking::GridDims;
use crate::model::{head_gradients, prediction_features, prediction_gradients, AttentionContext, FinetuneMode, ModelState};
use crate::rng::substream;
use crate::train::{lr_at, optimizer_step, AdamState, TrainConfig};

#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    pub state: ModelState,
    pub mode: FinetuneMode,
    pub fraction: f64,
    /// Training pairs actually used.
    pub n_train: usize,
    /// Batch loss per step.
    pub losses: Vec<f64>,
}

/// Causal attention context for `dims` (past frames only).
pub fn predictor_context(dims: GridDims, cfg: &Config) -> Result<AttentionContext> {
    AttentionContext::new(dims, &cfg.attention, AttentionMode::Causal, &cfg.model)
}

/// Fine-tune a copy of `base` for one-step prediction on a `fraction` of
/// `train`.
///
/// Fraction 0 fits only the head on a small calibration split with the
/// backbone frozen, whatever `mode` says. The subset is a prefix of a
/// seeded permutation, so smaller fractions are nested in larger ones.
pub fn finetune_predictor(
    base: &ModelState,
    train: &[PredictionSample],
    fraction: f64,
    mode: FinetuneMode,
    cfg: &Config,
) -> Result<FinetuneOutcome> {
    let ec = &cfg.eval;
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid(format!("fraction {fraction} outside [0, 1]")));
    }
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut substream(ec.seed, "finetune-subset", 0));
    let (n_sub, mode) = if fraction == 0.0 {
        (ec.calibration_size.min(train.len()), FinetuneMode::Frozen)
    } else {
        ((fraction * train.len() as f64).ceil() as usize, mode)
    };
    if n_sub == 0 {
        return Err(Error::invalid(format!("fraction {fraction} selects no training samples")));
    }
    let subset: Vec<&PredictionSample> = order[..n_sub].iter().map(|&i| &train[i]).collect();
    let dims = subset[0].example.dims;
    if subset.iter().any(|s| s.example.dims != dims) {
        return Err(Error::shape("prediction samples differ in shape"));
    }
    let ctx = predictor_context(dims, cfg)?;

    let tc = TrainConfig {
        lr_peak: ec.finetune_lr,
        total_steps: ec.finetune_steps,
        batch_size: ec.batch_size,
        augment: Default::default(),
        ..cfg.train.clone()
    };
    let mut state = base.clone();
    let mut adam = AdamState::new(state.params.len());
    let mut rng = substream(ec.seed, "finetune-batch", (fraction * 1e6) as u64);
    let layout = state.layout.clone();
    let trainable = match mode {
        FinetuneMode::Frozen => vec![layout.pred_head_range()],
        FinetuneMode::Full => vec![layout.backbone_range(), layout.pred_head_range()],
    };
    let features: Vec<Vec<f64>> = if mode == FinetuneMode::Frozen {
        subset
            .iter()
            .map(|s| prediction_features(&state, &s.example, &ctx))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };

    let mut losses = Vec::with_capacity(tc.total_steps);
    for step in 0..tc.total_steps {
        let picks: Vec<usize> = (0..tc.batch_size).map(|_| rng.random_range(0..n_sub)).collect();
        let (loss, grads) = match mode {
            FinetuneMode::Frozen => {
                let batch: Vec<(&[f64], &[f64])> = picks
                    .iter()
                    .map(|&i| (features[i].as_slice(), subset[i].example.target.as_slice()))
                    .collect();
                head_gradients(&state, &batch, ec.loss)?
            }
            FinetuneMode::Full => {
                let batch: Vec<_> = picks.iter().map(|&i| subset[i].example.clone()).collect();
                prediction_gradients(&state, &batch, &ctx, ec.loss, mode)?
            }
        };
        optimizer_step(&mut state, &grads, &mut adam, &tc, lr_at(step + 1, &tc), &trainable);
        losses.push(loss);
    }
    Ok(FinetuneOutcome {
        state,
        mode,
        fraction,
        n_train: n_sub,
        losses,
    })
}
