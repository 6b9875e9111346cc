use serde::{Deserialize, Serialize};

use super::backbone::{
    backbone_backward, backbone_forward, backbone_forward_traced, embed, embed_backward, head_backward, head_forward,
    head_rows, AttentionContext, Head,
};
use super::{nmse_loss, Gradients, ModelState, TokenGrid};
use crate::error::{Error, Result};
use crate::masking::GridDims;
use crate::ops::linear_backward;

/// One masked-reconstruction sample in patch form (`N × P` reals).
#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructionExample {
    pub dims: GridDims,
    /// Encoder input (possibly noisy); masked rows are ignored.
    pub input: Vec<f64>,
    pub target: Vec<f64>,
    /// `true` = masked, one flag per token.
    pub mask: Vec<bool>,
}

/// Past frames in patch form and the next frame to predict.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionExample {
    pub dims: GridDims,
    pub input: Vec<f64>,
    /// `H' W' × P` reals.
    pub target: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictionLoss {
    /// `‖err‖² / (‖truth‖² + ε)` over the whole frame.
    Frame,
    /// Per-token NMSE averaged over every token of the frame.
    Token,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinetuneMode {
    /// Backbone frozen; only the prediction head trains.
    Frozen,
    /// Backbone and prediction head train together.
    Full,
}

fn check_example(dims: GridDims, p: usize, input: &[f64], target: &[f64], target_tokens: usize) -> Result<()> {
    if input.len() != dims.len() * p || target.len() != target_tokens * p {
        return Err(Error::shape("example buffers do not match their token grid"));
    }
    Ok(())
}

/// Masked-reconstruction loss over a batch (mean of per-sample NMSE on
/// the masked tokens) and its exact gradient.
///
/// Routing selections are treated as constants, so gradients only flow
/// through retained attention edges.
pub fn compute_gradients(
    state: &ModelState,
    batch: &[ReconstructionExample],
    ctx: &AttentionContext,
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let p = state.layout.patch_len;
    let eps = state.cfg.nmse_eps;
    let inv_b = 1.0 / batch.len() as f64;
    let mut grads = Gradients::zeros(&state.layout);
    let mut total = 0.0;
    for (b, ex) in batch.iter().enumerate() {
        check_example(ex.dims, p, &ex.input, &ex.target, ex.dims.len())?;
        if ex.mask.len() != ex.dims.len() {
            return Err(Error::shape("mask length differs from token count"));
        }
        let masked: Vec<usize> = (0..ex.mask.len()).filter(|&i| ex.mask[i]).collect();
        let grid = embed(state, ex.dims, &ex.input, Some(&ex.mask));
        let (out, traces) = backbone_forward_traced(&grid, state, ctx)?;
        let pred = head_forward(state, &out, Head::Reconstruction);
        let loss = nmse_loss(&pred, &ex.target, p, &masked, eps)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite { batch: b });
        }
        total += loss * inv_b;

        let mut dpred = vec![0.0; pred.len()];
        let scale = inv_b / masked.len() as f64;
        for &i in &masked {
            let r = i * p..(i + 1) * p;
            let en: f64 = ex.target[r.clone()].iter().map(|x| x * x).sum();
            let c = 2.0 * scale / (en + eps);
            for k in r {
                dpred[k] = c * (pred[k] - ex.target[k]);
            }
        }
        let dz = head_backward(state, &out, &dpred, Head::Reconstruction, &mut grads);
        let dz0 = backbone_backward(state, &traces, dz, ctx, &mut grads);
        embed_backward(state, ex.dims, &ex.input, Some(&ex.mask), &dz0, &mut grads);
    }
    Ok((total, grads))
}

/// Loss value and gradient w.r.t. the predicted frame.
pub(crate) fn prediction_loss(pred: &[f64], target: &[f64], p: usize, loss: PredictionLoss, eps: f64) -> (f64, Vec<f64>) {
    match loss {
        PredictionLoss::Frame => {
            let en: f64 = target.iter().map(|x| x * x).sum();
            let err: f64 = pred.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum();
            let denom = en + eps;
            let d = pred.iter().zip(target).map(|(a, b)| 2.0 * (a - b) / denom).collect();
            (err / denom, d)
        }
        PredictionLoss::Token => {
            let n = pred.len() / p;
            let all: Vec<usize> = (0..n).collect();
            let l = nmse_loss(pred, target, p, &all, eps).unwrap_or(f64::NAN);
            let mut d = vec![0.0; pred.len()];
            for i in 0..n {
                let r = i * p..(i + 1) * p;
                let en: f64 = target[r.clone()].iter().map(|x| x * x).sum();
                let c = 2.0 / ((en + eps) * n as f64);
                for k in r {
                    d[k] = c * (pred[k] - target[k]);
                }
            }
            (l, d)
        }
    }
}

/// Backbone features of the last input frame (`H' W' × D`), the only rows
/// the prediction head reads.
pub fn prediction_features(state: &ModelState, ex: &PredictionExample, ctx: &AttentionContext) -> Result<Vec<f64>> {
    let grid = embed(state, ex.dims, &ex.input, None);
    let (out, _) = backbone_forward(&grid, state, ctx)?;
    let d = state.layout.d;
    let rows = head_rows(ex.dims, Head::Prediction);
    Ok(out.data[rows.start * d..rows.end * d].to_vec())
}

/// Gradient of the prediction loss w.r.t. the head only, from cached
/// features (frozen-backbone fine-tuning).
pub fn head_gradients(
    state: &ModelState,
    batch: &[(&[f64], &[f64])],
    loss: PredictionLoss,
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let l = &state.layout;
    let (d, p) = (l.d, l.patch_len);
    let inv_b = 1.0 / batch.len() as f64;
    let mut grads = Gradients::zeros(l);
    let mut total = 0.0;
    for (b, (feat, target)) in batch.iter().enumerate() {
        let rows = feat.len() / d;
        let pred = crate::ops::linear(feat, rows, d, state.slice(l.pred_w, p * d), p, Some(state.slice(l.pred_b, p)));
        let (v, mut dpred) = prediction_loss(&pred, target, p, loss, state.cfg.nmse_eps);
        if !v.is_finite() {
            return Err(Error::NonFinite { batch: b });
        }
        total += v * inv_b;
        dpred.iter_mut().for_each(|x| *x *= inv_b);
        let (dw, rest) = grads.data[l.pred_w..].split_at_mut(p * d);
        let db = &mut rest[..p];
        linear_backward(feat, &dpred, rows, d, state.slice(l.pred_w, p * d), p, dw, Some(db));
    }
    Ok((total, grads))
}

/// One-step prediction loss over a batch and its gradient.
///
/// In [`FinetuneMode::Frozen`] only the prediction head receives gradient.
pub fn prediction_gradients(
    state: &ModelState,
    batch: &[PredictionExample],
    ctx: &AttentionContext,
    loss: PredictionLoss,
    mode: FinetuneMode,
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let p = state.layout.patch_len;
    let inv_b = 1.0 / batch.len() as f64;
    let mut grads = Gradients::zeros(&state.layout);
    let mut total = 0.0;
    for (b, ex) in batch.iter().enumerate() {
        check_example(ex.dims, p, &ex.input, &ex.target, ex.dims.per_frame())?;
        let grid: TokenGrid = embed(state, ex.dims, &ex.input, None);
        let (out, traces) = backbone_forward_traced(&grid, state, ctx)?;
        let pred = head_forward(state, &out, Head::Prediction);
        let (v, mut dpred) = prediction_loss(&pred, &ex.target, p, loss, state.cfg.nmse_eps);
        if !v.is_finite() {
            return Err(Error::NonFinite { batch: b });
        }
        total += v * inv_b;
        dpred.iter_mut().for_each(|x| *x *= inv_b);
        let dz = head_backward(state, &out, &dpred, Head::Prediction, &mut grads);
        if mode == FinetuneMode::Full {
            let dz0 = backbone_backward(state, &traces, dz, ctx, &mut grads);
            embed_backward(state, ex.dims, &ex.input, None, &dz0, &mut grads);
        }
    }
    Ok((total, grads))
}
