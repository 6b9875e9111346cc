//! Token embedding, pre-norm SwiGLU backbone, output heads and the NMSE
//! loss, with reverse-mode gradients written out by hand.
//!
//! All parameters live in one flat `Vec<f64>`; [`ParamLayout`] names the
//! slices. Gradients share that layout, which keeps the optimizer and the
//! checkpoint format trivial.

mod backbone;
mod grad;
mod layout;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use backbone::{backbone_forward, AttentionContext};
pub use grad::{
    compute_gradients, head_gradients, prediction_features, prediction_gradients, FinetuneMode, PredictionExample, PredictionLoss, ReconstructionExample,
};
pub use layout::{BlockLayout, ParamLayout, ParamSpec};

use crate::adt::AdSequence;
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::masking::{GridDims, MaskGrid};
use crate::rng::Rng;
use crate::C64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Number of blocks `E`.
    pub depth: usize,
    pub heads: usize,
    /// Embedding width `D`.
    pub embed_dim: usize,
    /// SwiGLU expansion ratio `r`.
    pub mlp_ratio: usize,
    /// Patch size `(P_h, P_w)`.
    pub patch: [usize; 2],
    pub nmse_eps: f64,
    /// Standard deviation of the CLS and mask embeddings at init.
    pub embed_init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            depth: 12,
            heads: 8,
            embed_dim: 32,
            mlp_ratio: 4,
            patch: [1, 1],
            nmse_eps: 1e-8,
            embed_init_std: 0.02,
        }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads.max(1)
    }

    /// Real values per token: re/im of every entry in a patch.
    pub fn patch_len(&self) -> usize {
        2 * self.patch[0] * self.patch[1]
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return Err(Error::invalid(format!(
                "embed_dim {} must be a positive multiple of heads {}",
                self.embed_dim, self.heads
            )));
        }
        if !self.head_dim().is_multiple_of(2) {
            return Err(Error::invalid(format!("head dimension {} must be even", self.head_dim())));
        }
        if self.mlp_ratio == 0 || self.patch[0] == 0 || self.patch[1] == 0 {
            return Err(Error::invalid("mlp_ratio and patch sizes must be positive"));
        }
        if !(self.nmse_eps >= 0.0) {
            return Err(Error::invalid("nmse_eps must be >= 0"));
        }
        Ok(())
    }

    /// Token grid for frames of `h × w` entries.
    pub fn token_dims(&self, t: usize, h: usize, w: usize) -> Result<GridDims> {
        let [ph, pw] = self.patch;
        if !h.is_multiple_of(ph) || !w.is_multiple_of(pw) {
            return Err(Error::shape(format!("{h}×{w} frames do not tile into {ph}×{pw} patches")));
        }
        Ok(GridDims::new(t, h / ph, w / pw))
    }
}

/// Model parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub cfg: ModelConfig,
    pub layout: ParamLayout,
    pub params: Vec<f64>,
}

/// Gradient buffer with the same layout as [`ModelState::params`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub data: Vec<f64>,
}

impl Gradients {
    pub fn zeros(layout: &ParamLayout) -> Self {
        Gradients {
            data: vec![0.0; layout.len],
        }
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|g| *g *= s);
    }

    pub fn add(&mut self, other: &Gradients) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

impl ModelState {
    /// Fresh parameters: Glorot-normal matrices, unit LN scales, zero
    /// biases, small CLS/mask embeddings.
    pub fn init(cfg: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let layout = ParamLayout::new(cfg);
        let mut params = vec![0.0; layout.len];
        for spec in &layout.specs {
            let slice = &mut params[spec.offset..spec.offset + spec.len()];
            match spec.init {
                layout::Init::Glorot => {
                    let std = (2.0 / (spec.rows + spec.cols) as f64).sqrt();
                    let n = Normal::new(0.0, std).map_err(|e| Error::invalid(e.to_string()))?;
                    slice.iter_mut().for_each(|p| *p = n.sample(rng));
                }
                layout::Init::Embedding => {
                    let n = Normal::new(0.0, cfg.embed_init_std).map_err(|e| Error::invalid(e.to_string()))?;
                    slice.iter_mut().for_each(|p| *p = n.sample(rng));
                }
                layout::Init::One => slice.fill(1.0),
                layout::Init::Zero => slice.fill(0.0),
            }
        }
        Ok(ModelState {
            cfg: cfg.clone(),
            layout,
            params,
        })
    }

    /// Wrap an existing parameter vector, checking its length.
    pub fn from_params(cfg: &ModelConfig, params: Vec<f64>) -> Result<Self> {
        cfg.validate()?;
        let layout = ParamLayout::new(cfg);
        if params.len() != layout.len {
            return Err(Error::shape(format!(
                "expected {} parameters, found {}",
                layout.len,
                params.len()
            )));
        }
        Ok(ModelState {
            cfg: cfg.clone(),
            layout,
            params,
        })
    }

    pub fn slice(&self, offset: usize, len: usize) -> &[f64] {
        &self.params[offset..offset + len]
    }

    pub fn spec(&self, name: &str) -> Option<&ParamSpec> {
        self.layout.specs.iter().find(|s| s.name == name)
    }

    pub fn param(&self, name: &str) -> Option<&[f64]> {
        self.spec(name).map(|s| &self.params[s.offset..s.offset + s.len()])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let s = self.spec(name)?.clone();
        Some(&mut self.params[s.offset..s.offset + s.len()])
    }

    /// SHA-256 over the little-endian parameter bytes.
    pub fn hash(&self) -> String {
        let bytes: Vec<u8> = self.params.iter().flat_map(|p| p.to_le_bytes()).collect();
        crate::io::sha256_hex(&bytes)
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}

/// Embedded tokens `S × D`, CLS first.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenGrid {
    pub dims: GridDims,
    pub patch: [usize; 2],
    pub d_model: usize,
    pub data: Vec<f64>,
}

impl TokenGrid {
    pub fn len(&self) -> usize {
        self.dims.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn token(&self, i: usize) -> &[f64] {
        &self.data[i * self.d_model..(i + 1) * self.d_model]
    }
}

/// Split complex entries into real patch vectors, one row per token in
/// `(t, h', w')` order. Within a patch: row-major entries, re then im.
pub fn patchify(frames: &[Frame], patch: [usize; 2]) -> Result<(GridDims, Vec<f64>)> {
    let first = frames.first().ok_or_else(|| Error::shape("no frames"))?;
    let [ph, pw] = patch;
    if ph == 0 || pw == 0 || first.rows % ph != 0 || first.cols % pw != 0 {
        return Err(Error::shape(format!(
            "{}×{} frames do not tile into {ph}×{pw} patches",
            first.rows, first.cols
        )));
    }
    if frames.iter().any(|f| f.rows != first.rows || f.cols != first.cols) {
        return Err(Error::shape("frames differ in shape"));
    }
    let dims = GridDims::new(frames.len(), first.rows / ph, first.cols / pw);
    let mut out = Vec::with_capacity(dims.len() * 2 * ph * pw);
    for f in frames {
        for hb in 0..dims.h {
            for wb in 0..dims.w {
                for dh in 0..ph {
                    for dw in 0..pw {
                        let z = f.get(hb * ph + dh, wb * pw + dw);
                        out.push(z.re);
                        out.push(z.im);
                    }
                }
            }
        }
    }
    Ok((dims, out))
}

/// Inverse of [`patchify`].
pub fn unpatchify(dims: GridDims, patch: [usize; 2], data: &[f64]) -> Result<Vec<Frame>> {
    let [ph, pw] = patch;
    let p = 2 * ph * pw;
    if data.len() != dims.len() * p {
        return Err(Error::shape(format!("{} values for {} tokens of {p}", data.len(), dims.len())));
    }
    let mut frames = Vec::with_capacity(dims.t);
    for t in 0..dims.t {
        let mut f = Frame::zeros(dims.h * ph, dims.w * pw);
        for hb in 0..dims.h {
            for wb in 0..dims.w {
                let base = dims.index(t, hb, wb) * p;
                for dh in 0..ph {
                    for dw in 0..pw {
                        let k = base + 2 * (dh * pw + dw);
                        f.set(hb * ph + dh, wb * pw + dw, C64::new(data[k], data[k + 1]));
                    }
                }
            }
        }
        frames.push(f);
    }
    Ok(frames)
}

/// Patch, project to `D` and prepend CLS.
pub fn tokenize(seq: &AdSequence, state: &ModelState) -> Result<TokenGrid> {
    let (dims, patches) = patchify(&seq.frames, state.cfg.patch)?;
    Ok(backbone::embed(state, dims, &patches, None))
}

/// Replace masked content tokens by the learned mask vector.
pub fn apply_mask_embedding(grid: &TokenGrid, mask: &MaskGrid, state: &ModelState) -> Result<TokenGrid> {
    if mask.dims != grid.dims {
        return Err(Error::shape(format!("mask {:?} vs tokens {:?}", mask.dims, grid.dims)));
    }
    let d = grid.d_model;
    let emb = state.slice(state.layout.mask, d);
    let mut out = grid.clone();
    for (n, &m) in mask.bits.iter().enumerate() {
        if m {
            out.data[(n + 1) * d..(n + 2) * d].copy_from_slice(emb);
        }
    }
    Ok(out)
}

/// Per-token linear map back to angle-delay frames (CLS dropped).
pub fn reconstruction_head(grid: &TokenGrid, state: &ModelState) -> Result<Vec<Frame>> {
    let out = backbone::head_forward(state, grid, backbone::Head::Reconstruction);
    unpatchify(grid.dims, grid.patch, &out)
}

/// Next-frame prediction from the tokens of the last frame.
pub fn prediction_head(grid: &TokenGrid, state: &ModelState) -> Result<Frame> {
    let out = backbone::head_forward(state, grid, backbone::Head::Prediction);
    let dims = GridDims::new(1, grid.dims.h, grid.dims.w);
    Ok(unpatchify(dims, grid.patch, &out)?.remove(0))
}

/// Mean over the selected tokens of `‖x − x̂‖² / (‖x‖² + ε)`.
///
/// `pred` and `target` are token rows of `token_len` reals.
pub fn nmse_loss(pred: &[f64], target: &[f64], token_len: usize, tokens: &[usize], eps: f64) -> Result<f64> {
    if pred.len() != target.len() || token_len == 0 || !pred.len().is_multiple_of(token_len) {
        return Err(Error::shape("prediction and target differ in shape"));
    }
    if tokens.is_empty() {
        return Err(Error::invalid("NMSE over an empty token set"));
    }
    let mut acc = 0.0;
    for &i in tokens {
        let r = i * token_len..(i + 1) * token_len;
        let (x, y) = (&target[r.clone()], &pred[r]);
        let err: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        let en: f64 = x.iter().map(|a| a * a).sum();
        acc += err / (en + eps);
    }
    Ok(acc / tokens.len() as f64)
}

/// Convenience: tokenize, mask, run the backbone and the reconstruction
/// head in one go (inference only).
pub fn reconstruct(
    state: &ModelState,
    seq: &AdSequence,
    mask: Option<&MaskGrid>,
    ctx: &AttentionContext,
) -> Result<Vec<Frame>> {
    let mut grid = tokenize(seq, state)?;
    if let Some(m) = mask {
        grid = apply_mask_embedding(&grid, m, state)?;
    }
    let (out, _) = backbone_forward(&grid, state, ctx)?;
    reconstruction_head(&out, state)
}

/// Inference path of the channel predictor: past frames → next frame.
pub fn predict_next(state: &ModelState, past: &[Frame], ctx: &AttentionContext) -> Result<Frame> {
    let (dims, patches) = patchify(past, state.cfg.patch)?;
    let grid = backbone::embed(state, dims, &patches, None);
    let (out, _) = backbone_forward(&grid, state, ctx)?;
    prediction_head(&out, state)
}
