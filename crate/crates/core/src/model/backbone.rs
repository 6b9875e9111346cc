use super::{BlockLayout, Gradients, ModelConfig, ModelState, TokenGrid};
use crate::attention::ssta::{attend, attend_backward, check_dims, rotate_heads, rotate_heads_back, AttnCache};
use crate::attention::{AttentionConfig, AttentionMode, AttentionStats, NeighborTable, Rope, RopeTable, RoutingConfig};
use crate::error::{Error, Result};
use crate::masking::GridDims;
use crate::ops::{linear, linear_backward};

const LN_EPS: f64 = 1e-5;

/// Everything the attention layers need besides parameters: the neighbor
/// table for one token grid, routing settings and RoPE tables.
#[derive(Clone, Debug)]
pub struct AttentionContext {
    pub table: NeighborTable,
    pub routing: RoutingConfig,
    pub rope: RopeTable,
    pub heads: usize,
}

impl AttentionContext {
    pub fn new(dims: GridDims, attn: &AttentionConfig, mode: AttentionMode, model: &ModelConfig) -> Result<Self> {
        let params = attn.neighbor_params(mode);
        let table = NeighborTable::build(dims, &params, mode, attn.cls_hub)?;
        Self::from_table(table, attn.routing.clone(), model, attn.rope_base)
    }

    pub fn from_table(table: NeighborTable, routing: RoutingConfig, model: &ModelConfig, rope_base: f64) -> Result<Self> {
        if routing.enabled {
            routing.validate()?;
        }
        let rope = Rope::new(model.head_dim(), rope_base)?.table(table.len());
        Ok(AttentionContext {
            table,
            routing,
            rope,
            heads: model.heads,
        })
    }

    pub fn dims(&self) -> GridDims {
        self.table.dims
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Head {
    Reconstruction,
    Prediction,
}

/// Token embedding: CLS, then projected patches or the mask vector.
pub(crate) fn embed(state: &ModelState, dims: GridDims, patches: &[f64], mask: Option<&[bool]>) -> TokenGrid {
    let l = &state.layout;
    let (d, p) = (l.d, l.patch_len);
    let proj = linear(
        patches,
        dims.len(),
        p,
        state.slice(l.patch_w, d * p),
        d,
        Some(state.slice(l.patch_b, d)),
    );
    let mut data = Vec::with_capacity((dims.len() + 1) * d);
    data.extend_from_slice(state.slice(l.cls, d));
    data.extend_from_slice(&proj);
    if let Some(mask) = mask {
        let emb = state.slice(l.mask, d);
        for (n, &m) in mask.iter().enumerate() {
            if m {
                data[(n + 1) * d..(n + 2) * d].copy_from_slice(emb);
            }
        }
    }
    TokenGrid {
        dims,
        patch: state.cfg.patch,
        d_model: d,
        data,
    }
}

pub(crate) fn embed_backward(
    state: &ModelState,
    dims: GridDims,
    patches: &[f64],
    mask: Option<&[bool]>,
    dz: &[f64],
    grads: &mut Gradients,
) {
    let l = &state.layout;
    let (d, p) = (l.d, l.patch_len);
    for (g, x) in grads.data[l.cls..l.cls + d].iter_mut().zip(&dz[..d]) {
        *g += x;
    }
    let mut dproj = dz[d..].to_vec();
    if let Some(mask) = mask {
        for (n, &m) in mask.iter().enumerate() {
            if m {
                let row = &mut dproj[n * d..(n + 1) * d];
                for (g, x) in grads.data[l.mask..l.mask + d].iter_mut().zip(row.iter()) {
                    *g += x;
                }
                row.fill(0.0);
            }
        }
    }
    let (dw, rest) = grads.data[l.patch_w..].split_at_mut(d * p);
    let db = &mut rest[l.patch_b - l.patch_w - d * p..][..d];
    linear_backward(patches, &dproj, dims.len(), p, state.slice(l.patch_w, d * p), d, dw, Some(db));
}

struct LnOut {
    y: Vec<f64>,
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

fn layer_norm(x: &[f64], d: usize, g: &[f64], b: &[f64]) -> LnOut {
    let rows = x.len() / d;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; rows];
    for r in 0..rows {
        let xs = &x[r * d..(r + 1) * d];
        let mean = xs.iter().sum::<f64>() / d as f64;
        let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = rs;
        for c in 0..d {
            let h = (xs[c] - mean) * rs;
            xhat[r * d + c] = h;
            y[r * d + c] = g[c] * h + b[c];
        }
    }
    LnOut { y, xhat, rstd }
}

fn layer_norm_backward(dy: &[f64], xhat: &[f64], rstd: &[f64], d: usize, g: &[f64], dg: &mut [f64], db: &mut [f64]) -> Vec<f64> {
    let mut dx = vec![0.0; dy.len()];
    let mut dxhat = vec![0.0; d];
    for (r, &rs) in rstd.iter().enumerate() {
        let dys = &dy[r * d..(r + 1) * d];
        let xh = &xhat[r * d..(r + 1) * d];
        let (mut m1, mut m2) = (0.0, 0.0);
        for c in 0..d {
            dg[c] += dys[c] * xh[c];
            db[c] += dys[c];
            dxhat[c] = dys[c] * g[c];
            m1 += dxhat[c];
            m2 += dxhat[c] * xh[c];
        }
        m1 /= d as f64;
        m2 /= d as f64;
        for c in 0..d {
            dx[r * d + c] = rs * (dxhat[c] - m1 - xh[c] * m2);
        }
    }
    dx
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Saved activations of one block.
pub(crate) struct BlockTrace {
    xhat1: Vec<f64>,
    rstd1: Vec<f64>,
    a: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    cat: Vec<f64>,
    attn: AttnCache,
    xhat2: Vec<f64>,
    rstd2: Vec<f64>,
    c: Vec<f64>,
    gate: Vec<f64>,
    up: Vec<f64>,
    hid: Vec<f64>,
}

fn block_forward(
    state: &ModelState,
    bl: &BlockLayout,
    z: &mut [f64],
    ctx: &AttentionContext,
    stats: &mut AttentionStats,
    keep: bool,
) -> Option<BlockTrace> {
    let l = &state.layout;
    let (d, hd) = (l.d, l.hidden);
    let s = z.len() / d;
    let heads = ctx.heads;

    let ln1 = layer_norm(z, d, state.slice(bl.ln1_g, d), state.slice(bl.ln1_b, d));
    let a = ln1.y;
    let mut q = linear(&a, s, d, state.slice(bl.wq, d * d), d, None);
    let mut k = linear(&a, s, d, state.slice(bl.wk, d * d), d, None);
    let v = linear(&a, s, d, state.slice(bl.wv, d * d), d, None);
    rotate_heads(&mut q, s, d, heads, &ctx.rope);
    rotate_heads(&mut k, s, d, heads, &ctx.rope);
    let (cat, attn) = attend(&q, &k, &v, d, heads, &ctx.table, &ctx.routing, stats);
    let o = linear(&cat, s, d, state.slice(bl.wo, d * d), d, None);
    for (zi, oi) in z.iter_mut().zip(&o) {
        *zi += oi;
    }

    let ln2 = layer_norm(z, d, state.slice(bl.ln2_g, d), state.slice(bl.ln2_b, d));
    let c = ln2.y;
    let gate = linear(&c, s, d, state.slice(bl.gate, hd * d), hd, None);
    let up = linear(&c, s, d, state.slice(bl.up, hd * d), hd, None);
    let hid: Vec<f64> = gate.iter().zip(&up).map(|(&g, &u)| g * sigmoid(g) * u).collect();
    let m = linear(&hid, s, hd, state.slice(bl.down, d * hd), d, None);
    for (zi, mi) in z.iter_mut().zip(&m) {
        *zi += mi;
    }

    keep.then_some(BlockTrace {
        xhat1: ln1.xhat,
        rstd1: ln1.rstd,
        a,
        q,
        k,
        v,
        cat,
        attn,
        xhat2: ln2.xhat,
        rstd2: ln2.rstd,
        c,
        gate,
        up,
        hid,
    })
}

fn block_backward(
    state: &ModelState,
    bl: &BlockLayout,
    tr: &BlockTrace,
    dz: &mut [f64],
    ctx: &AttentionContext,
    grads: &mut Gradients,
) {
    let l = &state.layout;
    let (d, hd) = (l.d, l.hidden);
    let s = dz.len() / d;
    let heads = ctx.heads;
    let g = &mut grads.data;

    // MLP branch.
    let dhid = linear_backward(&tr.hid, dz, s, hd, state.slice(bl.down, d * hd), d, &mut g[bl.down..bl.down + d * hd], None);
    let mut dgate = vec![0.0; dhid.len()];
    let mut dup = vec![0.0; dhid.len()];
    for i in 0..dhid.len() {
        let x = tr.gate[i];
        let sg = sigmoid(x);
        dup[i] = dhid[i] * x * sg;
        dgate[i] = dhid[i] * tr.up[i] * sg * (1.0 + x * (1.0 - sg));
    }
    let mut dc = linear_backward(&tr.c, &dgate, s, d, state.slice(bl.gate, hd * d), hd, &mut g[bl.gate..bl.gate + hd * d], None);
    let dc2 = linear_backward(&tr.c, &dup, s, d, state.slice(bl.up, hd * d), hd, &mut g[bl.up..bl.up + hd * d], None);
    for (a, b) in dc.iter_mut().zip(&dc2) {
        *a += b;
    }
    let (dg2, db2) = g[bl.ln2_g..bl.ln2_b + d].split_at_mut(d);
    let dx = layer_norm_backward(&dc, &tr.xhat2, &tr.rstd2, d, state.slice(bl.ln2_g, d), dg2, db2);
    for (a, b) in dz.iter_mut().zip(&dx) {
        *a += b;
    }

    // Attention branch.
    let dcat = linear_backward(&tr.cat, dz, s, d, state.slice(bl.wo, d * d), d, &mut g[bl.wo..bl.wo + d * d], None);
    let (mut dq, mut dk, dv) = attend_backward(&tr.q, &tr.k, &tr.v, &dcat, d, heads, &tr.attn);
    rotate_heads_back(&mut dq, s, d, heads, &ctx.rope);
    rotate_heads_back(&mut dk, s, d, heads, &ctx.rope);
    let mut da = linear_backward(&tr.a, &dq, s, d, state.slice(bl.wq, d * d), d, &mut g[bl.wq..bl.wq + d * d], None);
    for (w, dy) in [(bl.wk, &dk), (bl.wv, &dv)] {
        let part = linear_backward(&tr.a, dy, s, d, state.slice(w, d * d), d, &mut g[w..w + d * d], None);
        for (a, b) in da.iter_mut().zip(&part) {
            *a += b;
        }
    }
    let (dg1, db1) = g[bl.ln1_g..bl.ln1_b + d].split_at_mut(d);
    let dx = layer_norm_backward(&da, &tr.xhat1, &tr.rstd1, d, state.slice(bl.ln1_g, d), dg1, db1);
    for (a, b) in dz.iter_mut().zip(&dx) {
        *a += b;
    }
}

fn check_grid(grid: &TokenGrid, state: &ModelState, ctx: &AttentionContext) -> Result<()> {
    if grid.d_model != state.layout.d || grid.data.len() != grid.len() * grid.d_model {
        return Err(Error::shape("token grid does not match model width"));
    }
    if ctx.table.len() != grid.len() {
        return Err(Error::shape(format!(
            "neighbor table has {} tokens, grid {}",
            ctx.table.len(),
            grid.len()
        )));
    }
    if ctx.heads != state.cfg.heads || ctx.rope.positions() < grid.len() {
        return Err(Error::shape("attention context built for a different model"));
    }
    check_dims(grid.len(), grid.d_model, ctx.heads, &ctx.table)?;
    Ok(())
}

/// Run all `E` blocks.
pub fn backbone_forward(grid: &TokenGrid, state: &ModelState, ctx: &AttentionContext) -> Result<(TokenGrid, AttentionStats)> {
    check_grid(grid, state, ctx)?;
    let mut out = grid.clone();
    let mut stats = AttentionStats {
        heads: ctx.heads,
        ..Default::default()
    };
    for bl in &state.layout.blocks {
        block_forward(state, bl, &mut out.data, ctx, &mut stats, false);
    }
    Ok((out, stats))
}

pub(crate) fn backbone_forward_traced(
    grid: &TokenGrid,
    state: &ModelState,
    ctx: &AttentionContext,
) -> Result<(TokenGrid, Vec<BlockTrace>)> {
    check_grid(grid, state, ctx)?;
    let mut out = grid.clone();
    let mut stats = AttentionStats::default();
    let traces = state
        .layout
        .blocks
        .iter()
        .map(|bl| block_forward(state, bl, &mut out.data, ctx, &mut stats, true).expect("trace kept"))
        .collect();
    Ok((out, traces))
}

/// Pull `dz` (gradient w.r.t. the backbone output) back to the input grid.
pub(crate) fn backbone_backward(
    state: &ModelState,
    traces: &[BlockTrace],
    mut dz: Vec<f64>,
    ctx: &AttentionContext,
    grads: &mut Gradients,
) -> Vec<f64> {
    for (bl, tr) in state.layout.blocks.iter().zip(traces).rev() {
        block_backward(state, bl, tr, &mut dz, ctx, grads);
    }
    dz
}

/// Token rows a head reads: all content tokens or the last frame's.
pub(crate) fn head_rows(grid_dims: GridDims, head: Head) -> std::ops::Range<usize> {
    match head {
        Head::Reconstruction => 1..grid_dims.len() + 1,
        Head::Prediction => {
            let pf = grid_dims.per_frame();
            1 + grid_dims.len() - pf..grid_dims.len() + 1
        }
    }
}

fn head_params(state: &ModelState, head: Head) -> (usize, usize) {
    let l = &state.layout;
    match head {
        Head::Reconstruction => (l.recon_w, l.recon_b),
        Head::Prediction => (l.pred_w, l.pred_b),
    }
}

pub(crate) fn head_forward(state: &ModelState, grid: &TokenGrid, head: Head) -> Vec<f64> {
    let (d, p) = (state.layout.d, state.layout.patch_len);
    let rows = head_rows(grid.dims, head);
    let (w, b) = head_params(state, head);
    let x = &grid.data[rows.start * d..rows.end * d];
    linear(x, rows.len(), d, state.slice(w, p * d), p, Some(state.slice(b, p)))
}

/// Backward of [`head_forward`]; returns the gradient w.r.t. the whole
/// token grid (zero outside the rows the head reads).
pub(crate) fn head_backward(state: &ModelState, grid: &TokenGrid, dout: &[f64], head: Head, grads: &mut Gradients) -> Vec<f64> {
    let (d, p) = (state.layout.d, state.layout.patch_len);
    let rows = head_rows(grid.dims, head);
    let (w, b) = head_params(state, head);
    let x = &grid.data[rows.start * d..rows.end * d];
    let (dw, rest) = grads.data[w..].split_at_mut(p * d);
    let db = &mut rest[b - w - p * d..][..p];
    let dx = linear_backward(x, dout, rows.len(), d, state.slice(w, p * d), p, dw, Some(db));
    let mut dz = vec![0.0; grid.data.len()];
    dz[rows.start * d..rows.end * d].copy_from_slice(&dx);
    dz
}
