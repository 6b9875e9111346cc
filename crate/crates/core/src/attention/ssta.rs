use super::{NeighborTable, Rope, RopeTable, RoutingConfig};
use crate::error::{Error, Result};
use crate::ops::{axpy, dot, linear};

/// Projection weights of one attention layer, each `D × D` row-major.
#[derive(Clone, Copy, Debug)]
pub struct AttentionWeights<'a> {
    pub wq: &'a [f64],
    pub wk: &'a [f64],
    pub wv: &'a [f64],
    pub wo: &'a [f64],
}

/// Instrumented operation counts, summed over heads.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AttentionStats {
    pub heads: usize,
    /// Query-key logits evaluated.
    pub score_evals: u64,
    /// Logits with CLS as query or key.
    pub hub_score_evals: u64,
    /// Edges surviving routing (terms in the weighted value sum).
    pub weighted_edges: u64,
    pub hub_weighted_edges: u64,
}

impl AttentionStats {
    pub fn per_head_scores(&self) -> u64 {
        self.score_evals / self.heads.max(1) as u64
    }

    pub fn per_head_weighted(&self) -> u64 {
        self.weighted_edges / self.heads.max(1) as u64
    }

    pub fn per_head_scores_without_hub(&self) -> u64 {
        (self.score_evals - self.hub_score_evals) / self.heads.max(1) as u64
    }

    pub fn per_head_weighted_without_hub(&self) -> u64 {
        (self.weighted_edges - self.hub_weighted_edges) / self.heads.max(1) as u64
    }

    pub fn merge(&mut self, other: &AttentionStats) {
        self.heads = self.heads.max(other.heads);
        self.score_evals += other.score_evals;
        self.hub_score_evals += other.hub_score_evals;
        self.weighted_edges += other.weighted_edges;
        self.hub_weighted_edges += other.hub_weighted_edges;
    }
}

/// Routed selections and softmax weights, per (query, head).
#[derive(Clone, Debug, Default)]
pub struct AttnCache {
    pub offsets: Vec<usize>,
    pub keys: Vec<u32>,
    pub alpha: Vec<f64>,
}

pub(crate) fn check_dims(s: usize, d_model: usize, heads: usize, table: &NeighborTable) -> Result<usize> {
    if heads == 0 || !d_model.is_multiple_of(heads) {
        return Err(Error::shape(format!("D = {d_model} not divisible by {heads} heads")));
    }
    let d = d_model / heads;
    if !d.is_multiple_of(2) {
        return Err(Error::shape(format!("per-head dimension {d} must be even")));
    }
    if table.len() != s {
        return Err(Error::shape(format!("{s} tokens but neighbor table has {}", table.len())));
    }
    Ok(d)
}

pub(crate) fn rotate_heads(x: &mut [f64], s: usize, d_model: usize, heads: usize, rope: &RopeTable) {
    let d = d_model / heads;
    for i in 0..s {
        for h in 0..heads {
            rope.rotate(&mut x[i * d_model + h * d..i * d_model + (h + 1) * d], i);
        }
    }
}

pub(crate) fn rotate_heads_back(x: &mut [f64], s: usize, d_model: usize, heads: usize, rope: &RopeTable) {
    let d = d_model / heads;
    for i in 0..s {
        for h in 0..heads {
            rope.rotate_back(&mut x[i * d_model + h * d..i * d_model + (h + 1) * d], i);
        }
    }
}

/// Sparse attention over rotated queries/keys; returns concatenated head
/// outputs (`S × D`) and the routing cache.
pub(crate) fn attend(
    qr: &[f64],
    kr: &[f64],
    v: &[f64],
    d_model: usize,
    heads: usize,
    table: &NeighborTable,
    routing: &RoutingConfig,
    stats: &mut AttentionStats,
) -> (Vec<f64>, AttnCache) {
    let s = table.len();
    let d = d_model / heads;
    let scale = 1.0 / (d as f64).sqrt();
    let mut out = vec![0.0; s * d_model];
    let mut cache = AttnCache {
        offsets: Vec::with_capacity(s * heads + 1),
        keys: Vec::new(),
        alpha: Vec::new(),
    };
    cache.offsets.push(0);
    stats.heads = heads;
    let mut logits = Vec::new();
    let mut sel = Vec::new();
    for i in 0..s {
        let nbrs = table.neighbors(i);
        let n = nbrs.len();
        let k_r = routing.routed_size(n);
        let hub_in_row = if i == 0 { n } else { usize::from(nbrs.first() == Some(&0)) };
        for h in 0..heads {
            let q = &qr[i * d_model + h * d..i * d_model + (h + 1) * d];
            logits.clear();
            logits.extend(nbrs.iter().map(|&j| {
                let j = j as usize;
                dot(q, &kr[j * d_model + h * d..j * d_model + (h + 1) * d]) * scale
            }));
            stats.score_evals += n as u64;
            stats.hub_score_evals += hub_in_row as u64;

            super::select_top(&logits, k_r, &mut sel);
            let m = sel.iter().map(|&p| logits[p]).fold(f64::NEG_INFINITY, f64::max);
            let start = cache.alpha.len();
            let mut z = 0.0;
            for &p in &sel {
                let e = (logits[p] - m).exp();
                z += e;
                cache.alpha.push(e);
                cache.keys.push(nbrs[p]);
            }
            let o = &mut out[i * d_model + h * d..i * d_model + (h + 1) * d];
            for (a, &j) in cache.alpha[start..].iter_mut().zip(&cache.keys[start..]) {
                *a /= z;
                let j = j as usize;
                axpy(*a, &v[j * d_model + h * d..j * d_model + (h + 1) * d], o);
            }
            stats.weighted_edges += sel.len() as u64;
            stats.hub_weighted_edges += if i == 0 {
                sel.len() as u64
            } else {
                cache.keys[start..].iter().filter(|&&j| j == 0).count() as u64
            };
            cache.offsets.push(cache.alpha.len());
        }
    }
    (out, cache)
}

/// Backward of [`attend`] with the routing selection held fixed.
pub(crate) fn attend_backward(
    qr: &[f64],
    kr: &[f64],
    v: &[f64],
    d_out: &[f64],
    d_model: usize,
    heads: usize,
    cache: &AttnCache,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let s = qr.len() / d_model;
    let d = d_model / heads;
    let scale = 1.0 / (d as f64).sqrt();
    let mut dq = vec![0.0; s * d_model];
    let mut dk = vec![0.0; s * d_model];
    let mut dv = vec![0.0; s * d_model];
    let mut dalpha = Vec::new();
    for i in 0..s {
        for h in 0..heads {
            let c = i * heads + h;
            let (a, b) = (cache.offsets[c], cache.offsets[c + 1]);
            let keys = &cache.keys[a..b];
            let alpha = &cache.alpha[a..b];
            let go = &d_out[i * d_model + h * d..i * d_model + (h + 1) * d];
            dalpha.clear();
            let mut mean = 0.0;
            for (&j, &al) in keys.iter().zip(alpha) {
                let j = j as usize;
                let vj = &v[j * d_model + h * d..j * d_model + (h + 1) * d];
                let g = dot(go, vj);
                dalpha.push(g);
                mean += al * g;
                axpy(al, go, &mut dv[j * d_model + h * d..j * d_model + (h + 1) * d]);
            }
            let q = &qr[i * d_model + h * d..i * d_model + (h + 1) * d];
            for ((&j, &al), &g) in keys.iter().zip(alpha).zip(&dalpha) {
                let de = al * (g - mean) * scale;
                if de == 0.0 {
                    continue;
                }
                let j = j as usize;
                let kj = &kr[j * d_model + h * d..j * d_model + (h + 1) * d];
                axpy(de, kj, &mut dq[i * d_model + h * d..i * d_model + (h + 1) * d]);
                axpy(de, q, &mut dk[j * d_model + h * d..j * d_model + (h + 1) * d]);
            }
        }
    }
    (dq, dk, dv)
}

/// Multi-head sparse attention layer: projections, RoPE on queries and
/// keys (position = token index), neighborhood softmax with optional top-K
/// routing, output projection.
pub fn ssta_forward(
    tokens: &[f64],
    d_model: usize,
    heads: usize,
    table: &NeighborTable,
    weights: AttentionWeights<'_>,
    routing: &RoutingConfig,
    rope_base: f64,
) -> Result<(Vec<f64>, AttentionStats)> {
    if !tokens.len().is_multiple_of(d_model.max(1)) {
        return Err(Error::shape("token buffer is not a multiple of D"));
    }
    let s = tokens.len() / d_model;
    let d = check_dims(s, d_model, heads, table)?;
    for w in [weights.wq, weights.wk, weights.wv, weights.wo] {
        if w.len() != d_model * d_model {
            return Err(Error::shape("projection weights must be D × D"));
        }
    }
    if routing.enabled {
        routing.validate()?;
    }
    let rope = Rope::new(d, rope_base)?.table(s);
    let mut q = linear(tokens, s, d_model, weights.wq, d_model, None);
    let mut k = linear(tokens, s, d_model, weights.wk, d_model, None);
    let v = linear(tokens, s, d_model, weights.wv, d_model, None);
    rotate_heads(&mut q, s, d_model, heads, &rope);
    rotate_heads(&mut k, s, d_model, heads, &rope);
    let mut stats = AttentionStats::default();
    let (cat, _) = attend(&q, &k, &v, d_model, heads, table, routing, &mut stats);
    Ok((linear(&cat, s, d_model, weights.wo, d_model, None), stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::{AttentionMode, NeighborParams};
    use crate::masking::GridDims;
    use crate::rng::substream;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = substream(seed, "ssta-test", 0);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    fn table() -> NeighborTable {
        let p = NeighborParams {
            r_h: 1,
            r_w: 1,
            offsets: vec![-2, -1, 1, 2],
            gamma_h: 1.0,
            gamma_w: 1.0,
        };
        NeighborTable::build(GridDims::new(3, 4, 4), &p, AttentionMode::Bidirectional, true).unwrap()
    }

    #[test]
    fn softmax_weights_sum_to_one() {
        let t = table();
        let (s, d) = (t.len(), 8);
        let (q, k, v) = (randn(s * d, 1), randn(s * d, 2), randn(s * d, 3));
        for routing in [RoutingConfig::disabled(), RoutingConfig { k_min: 4, k_max: 8, ..Default::default() }] {
            let mut stats = AttentionStats::default();
            let (_, cache) = attend(&q, &k, &v, d, 2, &t, &routing, &mut stats);
            for c in 0..s * 2 {
                let sum: f64 = cache.alpha[cache.offsets[c]..cache.offsets[c + 1]].iter().sum();
                assert!((sum - 1.0).abs() < 1e-9);
            }
            assert_eq!(stats.score_evals, 2 * t.total_edges() as u64);
            let routed: u64 = (0..s).map(|i| routing.routed_size(t.degree(i)) as u64).sum();
            assert_eq!(stats.weighted_edges, 2 * routed);
        }
    }

    #[test]
    fn pruned_keys_receive_no_gradient() {
        // One head, K_r = 1: every query keeps only its strongest key.
        let t = NeighborTable::full(6);
        let d = 2;
        let mut q = vec![0.0; 6 * d];
        let mut k = vec![0.0; 6 * d];
        for i in 0..6 {
            q[i * d] = 1.0;
        }
        k[4 * d] = 50.0; // key 4 dominates every logit
        for j in [0, 1, 2, 3, 5] {
            k[j * d + 1] = 0.1 * j as f64;
        }
        let v = randn(6 * d, 4);
        let routing = RoutingConfig {
            enabled: true,
            fraction: 0.1,
            k_min: 1,
            k_max: 1,
        };
        let mut stats = AttentionStats::default();
        let (out, cache) = attend(&q, &k, &v, d, 1, &t, &routing, &mut stats);
        assert!(cache.keys.iter().all(|&j| j == 4));
        for i in 0..6 {
            assert_eq!(&out[i * d..(i + 1) * d], &v[4 * d..5 * d]);
        }
        let dout = randn(6 * d, 5);
        let (dq, dk, dv) = attend_backward(&q, &k, &v, &dout, d, 1, &cache);
        for j in [0, 1, 2, 3, 5] {
            assert!(dk[j * d..(j + 1) * d].iter().all(|&x| x == 0.0));
            assert!(dv[j * d..(j + 1) * d].iter().all(|&x| x == 0.0));
        }
        // a singleton softmax has zero logit gradient
        assert!(dq.iter().all(|&x| x == 0.0));
        assert!(dv[4 * d..5 * d].iter().any(|&x| x != 0.0));
    }

    #[test]
    fn singleton_sequence_returns_projected_value() {
        let d = 4;
        let x = randn(d, 6);
        let w: Vec<Vec<f64>> = (0..4).map(|s| randn(d * d, 10 + s)).collect();
        let weights = AttentionWeights { wq: &w[0], wk: &w[1], wv: &w[2], wo: &w[3] };
        let (out, _) = ssta_forward(&x, d, 2, &NeighborTable::full(1), weights, &RoutingConfig::disabled(), 1e4).unwrap();
        let expect = linear(&linear(&x, 1, d, &w[2], d, None), 1, d, &w[3], d, None);
        for (a, b) in out.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_errors() {
        let t = table();
        let x = randn(t.len() * 6, 7);
        let w = randn(36, 8);
        let weights = AttentionWeights { wq: &w, wk: &w, wv: &w, wo: &w };
        // heads = 4 does not divide 6
        assert!(ssta_forward(&x, 6, 4, &t, weights, &RoutingConfig::disabled(), 1e4).is_err());
        // per-head dim 3 is odd
        assert!(ssta_forward(&x, 6, 2, &t, weights, &RoutingConfig::disabled(), 1e4).is_err());
        // wrong token count
        assert!(ssta_forward(&x[..12], 6, 3, &t, weights, &RoutingConfig::disabled(), 1e4).is_err());
    }
}
