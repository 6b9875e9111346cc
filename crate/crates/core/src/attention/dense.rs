use super::{AttentionWeights, Rope};
use crate::error::{Error, Result};

/// Plain all-pairs softmax attention with the same projections and RoPE.
///
/// Written without the sparse machinery so it can serve as an oracle.
/// With `causal`, token `i` sees tokens `0..=i`.
pub fn dense_attention_reference(
    tokens: &[f64],
    d_model: usize,
    heads: usize,
    weights: AttentionWeights<'_>,
    rope_base: f64,
    causal: bool,
) -> Result<Vec<f64>> {
    let positions: Vec<usize> = (0..tokens.len() / d_model.max(1)).collect();
    dense_attention_at(tokens, &positions, d_model, heads, weights, rope_base, causal)
}

/// As [`dense_attention_reference`] with explicit RoPE positions; the
/// causal order is still the token order.
pub fn dense_attention_at(
    tokens: &[f64],
    positions: &[usize],
    d_model: usize,
    heads: usize,
    weights: AttentionWeights<'_>,
    rope_base: f64,
    causal: bool,
) -> Result<Vec<f64>> {
    if heads == 0 || !d_model.is_multiple_of(heads) || !tokens.len().is_multiple_of(d_model) {
        return Err(Error::shape("bad dimensions for dense attention"));
    }
    let s = tokens.len() / d_model;
    if positions.len() != s {
        return Err(Error::shape("one position per token"));
    }
    let d = d_model / heads;
    let rope = Rope::new(d, rope_base)?;
    let project = |w: &[f64], i: usize| -> Vec<f64> {
        let x = &tokens[i * d_model..(i + 1) * d_model];
        (0..d_model)
            .map(|r| (0..d_model).map(|c| w[r * d_model + c] * x[c]).sum())
            .collect()
    };
    let mut q: Vec<Vec<f64>> = (0..s).map(|i| project(weights.wq, i)).collect();
    let mut k: Vec<Vec<f64>> = (0..s).map(|i| project(weights.wk, i)).collect();
    let v: Vec<Vec<f64>> = (0..s).map(|i| project(weights.wv, i)).collect();
    for i in 0..s {
        for h in 0..heads {
            rope.rotate(&mut q[i][h * d..(h + 1) * d], positions[i]);
            rope.rotate(&mut k[i][h * d..(h + 1) * d], positions[i]);
        }
    }
    let mut cat = vec![vec![0.0; d_model]; s];
    for h in 0..heads {
        let r = h * d..(h + 1) * d;
        for i in 0..s {
            let last = if causal { i + 1 } else { s };
            let e: Vec<f64> = (0..last)
                .map(|j| q[i][r.clone()].iter().zip(&k[j][r.clone()]).map(|(a, b)| a * b).sum::<f64>() / (d as f64).sqrt())
                .collect();
            let m = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = e.iter().map(|x| (x - m).exp()).collect();
            let z: f64 = w.iter().sum();
            for (j, wj) in w.iter().enumerate() {
                for c in r.clone() {
                    cat[i][c] += wj / z * v[j][c];
                }
            }
        }
    }
    let mut out = Vec::with_capacity(s * d_model);
    for row in &cat {
        for r in 0..d_model {
            out.push((0..d_model).map(|c| weights.wo[r * d_model + c] * row[c]).sum());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = substream(seed, "dense-test", 0);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn permutation_equivariance_with_fixed_positions() {
        // Each token keeps its RoPE position while its place in the
        // sequence moves; outputs must move with it.
        let d = 4;
        let s = 5;
        let x = randn(s * d, 1);
        let w: Vec<Vec<f64>> = (0..4).map(|i| randn(d * d, 2 + i)).collect();
        let weights = AttentionWeights { wq: &w[0], wk: &w[1], wv: &w[2], wo: &w[3] };
        let out = dense_attention_reference(&x, d, 2, weights, 1e4, false).unwrap();
        let perm = [3, 0, 4, 1, 2];
        let mut xp = vec![0.0; s * d];
        for (dst, &src) in perm.iter().enumerate() {
            xp[dst * d..(dst + 1) * d].copy_from_slice(&x[src * d..(src + 1) * d]);
        }
        let outp = dense_attention_at(&xp, &perm, d, 2, weights, 1e4, false).unwrap();
        for (dst, &src) in perm.iter().enumerate() {
            for c in 0..d {
                assert!((outp[dst * d + c] - out[src * d + c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn causal_first_token_sees_only_itself() {
        let d = 4;
        let x = randn(3 * d, 9);
        let w: Vec<Vec<f64>> = (0..4).map(|i| randn(d * d, 20 + i)).collect();
        let weights = AttentionWeights { wq: &w[0], wk: &w[1], wv: &w[2], wo: &w[3] };
        let a = dense_attention_reference(&x, d, 2, weights, 1e4, true).unwrap();
        let b = dense_attention_reference(&x[..d], d, 2, weights, 1e4, true).unwrap();
        assert_eq!(&a[..d], &b[..]);
    }
}
