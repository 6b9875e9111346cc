use std::time::Instant;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::attention::{
    dense_attention_reference, ssta_forward, AttentionConfig, AttentionMode, AttentionWeights, NeighborTable,
    RoutingConfig,
};
use crate::error::{Error, Result};
use crate::masking::GridDims;
use crate::model::ModelConfig;
use crate::rng::substream;

/// Per-head attention cost of one method at one sequence length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: String,
    pub frames: usize,
    pub tokens: usize,
    /// Query-key logits evaluated (instrumented, or analytic for dense).
    pub score_evals: u64,
    pub score_evals_without_hub: u64,
    /// Terms in the value aggregation after routing.
    pub aggregated: u64,
    /// Analytic expectation for `score_evals`.
    pub analytic_scores: u64,
    /// Analytic expectation for `aggregated`.
    pub analytic_aggregated: u64,
    /// `S² / score_evals`.
    pub dense_ratio: f64,
    /// `S² / aggregated`.
    pub dense_ratio_aggregated: f64,
    /// Forward wall time of one layer; `None` when not run.
    pub wall_ms: Option<f64>,
}

fn random_vec(n: usize, scale: f64, rng: &mut crate::rng::Rng) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

/// Dense vs SSTA vs SSTA with routing on `h × w` frames, one row per
/// method and sequence length.
pub fn bench_attention(
    frames: &[usize],
    h: usize,
    w: usize,
    attn: &AttentionConfig,
    model: &ModelConfig,
    dense_max_tokens: usize,
    seed: u64,
) -> Result<Vec<BenchRow>> {
    let d = model.embed_dim;
    let heads = model.heads;
    let mut rng = substream(seed, "bench", 0);
    let wscale = (1.0 / d as f64).sqrt();
    let wq = random_vec(d * d, wscale, &mut rng);
    let wk = random_vec(d * d, wscale, &mut rng);
    let wv = random_vec(d * d, wscale, &mut rng);
    let wo = random_vec(d * d, wscale, &mut rng);
    let weights = AttentionWeights {
        wq: &wq,
        wk: &wk,
        wv: &wv,
        wo: &wo,
    };
    let mut rows = Vec::new();
    for &t in frames {
        let dims = GridDims::new(t, h, w);
        let s = dims.len() + 1;
        let dense = (s * s) as u64;
        let tokens = random_vec(s * d, 1.0, &mut rng);
        let table = NeighborTable::build(dims, &attn.neighbor_params(AttentionMode::Bidirectional), AttentionMode::Bidirectional, attn.cls_hub)?;

        let wall_ms = if s <= dense_max_tokens {
            let t0 = Instant::now();
            dense_attention_reference(&tokens, d, heads, weights, attn.rope_base, false)?;
            Some(t0.elapsed().as_secs_f64() * 1e3)
        } else {
            None
        };
        rows.push(BenchRow {
            method: "dense".into(),
            frames: t,
            tokens: s,
            score_evals: dense,
            score_evals_without_hub: ((s - 1) * (s - 1)) as u64,
            aggregated: dense,
            analytic_scores: dense,
            analytic_aggregated: dense,
            dense_ratio: 1.0,
            dense_ratio_aggregated: 1.0,
            wall_ms,
        });

        for (name, routing) in [("ssta", RoutingConfig::disabled()), ("ssta+routing", attn.routing.clone())] {
            let t0 = Instant::now();
            let (_, stats) = ssta_forward(&tokens, d, heads, &table, weights, &routing, attn.rope_base)?;
            let wall = t0.elapsed().as_secs_f64() * 1e3;
            let analytic_aggregated: u64 = (0..s).map(|i| routing.routed_size(table.degree(i)) as u64).sum();
            let scores = stats.per_head_scores();
            let aggregated = stats.per_head_weighted();
            rows.push(BenchRow {
                method: name.into(),
                frames: t,
                tokens: s,
                score_evals: scores,
                score_evals_without_hub: stats.per_head_scores_without_hub(),
                aggregated,
                analytic_scores: table.total_edges() as u64,
                analytic_aggregated,
                dense_ratio: dense as f64 / scores as f64,
                dense_ratio_aggregated: dense as f64 / aggregated as f64,
                wall_ms: Some(wall),
            });
        }
    }
    Ok(rows)
}

/// Fails when a measured count exceeds its analytic bound or SSTA is not
/// at least `min_ratio` times cheaper than dense at the largest size.
pub fn check_complexity(rows: &[BenchRow], min_ratio: f64) -> Result<()> {
    for r in rows {
        if r.score_evals > r.analytic_scores || r.aggregated > r.analytic_aggregated {
            return Err(Error::invalid(format!(
                "{} at S={}: measured {} / {} exceeds analytic {} / {}",
                r.method, r.tokens, r.score_evals, r.aggregated, r.analytic_scores, r.analytic_aggregated
            )));
        }
    }
    let largest = rows.iter().map(|r| r.tokens).max().unwrap_or(0);
    for r in rows.iter().filter(|r| r.tokens == largest && r.method != "dense") {
        if r.dense_ratio < min_ratio {
            return Err(Error::invalid(format!(
                "{} at S={} is only {:.1}× below dense (need {min_ratio}×)",
                r.method, r.tokens, r.dense_ratio
            )));
        }
    }
    Ok(())
}
