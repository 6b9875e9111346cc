use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PredictionSample, VelocityBins};
use crate::error::{Error, Result};

/// A predictor under evaluation: maps a sample to the normalized
/// next-frame patch vector.
pub struct Method<'a> {
    pub name: String,
    pub mode: Option<String>,
    pub fraction: Option<f64>,
    pub predict: Box<dyn Fn(&PredictionSample) -> Result<Vec<f64>> + 'a>,
}

/// One (method, bin) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub method: String,
    pub mode: Option<String>,
    pub fraction: Option<f64>,
    /// Bin label, or `all` for the whole test set.
    pub bin: String,
    pub samples: usize,
    /// Dataset-level `10 log10(Σ‖err‖² / Σ‖truth‖²)`; `None` for an empty bin.
    pub nmse_db: Option<f64>,
    /// Mean of per-sequence NMSE (linear), in dB.
    pub mean_seq_nmse_db: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tool: String,
    pub config_hash: String,
    pub records: Vec<EvalRecord>,
}

/// `10 log10(err / truth)` clamped below at `floor_db`.
pub fn nmse_db(err: f64, truth: f64, floor_db: f64) -> f64 {
    if err <= 0.0 {
        return floor_db;
    }
    (10.0 * (err / truth).log10()).max(floor_db)
}

/// Score every method on every velocity bin (plus the pooled set).
///
/// Errors are accumulated in the original (unnormalized) scale.
pub fn evaluate(
    methods: &[Method<'_>],
    test: &[PredictionSample],
    bins: &VelocityBins,
    floor_db: f64,
    config_hash: &str,
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    let n_groups = bins.len() + 1;
    let mut records = Vec::new();
    for m in methods {
        let mut err = vec![0.0; n_groups];
        let mut truth = vec![0.0; n_groups];
        let mut seq_sum = vec![0.0; n_groups];
        let mut count = vec![0usize; n_groups];
        for s in test {
            let pred = (m.predict)(s)?;
            let target = &s.example.target;
            if pred.len() != target.len() {
                return Err(Error::shape(format!("{} predicted {} values, expected {}", m.name, pred.len(), target.len())));
            }
            let scale = s.rms * s.rms;
            let e: f64 = pred.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() * scale;
            let t: f64 = target.iter().map(|x| x * x).sum::<f64>() * scale;
            if !e.is_finite() {
                return Err(Error::NonFinite { batch: 0 });
            }
            let mut groups = vec![bins.len()];
            groups.extend(bins.bin_of(s.speed));
            for g in groups {
                err[g] += e;
                truth[g] += t;
                seq_sum[g] += if t > 0.0 { e / t } else { 0.0 };
                count[g] += 1;
            }
        }
        for g in 0..n_groups {
            let label = if g == bins.len() { "all".to_string() } else { bins.label(g) };
            let (nmse, mean) = if count[g] == 0 {
                (None, None)
            } else {
                let mean_lin = seq_sum[g] / count[g] as f64;
                (
                    Some(nmse_db(err[g], truth[g], floor_db)),
                    Some(nmse_db(mean_lin, 1.0, floor_db)),
                )
            };
            records.push(EvalRecord {
                method: m.name.clone(),
                mode: m.mode.clone(),
                fraction: m.fraction,
                bin: label,
                samples: count[g],
                nmse_db: nmse,
                mean_seq_nmse_db: mean,
            });
        }
    }
    Ok(EvalReport {
        tool: crate::TOOL_VERSION.to_string(),
        config_hash: config_hash.to_string(),
        records,
    })
}

impl EvalReport {
    pub fn get(&self, method: &str, bin: &str) -> Option<&EvalRecord> {
        self.records.iter().find(|r| r.method == method && r.bin == bin)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("# tool={}\n# config_hash={}\n", self.tool, self.config_hash);
        s.push_str("method,mode,fraction,bin,samples,nmse_db,mean_seq_nmse_db\n");
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{},\"{}\",{},{},{}",
                r.method,
                r.mode.as_deref().unwrap_or(""),
                r.fraction.map(|f| format!("{}", f * 100.0)).unwrap_or_default(),
                r.bin,
                r.samples,
                opt(r.nmse_db),
                opt(r.mean_seq_nmse_db)
            );
        }
        s
    }

    /// Writes `<stem>.csv` and `<stem>.json` next to each other.
    pub fn write(&self, stem: &Path) -> Result<()> {
        crate::io::ensure_parent(stem)?;
        let csv = stem.with_extension("csv");
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let json = stem.with_extension("json");
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(&json, text).map_err(|e| Error::io(&json, e))?;
        Ok(())
    }
}
