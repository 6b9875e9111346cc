use serde::{Deserialize, Serialize};

use super::NeighborTable;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoutingConfig {
    pub enabled: bool,
    /// Fraction of the neighborhood retained, in (0, 1].
    pub fraction: f64,
    pub k_min: usize,
    pub k_max: usize,
}

impl Default for RoutingConfig {
    fn default() -> Self {
        RoutingConfig {
            enabled: true,
            fraction: 0.2,
            k_min: 16,
            k_max: 64,
        }
    }
}

impl RoutingConfig {
    pub fn disabled() -> Self {
        RoutingConfig {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::invalid(format!("routing fraction {} outside (0, 1]", self.fraction)));
        }
        if self.k_min > self.k_max {
            return Err(Error::invalid(format!("K_min {} > K_max {}", self.k_min, self.k_max)));
        }
        Ok(())
    }

    /// `K_r = clip(⌊f·n⌋, K_min, K_max)`, capped at the neighborhood size.
    pub fn routed_size(&self, n: usize) -> usize {
        if !self.enabled {
            return n;
        }
        let k = (self.fraction * n as f64).floor() as usize;
        k.clamp(self.k_min, self.k_max).min(n)
    }
}

/// Positions of the `k` largest logits, ties to the lower position,
/// returned in ascending position order.
pub fn select_top(logits: &[f64], k: usize, out: &mut Vec<usize>) {
    out.clear();
    out.extend(0..logits.len());
    if k >= logits.len() {
        return;
    }
    if k == 0 {
        out.clear();
        return;
    }
    out.select_nth_unstable_by(k - 1, |&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    out.truncate(k);
    out.sort_unstable();
}

/// Retained neighbors per query in CSR form.
#[derive(Clone, Debug, PartialEq)]
pub struct RoutedNeighbors {
    pub offsets: Vec<usize>,
    pub indices: Vec<u32>,
}

impl RoutedNeighbors {
    pub fn retained(&self, i: usize) -> &[u32] {
        &self.indices[self.offsets[i]..self.offsets[i + 1]]
    }
}

/// Top-`K_r` pruning of one head's logits; `logits` is aligned with
/// `table.indices`.
pub fn topk_route(logits: &[f64], table: &NeighborTable, cfg: &RoutingConfig) -> Result<RoutedNeighbors> {
    cfg.validate()?;
    if logits.len() != table.indices.len() {
        return Err(Error::shape(format!(
            "{} logits for {} edges",
            logits.len(),
            table.indices.len()
        )));
    }
    let mut offsets = vec![0];
    let mut indices = Vec::new();
    let mut sel = Vec::new();
    for i in 0..table.len() {
        let (a, b) = (table.offsets[i], table.offsets[i + 1]);
        select_top(&logits[a..b], cfg.routed_size(b - a), &mut sel);
        indices.extend(sel.iter().map(|&p| table.indices[a + p]));
        offsets.push(indices.len());
    }
    Ok(RoutedNeighbors { offsets, indices })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_formula() {
        let cfg = RoutingConfig::default();
        assert_eq!(cfg.routed_size(337), 64);
        assert_eq!(cfg.routed_size(10), 10);
        assert_eq!(cfg.routed_size(100), 20);
        assert_eq!(cfg.routed_size(40), 16);
        let open = RoutingConfig {
            fraction: 1.0,
            k_max: 1000,
            ..cfg
        };
        assert_eq!(open.routed_size(337), 337);
        assert_eq!(RoutingConfig::disabled().routed_size(337), 337);
    }

    #[test]
    fn bad_bounds_rejected() {
        let cfg = RoutingConfig {
            k_min: 65,
            ..RoutingConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn top_selection_breaks_ties_low() {
        let logits = [0.5, 2.0, 2.0, -1.0, 2.0, 0.7];
        let mut out = Vec::new();
        select_top(&logits, 2, &mut out);
        assert_eq!(out, vec![1, 2]);
        select_top(&logits, 4, &mut out);
        assert_eq!(out, vec![1, 2, 4, 5]);
        select_top(&logits, 10, &mut out);
        assert_eq!(out.len(), 6);
    }
}
