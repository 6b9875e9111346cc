use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::masking::GridDims;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionMode {
    Bidirectional,
    Causal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborParams {
    pub r_h: usize,
    pub r_w: usize,
    pub offsets: Vec<i64>,
    pub gamma_h: f64,
    pub gamma_w: f64,
}

impl NeighborParams {
    pub fn validate(&self, mode: AttentionMode) -> Result<()> {
        if self.offsets.contains(&0) {
            return Err(Error::invalid("temporal offset 0 duplicates the same-frame window"));
        }
        if mode == AttentionMode::Causal && self.offsets.iter().any(|&o| o > 0) {
            return Err(Error::invalid("causal attention needs strictly negative temporal offsets"));
        }
        if !(self.gamma_h >= 0.0 && self.gamma_w >= 0.0) {
            return Err(Error::invalid("corridor slopes must be >= 0"));
        }
        Ok(())
    }

    /// Corridor half-widths at frame offset `dt`.
    pub fn corridor(&self, dt: i64) -> (usize, usize) {
        let a = dt.unsigned_abs() as f64;
        ((self.gamma_h * a).floor() as usize, (self.gamma_w * a).floor() as usize)
    }
}

/// Compressed per-token neighbor lists (CSR layout).
///
/// Token 0 is CLS; content token `(t, h, w)` is `1 + dims.index(t, h, w)`.
/// Lists are sorted ascending and duplicate-free and always contain the
/// token itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborTable {
    pub dims: GridDims,
    pub mode: AttentionMode,
    pub params: NeighborParams,
    pub cls_hub: bool,
    pub offsets: Vec<usize>,
    pub indices: Vec<u32>,
}

impl NeighborTable {
    /// Build the table for a `dims` token grid.
    ///
    /// With `cls_hub`, CLS attends to every token. Content tokens attend to
    /// CLS in bidirectional mode only: in causal mode CLS carries
    /// information from every frame, so an edge into it would leak future
    /// frames once blocks are stacked.
    pub fn build(dims: GridDims, params: &NeighborParams, mode: AttentionMode, cls_hub: bool) -> Result<Self> {
        params.validate(mode)?;
        let s = dims.len() + 1;
        if s > u32::MAX as usize {
            return Err(Error::invalid("sequence too long"));
        }
        let mut offsets = Vec::with_capacity(s + 1);
        let mut indices: Vec<u32> = Vec::new();
        offsets.push(0);
        if cls_hub {
            indices.extend(0..s as u32);
        } else {
            indices.push(0);
        }
        offsets.push(indices.len());

        let content_to_cls = cls_hub && mode == AttentionMode::Bidirectional;
        let mut row: Vec<u32> = Vec::new();
        for t in 0..dims.t {
            for h in 0..dims.h {
                for w in 0..dims.w {
                    row.clear();
                    if content_to_cls {
                        row.push(0);
                    }
                    push_box(&mut row, dims, t, h, w, params.r_h, params.r_w);
                    for &dt in &params.offsets {
                        let tt = t as i64 + dt;
                        if tt < 0 || tt >= dims.t as i64 {
                            continue;
                        }
                        let (rh, rw) = params.corridor(dt);
                        push_box(&mut row, dims, tt as usize, h, w, rh, rw);
                    }
                    row.sort_unstable();
                    row.dedup();
                    indices.extend_from_slice(&row);
                    offsets.push(indices.len());
                }
            }
        }
        Ok(NeighborTable {
            dims,
            mode,
            params: params.clone(),
            cls_hub,
            offsets,
            indices,
        })
    }

    /// Complete graph over `s` tokens (test oracle and dense baseline).
    pub fn full(s: usize) -> Self {
        let mut offsets = Vec::with_capacity(s + 1);
        let mut indices = Vec::with_capacity(s * s);
        offsets.push(0);
        for _ in 0..s {
            indices.extend(0..s as u32);
            offsets.push(indices.len());
        }
        NeighborTable {
            dims: GridDims::new(1, 1, s.saturating_sub(1)),
            mode: AttentionMode::Bidirectional,
            params: NeighborParams {
                r_h: 0,
                r_w: usize::MAX,
                offsets: Vec::new(),
                gamma_h: 0.0,
                gamma_w: 0.0,
            },
            cls_hub: true,
            offsets,
            indices,
        }
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.indices[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn total_edges(&self) -> usize {
        self.indices.len()
    }

    /// Edges with CLS at either end.
    pub fn hub_edges(&self) -> usize {
        if self.is_empty() {
            return 0;
        }
        let into_cls = (1..self.len()).filter(|&i| self.neighbors(i).first() == Some(&0)).count();
        self.degree(0) + into_cls
    }

    pub fn token(&self, t: usize, h: usize, w: usize) -> usize {
        1 + self.dims.index(t, h, w)
    }

    /// Frame of a content token; `None` for CLS.
    pub fn frame_of(&self, i: usize) -> Option<usize> {
        (i > 0).then(|| (i - 1) / self.dims.per_frame())
    }
}

fn push_box(row: &mut Vec<u32>, dims: GridDims, t: usize, h: usize, w: usize, rh: usize, rw: usize) {
    let h_lo = h.saturating_sub(rh);
    let h_hi = h.saturating_add(rh).min(dims.h - 1);
    let w_lo = w.saturating_sub(rw);
    let w_hi = w.saturating_add(rw).min(dims.w - 1);
    for hh in h_lo..=h_hi {
        for ww in w_lo..=w_hi {
            row.push(1 + dims.index(t, hh, ww) as u32);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::AttentionConfig;

    fn table(dims: GridDims, mode: AttentionMode) -> NeighborTable {
        let p = AttentionConfig::default().neighbor_params(mode);
        NeighborTable::build(dims, &p, mode, true).unwrap()
    }

    #[test]
    fn interior_token_has_337_spatiotemporal_neighbors() {
        let dims = GridDims::new(9, 32, 32);
        let t = table(dims, AttentionMode::Bidirectional);
        let i = t.token(4, 16, 16);
        // plus the CLS hub edge
        assert_eq!(t.degree(i), 337 + 1);
    }

    #[test]
    fn corner_has_fewer_neighbors() {
        let dims = GridDims::new(9, 32, 32);
        let t = table(dims, AttentionMode::Bidirectional);
        assert!(t.degree(t.token(0, 0, 0)) < t.degree(t.token(4, 16, 16)));
    }

    #[test]
    fn causal_first_frame_is_local_only() {
        let dims = GridDims::new(5, 6, 6);
        let t = table(dims, AttentionMode::Causal);
        for h in 0..6 {
            for w in 0..6 {
                let i = t.token(0, h, w);
                assert!(t.neighbors(i).iter().all(|&j| t.frame_of(j as usize) == Some(0)));
            }
        }
        for i in 1..t.len() {
            let f = t.frame_of(i).unwrap();
            assert!(t.neighbors(i).iter().all(|&j| t.frame_of(j as usize).is_some_and(|g| g <= f)));
        }
    }

    #[test]
    fn structural_invariants() {
        let dims = GridDims::new(4, 5, 7);
        for mode in [AttentionMode::Bidirectional, AttentionMode::Causal] {
            let t = table(dims, mode);
            assert_eq!(t.len(), dims.len() + 1);
            for i in 0..t.len() {
                let n = t.neighbors(i);
                assert!(n.windows(2).all(|w| w[0] < w[1]));
                assert!(n.binary_search(&(i as u32)).is_ok());
                assert!(n.iter().all(|&j| (j as usize) < t.len()));
            }
        }
    }

    #[test]
    fn bidirectional_relation_is_symmetric() {
        let dims = GridDims::new(5, 6, 5);
        let t = table(dims, AttentionMode::Bidirectional);
        for i in 0..t.len() {
            for &j in t.neighbors(i) {
                assert!(t.neighbors(j as usize).binary_search(&(i as u32)).is_ok(), "{i} -> {j}");
            }
        }
    }

    #[test]
    fn invalid_offsets_rejected() {
        let dims = GridDims::new(3, 3, 3);
        let mut p = AttentionConfig::default().neighbor_params(AttentionMode::Bidirectional);
        assert!(NeighborTable::build(dims, &p, AttentionMode::Causal, true).is_err());
        p.offsets.push(0);
        assert!(NeighborTable::build(dims, &p, AttentionMode::Bidirectional, true).is_err());
    }
}
