//! Sparse spatio-temporal attention.
//!
//! Tokens are laid out as `[CLS, (t, h, w) row-major]`. Each content token
//! attends to a same-frame window plus temporal corridors whose width grows
//! with the frame offset; the CLS token is a global hub. Within the
//! neighborhood, logits may be pruned to the top `K_r` before the softmax.

pub mod dense;
pub mod neighbors;
pub mod rope;
pub mod routing;
pub mod ssta;

use serde::{Deserialize, Serialize};

pub use dense::{dense_attention_at, dense_attention_reference};
pub use neighbors::{AttentionMode, NeighborParams, NeighborTable};
pub use rope::{rope_rotate, Rope, RopeTable};
pub use routing::{select_top, topk_route, RoutedNeighbors, RoutingConfig};
pub use ssta::{ssta_forward, AttentionStats, AttentionWeights};

use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttentionConfig {
    /// Same-frame radii (angle, delay); 1 gives a 3×3 window.
    pub window_radius: [usize; 2],
    /// Temporal offsets for bidirectional attention.
    pub temporal_offsets: Vec<i64>,
    /// Corridor growth per frame of offset (angle, delay).
    pub gamma: [f64; 2],
    pub cls_hub: bool,
    pub rope_base: f64,
    pub routing: RoutingConfig,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig {
            window_radius: [1, 1],
            temporal_offsets: vec![-4, -3, -2, -1, 1, 2, 3, 4],
            gamma: [1.0, 1.0],
            cls_hub: true,
            rope_base: 10_000.0,
            routing: RoutingConfig::default(),
        }
    }
}

impl AttentionConfig {
    pub fn neighbor_params(&self, mode: AttentionMode) -> NeighborParams {
        let offsets = match mode {
            AttentionMode::Bidirectional => self.temporal_offsets.clone(),
            AttentionMode::Causal => {
                let mut past: Vec<i64> = self.temporal_offsets.iter().map(|o| -o.abs()).collect();
                past.sort_unstable();
                past.dedup();
                past
            }
        };
        NeighborParams {
            r_h: self.window_radius[0],
            r_w: self.window_radius[1],
            offsets,
            gamma_h: self.gamma[0],
            gamma_w: self.gamma[1],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.routing.validate()?;
        self.neighbor_params(AttentionMode::Bidirectional).validate(AttentionMode::Bidirectional)?;
        if !(self.rope_base > 1.0) {
            return Err(crate::Error::invalid("rope_base must exceed 1"));
        }
        Ok(())
    }
}
