//! Run configuration: one TOML document with a section per module.
//! Unknown keys are rejected; omitted keys take their defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention::AttentionConfig;
use crate::downstream::EvalConfig;
use crate::error::{Error, Result};
use crate::masking::MaskConfig;
use crate::model::ModelConfig;
use crate::scene::SceneConfig;
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdtConfig {
    /// Delay taps kept after truncation (`W`).
    pub delay_taps: usize,
}

impl Default for AdtConfig {
    fn default() -> Self {
        AdtConfig { delay_taps: 32 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub scene: SceneConfig,
    pub adt: AdtConfig,
    pub mask: MaskConfig,
    pub attention: AttentionConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        if self.adt.delay_taps == 0 || self.adt.delay_taps > self.scene.n_subcarriers {
            return Err(Error::invalid(format!(
                "adt.delay_taps {} outside [1, {}]",
                self.adt.delay_taps, self.scene.n_subcarriers
            )));
        }
        self.mask.validate()?;
        self.attention.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.eval.validate()?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON rendering, stable across key order
    /// and formatting of the source file.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        crate::io::sha256_hex(&json)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = Config::default();
        let back = Config::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(Config::from_toml("[model]\ndepht = 3\n"), Err(Error::Config(_))));
        assert!(matches!(Config::from_toml("[bogus]\n"), Err(Error::Config(_))));
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = Config::from_toml("[model]\ndepth = 2\n").unwrap();
        assert_eq!(cfg.model.depth, 2);
        assert_eq!(cfg.model.embed_dim, 32);
        assert_ne!(cfg.hash(), Config::default().hash());
    }

    #[test]
    fn table_one_defaults() {
        let cfg = Config::default();
        assert_eq!((cfg.model.depth, cfg.model.heads, cfg.model.embed_dim, cfg.model.mlp_ratio), (12, 8, 32, 4));
        assert_eq!(cfg.model.patch, [1, 1]);
        assert_eq!(cfg.attention.window_radius, [1, 1]);
        assert_eq!(cfg.attention.temporal_offsets, vec![-4, -3, -2, -1, 1, 2, 3, 4]);
        assert_eq!((cfg.attention.routing.fraction, cfg.attention.routing.k_max), (0.2, 64));
        assert_eq!((cfg.train.grad_clip, cfg.train.warmup_ratio), (1.0, 0.1));
        assert_eq!(cfg.mask.curriculum.rho_end, 0.60);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(Config::from_toml("[model]\nheads = 3\n").is_err());
        assert!(Config::from_toml("[adt]\ndelay_taps = 0\n").is_err());
    }
}
