//! Binary checkpoint: `"ADTC"`, u16 version, u32 header length, a JSON
//! header, then parameters and (optionally) Adam moments as little-endian
//! f64.

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::AdamState;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelState};
use crate::rng::RngState;

const MAGIC: &[u8; 4] = b"ADTC";
const VERSION: u16 = 1;

/// Stream positions of the training loop's random sources.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointRng {
    pub data: RngState,
    pub mask: RngState,
    pub augment: RngState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    tool: String,
    config_hash: String,
    label: String,
    step: u64,
    model: ModelConfig,
    n_params: u64,
    adam_step: Option<u64>,
    rng: Option<CheckpointRng>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub tool: String,
    pub config_hash: String,
    /// Free-form tag, e.g. `pretrain` or `predictor-full-10%`.
    pub label: String,
    /// Completed optimizer steps.
    pub step: u64,
    pub model: ModelConfig,
    pub params: Vec<f64>,
    pub adam: Option<AdamState>,
    pub rng: Option<CheckpointRng>,
}

impl Checkpoint {
    pub fn new(state: &ModelState, config_hash: &str, label: &str, step: u64) -> Self {
        Checkpoint {
            tool: crate::TOOL_VERSION.to_string(),
            config_hash: config_hash.to_string(),
            label: label.to_string(),
            step,
            model: state.cfg.clone(),
            params: state.params.clone(),
            adam: None,
            rng: None,
        }
    }

    pub fn state(&self) -> Result<ModelState> {
        ModelState::from_params(&self.model, self.params.clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            tool: self.tool.clone(),
            config_hash: self.config_hash.clone(),
            label: self.label.clone(),
            step: self.step,
            model: self.model.clone(),
            n_params: self.params.len() as u64,
            adam_step: self.adam.as_ref().map(|a| a.step),
            rng: self.rng,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let n_vec = if self.adam.is_some() { 3 } else { 1 };
        let mut out = Vec::with_capacity(10 + json.len() + 8 * n_vec * self.params.len());
        out.extend_from_slice(MAGIC);
        out.write_u16::<LittleEndian>(VERSION).unwrap();
        out.write_u32::<LittleEndian>(json.len() as u32).unwrap();
        out.extend_from_slice(&json);
        let mut put = |v: &[f64]| v.iter().for_each(|x| out.write_f64::<LittleEndian>(*x).unwrap());
        put(&self.params);
        if let Some(a) = &self.adam {
            put(&a.m);
            put(&a.v);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor::new(bytes);
        let mut magic = [0u8; 4];
        let bad = |found: [u8; 4]| Error::BadMagic {
            expected: *MAGIC,
            found,
        };
        cur.read_exact(&mut magic).map_err(|_| bad(magic))?;
        if &magic != MAGIC {
            return Err(bad(magic));
        }
        let short = |_| Error::PayloadLengthMismatch {
            expected: 10,
            actual: bytes.len() as u64,
        };
        let version = cur.read_u16::<LittleEndian>().map_err(short)?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let hlen = cur.read_u32::<LittleEndian>().map_err(short)? as usize;
        let start = 10 + hlen;
        if bytes.len() < start {
            return Err(Error::PayloadLengthMismatch {
                expected: start as u64,
                actual: bytes.len() as u64,
            });
        }
        let header: Header =
            serde_json::from_slice(&bytes[10..start]).map_err(|e| Error::Config(format!("checkpoint header: {e}")))?;
        let n = header.n_params as usize;
        let n_vec = if header.adam_step.is_some() { 3 } else { 1 };
        let expected = start + 8 * n * n_vec;
        if bytes.len() != expected {
            return Err(Error::PayloadLengthMismatch {
                expected: expected as u64,
                actual: bytes.len() as u64,
            });
        }
        let mut cur = Cursor::new(&bytes[start..]);
        let mut take = || -> Vec<f64> { (0..n).map(|_| cur.read_f64::<LittleEndian>().unwrap()).collect() };
        let params = take();
        let adam = header.adam_step.map(|step| {
            let m = take();
            let v = take();
            AdamState { m, v, step }
        });
        Ok(Checkpoint {
            tool: header.tool,
            config_hash: header.config_hash,
            label: header.label,
            step: header.step,
            model: header.model,
            params,
            adam,
            rng: header.rng,
        })
    }

    pub fn save(&self, path: &Path) -> Result<String> {
        crate::io::ensure_parent(path)?;
        let bytes = self.to_bytes();
        std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
        Ok(crate::io::sha256_hex(&bytes))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// SHA-256 of the serialized checkpoint.
    pub fn hash(&self) -> String {
        crate::io::sha256_hex(&self.to_bytes())
    }
}
