use std::io::Write;
use std::path::{Path, PathBuf};

use super::{generate_sequence, SceneConfig, World};
use crate::adt::sequence_to_angle_delay;
use crate::downstream::VelocityBins;
use crate::error::{Error, Result};
use crate::io::{DatasetHeader, DatasetWriter};

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRow {
    pub index: usize,
    pub speed: f64,
    pub velocity: [f64; 2],
    pub bin: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct DatasetSummary {
    pub dataset: PathBuf,
    pub manifest: PathBuf,
    pub rows: Vec<ManifestRow>,
}

pub fn manifest_path(dataset: &Path) -> PathBuf {
    let mut s = dataset.as_os_str().to_owned();
    s.push(".manifest.csv");
    PathBuf::from(s)
}

/// Generate `n` sequences of angle-delay frames truncated to `w_taps` and
/// write them, plus a per-sequence velocity manifest.
///
/// `seed` selects the scene ("city") and the actors; sequence `i` draws
/// from its own sub-stream so the output does not depend on `n`.
pub fn generate_dataset(
    n: usize,
    cfg: &SceneConfig,
    w_taps: usize,
    seed: u64,
    out: &Path,
    config_hash: &str,
) -> Result<DatasetSummary> {
    let world = World::build(cfg, seed)?;
    if w_taps == 0 || w_taps > cfg.n_subcarriers {
        return Err(Error::invalid(format!("W = {w_taps} outside [1, {}]", cfg.n_subcarriers)));
    }
    let header = DatasetHeader {
        t: cfg.frames as u32,
        n: cfg.n_antennas as u32,
        m: cfg.n_subcarriers as u32,
        h: cfg.n_antennas as u32,
        w: w_taps as u32,
        fc: cfg.fc,
        dt: cfg.dt,
        n_sequences: n as u64,
    };
    let bins = VelocityBins::default();
    let mut writer = DatasetWriter::create(out, header)?;
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let seq_seed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (i as u64).wrapping_add(1);
        let seq = generate_sequence(&world, cfg.speed_range, cfg.frames, cfg.dt, seq_seed)?;
        let ad = sequence_to_angle_delay(&seq, w_taps)?;
        writer.push(ad.meta.velocity, &ad.frames)?;
        let speed = seq.speed();
        rows.push(ManifestRow {
            index: i,
            speed,
            velocity: seq.velocity,
            bin: bins.bin_of(speed),
        });
    }
    writer.finish()?;

    let manifest = manifest_path(out);
    let mut text = String::new();
    text.push_str(&format!("# tool={}\n# config_hash={config_hash}\n# seed={seed}\n", crate::TOOL_VERSION));
    text.push_str("index,speed,vx,vy,bin\n");
    for r in &rows {
        let bin = r.bin.map(|b| bins.label(b)).unwrap_or_else(|| "none".into());
        text.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{}\n",
            r.index, r.speed, r.velocity[0], r.velocity[1], bin
        ));
    }
    let mut f = std::fs::File::create(&manifest).map_err(|e| Error::io(&manifest, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(&manifest, e))?;

    Ok(DatasetSummary {
        dataset: out.to_path_buf(),
        manifest,
        rows,
    })
}
