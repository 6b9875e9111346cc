use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng as _;

use super::{augment_pair, lr_at, optimizer_step, AdamState, Checkpoint, CheckpointRng};
use crate::adt::{rms_normalize, AdSequence};
use crate::attention::AttentionMode;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::masking::{curriculum_rho, generate_mask, sample_mode, GridDims, MaskMode};
use crate::model::{compute_gradients, nmse_loss, patchify, AttentionContext, ModelState, ReconstructionExample};
use crate::rng::{substream, RngState};

/// One metrics-log row.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub loss: f64,
    pub rho: f64,
    pub lr: f64,
    pub mode: MaskMode,
}

impl LogRow {
    fn line(&self) -> String {
        format!("{},{:.17e},{:.6},{:.17e},{}", self.step, self.loss, self.rho, self.lr, self.mode.name())
    }
}

#[derive(Clone, Debug)]
pub struct PretrainSummary {
    pub state: ModelState,
    pub checkpoint: PathBuf,
    /// SHA-256 of the final checkpoint file.
    pub checkpoint_hash: String,
    pub log: PathBuf,
    /// Rows produced by this invocation (not earlier runs being resumed).
    pub rows: Vec<LogRow>,
}

/// RMS-normalize each sequence and keep its first `max_frames` frames
/// (all when 0).
pub fn prepare_sequences(seqs: &[AdSequence], max_frames: usize) -> Result<Vec<AdSequence>> {
    seqs.iter()
        .map(|s| {
            let s = if max_frames > 0 && s.frames.len() > max_frames { s.slice(max_frames) } else { s.clone() };
            rms_normalize(&s)
        })
        .collect()
}

fn token_dims(seqs: &[AdSequence], cfg: &Config) -> Result<GridDims> {
    let first = seqs.first().ok_or_else(|| Error::invalid("empty dataset"))?;
    let (t, h, w) = first.dims();
    if seqs.iter().any(|s| s.dims() != (t, h, w)) {
        return Err(Error::shape("sequences differ in shape"));
    }
    cfg.model.token_dims(t, h, w)
}

const LOG_HEADER: &str = "step,loss,rho,lr,mode";

fn open_log(path: &Path, config_hash: &str, keep_below: Option<usize>) -> Result<std::fs::File> {
    let mut text = String::new();
    match keep_below {
        Some(limit) if path.exists() => {
            let old = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            for line in old.lines() {
                let step = line.split(',').next().and_then(|s| s.parse::<usize>().ok());
                if step.is_none_or(|s| s < limit) {
                    text.push_str(line);
                    text.push('\n');
                }
            }
        }
        _ => {
            let _ = writeln!(text, "# tool={}\n# config_hash={config_hash}\n{LOG_HEADER}", crate::TOOL_VERSION);
        }
    }
    crate::io::ensure_parent(path)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
    Ok(f)
}

/// Masked-reconstruction pretraining.
///
/// `data` is raw (unnormalized) sequences; normalization happens here.
/// Writes `metrics.csv`, `checkpoint-<step>.ckpt` files and `last.ckpt`
/// into `out_dir`. With `resume`, training continues from that checkpoint
/// and reproduces the uninterrupted run exactly.
pub fn pretrain(data: &[AdSequence], cfg: &Config, out_dir: &Path, resume: Option<&Path>) -> Result<PretrainSummary> {
    cfg.validate()?;
    let tc = &cfg.train;
    let config_hash = cfg.hash();
    let seqs = prepare_sequences(data, tc.max_frames)?;
    let dims = token_dims(&seqs, cfg)?;
    let ctx = AttentionContext::new(dims, &cfg.attention, AttentionMode::Bidirectional, &cfg.model)?;

    let (mut state, mut adam, mut data_rng, mut mask_rng, mut aug_rng, start) = match resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            if ck.config_hash != config_hash {
                return Err(Error::Config(format!(
                    "checkpoint config hash {} does not match {}",
                    ck.config_hash, config_hash
                )));
            }
            let rng = ck.rng.ok_or_else(|| Error::invalid("checkpoint has no RNG state; not resumable"))?;
            let state = ck.state()?;
            let adam = ck.adam.clone().unwrap_or_else(|| AdamState::new(state.params.len()));
            (state, adam, rng.data.restore(), rng.mask.restore(), rng.augment.restore(), ck.step as usize)
        }
        None => {
            let mut init_rng = substream(tc.seed, "init", 0);
            let state = ModelState::init(&cfg.model, &mut init_rng)?;
            let adam = AdamState::new(state.params.len());
            (
                state,
                adam,
                substream(tc.seed, "data", 0),
                substream(tc.seed, "mask", 0),
                substream(tc.seed, "augment", 0),
                0,
            )
        }
    };

    let log_path = out_dir.join("metrics.csv");
    let mut log = open_log(&log_path, &config_hash, resume.map(|_| start))?;
    let save = |state: &ModelState, adam: &AdamState, rngs: CheckpointRng, step: usize| -> Result<(PathBuf, String)> {
        let mut ck = Checkpoint::new(state, &config_hash, "pretrain", step as u64);
        ck.adam = Some(adam.clone());
        ck.rng = Some(rngs);
        let path = out_dir.join(format!("checkpoint-{step:06}.ckpt"));
        ck.save(&path)?;
        let hash = ck.save(&out_dir.join("last.ckpt"))?;
        Ok((path, hash))
    };

    let mut rows = Vec::new();
    let p = cfg.model.patch_len();
    let mut last = None;
    for step in start..tc.total_steps {
        let rho = curriculum_rho(step, tc.total_steps, &cfg.mask.curriculum);
        let mode = sample_mode(&mut mask_rng, &cfg.mask.mix_weights)?;
        let mut batch = Vec::with_capacity(tc.batch_size);
        for _ in 0..tc.batch_size {
            let idx = data_rng.random_range(0..seqs.len());
            let (input, target) = augment_pair(&seqs[idx], &mut aug_rng, &tc.augment);
            let mask = generate_mask(mode, dims, rho, &mut mask_rng, &cfg.mask)?;
            let (_, input) = patchify(&input.frames, cfg.model.patch)?;
            let (_, target) = patchify(&target.frames, cfg.model.patch)?;
            debug_assert_eq!(input.len(), dims.len() * p);
            batch.push(ReconstructionExample {
                dims,
                input,
                target,
                mask: mask.bits,
            });
        }
        let (loss, grads) = compute_gradients(&state, &batch, &ctx).map_err(|e| match e {
            Error::NonFinite { batch } => {
                log::error!("non-finite loss at step {step}, batch item {batch}");
                Error::NonFinite { batch }
            }
            other => other,
        })?;
        let lr = lr_at(step + 1, tc);
        optimizer_step(&mut state, &grads, &mut adam, tc, lr, &[]);
        if !state.is_finite() {
            return Err(Error::NonFinite { batch: 0 });
        }
        let row = LogRow { step, loss, rho, lr, mode };
        writeln!(log, "{}", row.line()).map_err(|e| Error::io(&log_path, e))?;
        log::debug!("{}", row.line());
        rows.push(row);

        let done = step + 1;
        if tc.checkpoint_every > 0 && done % tc.checkpoint_every == 0 && done < tc.total_steps {
            save(&state, &adam, rng_states(&data_rng, &mask_rng, &aug_rng), done)?;
        }
        last = Some(done);
    }
    let final_step = last.unwrap_or(start);
    let (checkpoint, checkpoint_hash) = save(&state, &adam, rng_states(&data_rng, &mask_rng, &aug_rng), final_step)?;
    Ok(PretrainSummary {
        state,
        checkpoint,
        checkpoint_hash,
        log: log_path,
        rows,
    })
}

fn rng_states(data: &crate::rng::Rng, mask: &crate::rng::Rng, aug: &crate::rng::Rng) -> CheckpointRng {
    CheckpointRng {
        data: RngState::capture(data),
        mask: RngState::capture(mask),
        augment: RngState::capture(aug),
    }
}

/// Mean masked NMSE over `seqs` (already normalized) with masks drawn
/// from a fixed stream, no augmentation.
pub fn evaluate_reconstruction(state: &ModelState, seqs: &[AdSequence], cfg: &Config, rho: f64, seed: u64) -> Result<f64> {
    let dims = token_dims(seqs, cfg)?;
    let ctx = AttentionContext::new(dims, &cfg.attention, AttentionMode::Bidirectional, &cfg.model)?;
    let mut rng = substream(seed, "eval-mask", 0);
    let p = cfg.model.patch_len();
    let mut total = 0.0;
    for s in seqs {
        let mode = sample_mode(&mut rng, &cfg.mask.mix_weights)?;
        let mask = generate_mask(mode, dims, rho, &mut rng, &cfg.mask)?;
        let (_, x) = patchify(&s.frames, cfg.model.patch)?;
        let grid = crate::model::tokenize(s, state)?;
        let grid = crate::model::apply_mask_embedding(&grid, &mask, state)?;
        let (out, _) = crate::model::backbone_forward(&grid, state, &ctx)?;
        let pred = crate::model::reconstruction_head(&out, state)?;
        let (_, pred) = patchify(&pred, cfg.model.patch)?;
        total += nmse_loss(&pred, &x, p, &mask.masked_indices(), cfg.model.nmse_eps)?;
    }
    Ok(total / seqs.len() as f64)
}
