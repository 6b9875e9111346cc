use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chanformer::config::Config;
use chanformer::downstream::{
    bench_attention, check_complexity, evaluate, finetune_predictor, prediction_samples, predictor_context,
    sample_and_hold, Method, PredictionSample,
};
use chanformer::io::read_dataset;
use chanformer::model::{patchify, predict_next, FinetuneMode};
use chanformer::scene::generate_dataset;
use chanformer::train::{pretrain, Checkpoint};
use chanformer::{Error, TOOL_VERSION};
use clap::{Args, Parser, Subcommand};

const EXIT_USAGE: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(name = "chanformer", version, about = "Angle-delay-time channel foundation model toolkit")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed override for the command's random streams.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Accepted for scripts; every command is already single-threaded and
    /// bit-reproducible.
    #[arg(long, global = true)]
    deterministic: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate channel sequences and write a dataset plus manifest.
    Generate {
        #[arg(long)]
        out: PathBuf,
        /// Number of sequences.
        #[arg(long, default_value_t = 100)]
        n: usize,
        /// Frames per sequence (overrides scene.frames).
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Masked-reconstruction pretraining.
    Pretrain {
        #[arg(long)]
        dataset: PathBuf,
        /// Output directory for checkpoints and metrics.csv.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Overrides train.total_steps; 0 writes the initial checkpoint.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Fine-tune a pretrained checkpoint for next-frame prediction.
    Finetune {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Training split.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated percentages of the training split.
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
        /// Comma-separated subset of frozen,full.
        #[arg(long, value_delimiter = ',')]
        modes: Option<Vec<String>>,
    },
    /// Score fine-tuned checkpoints and sample-and-hold on a test split.
    Eval {
        /// Fine-tuned checkpoint; repeat for several.
        #[arg(long, required = true)]
        checkpoint: Vec<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        /// Report path stem; writes <stem>.csv and <stem>.json.
        #[arg(long)]
        out: PathBuf,
        /// Keep only checkpoints fine-tuned on these percentages.
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
    },
    /// Count attention score evaluations for dense, SSTA and routed SSTA.
    BenchAttn {
        /// Comma-separated frame counts (overrides eval.bench_frames).
        #[arg(long, value_delimiter = ',')]
        frames: Option<Vec<usize>>,
        /// Also write the table as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::NonFinite { .. } => EXIT_NUMERIC,
                e if e.is_validation() => EXIT_VALIDATION,
                _ => EXIT_USAGE,
            })
        }
    }
}

fn load_config(common: &Common) -> chanformer::Result<Config> {
    let cfg = match &common.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> chanformer::Result<()> {
    let mut cfg = load_config(&cli.common)?;
    if cli.common.deterministic {
        log::debug!("--deterministic: runs are reproducible by construction");
    }
    let seed = cli.common.seed;
    match cli.command {
        Command::Generate { out, n, frames } => {
            if let Some(t) = frames {
                cfg.scene.frames = t;
            }
            cfg.validate()?;
            let seed = seed.unwrap_or(0);
            let summary = generate_dataset(n, &cfg.scene, cfg.adt.delay_taps, seed, &out, &cfg.hash())?;
            log::info!(
                "wrote {} sequences to {} (manifest {})",
                summary.rows.len(),
                out.display(),
                summary.manifest.display()
            );
        }
        Command::Pretrain { dataset, out, resume, steps } => {
            if let Some(s) = steps {
                cfg.train.total_steps = s;
            }
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            cfg.validate()?;
            let data = read_dataset(&dataset)?.sequences;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            std::fs::write(out.join("config.toml"), cfg.to_toml()).map_err(|e| Error::io(&out, e))?;
            let summary = pretrain(&data, &cfg, &out, resume.as_deref())?;
            if let Some(last) = summary.rows.last() {
                log::info!("step {} loss {:.4e}", last.step, last.loss);
            }
            println!("{}  {}", summary.checkpoint_hash, summary.checkpoint.display());
        }
        Command::Finetune {
            checkpoint,
            dataset,
            out,
            fractions,
            modes,
        } => {
            if let Some(f) = fractions {
                cfg.eval.fractions = percent_to_fraction(&f)?;
            }
            if let Some(m) = modes {
                cfg.eval.modes = m.iter().map(|s| parse_mode(s)).collect::<chanformer::Result<_>>()?;
            }
            if let Some(s) = seed {
                cfg.eval.seed = s;
            }
            cfg.validate()?;
            cmd_finetune(&cfg, &checkpoint, &dataset, &out)?;
        }
        Command::Eval {
            checkpoint,
            dataset,
            out,
            fractions,
        } => {
            let keep = fractions.map(|f| percent_to_fraction(&f)).transpose()?;
            cmd_eval(&cfg, &checkpoint, &dataset, &out, keep.as_deref())?;
        }
        Command::BenchAttn { frames, out } => {
            let frames = frames.unwrap_or_else(|| cfg.eval.bench_frames.clone());
            let rows = bench_attention(
                &frames,
                cfg.scene.n_antennas / cfg.model.patch[0],
                cfg.adt.delay_taps / cfg.model.patch[1],
                &cfg.attention,
                &cfg.model,
                cfg.eval.bench_dense_max_tokens,
                seed.unwrap_or(0),
            )?;
            let mut csv = format!("# tool={TOOL_VERSION}\n# config_hash={}\n", cfg.hash());
            csv.push_str("method,frames,tokens,score_evals,score_evals_without_hub,aggregated,analytic_scores,analytic_aggregated,dense_ratio,dense_ratio_aggregated,wall_ms\n");
            for r in &rows {
                let wall = r.wall_ms.map(|w| format!("{w:.3}")).unwrap_or_default();
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{},{},{},{:.3},{:.3},{}",
                    r.method,
                    r.frames,
                    r.tokens,
                    r.score_evals,
                    r.score_evals_without_hub,
                    r.aggregated,
                    r.analytic_scores,
                    r.analytic_aggregated,
                    r.dense_ratio,
                    r.dense_ratio_aggregated,
                    wall
                );
            }
            print!("{csv}");
            if let Some(path) = out {
                std::fs::write(&path, &csv).map_err(|e| Error::io(&path, e))?;
            }
            check_complexity(&rows, 10.0)?;
        }
    }
    Ok(())
}

fn percent_to_fraction(pct: &[f64]) -> chanformer::Result<Vec<f64>> {
    pct.iter()
        .map(|&p| {
            if (0.0..=100.0).contains(&p) {
                Ok(p / 100.0)
            } else {
                Err(Error::invalid(format!("fraction {p}% outside [0, 100]")))
            }
        })
        .collect()
}

fn parse_mode(s: &str) -> chanformer::Result<FinetuneMode> {
    match s {
        "frozen" => Ok(FinetuneMode::Frozen),
        "full" => Ok(FinetuneMode::Full),
        other => Err(Error::invalid(format!("unknown mode {other:?}; expected frozen or full"))),
    }
}

fn mode_name(m: FinetuneMode) -> &'static str {
    match m {
        FinetuneMode::Frozen => "frozen",
        FinetuneMode::Full => "full",
    }
}

fn finetune_label(mode: FinetuneMode, fraction: f64) -> String {
    format!("finetune:{}:{fraction}", mode_name(mode))
}

fn parse_label(label: &str) -> Option<(FinetuneMode, f64)> {
    let mut parts = label.split(':');
    if parts.next()? != "finetune" {
        return None;
    }
    let mode = parse_mode(parts.next()?).ok()?;
    let fraction = parts.next()?.parse().ok()?;
    Some((mode, fraction))
}

/// Pretrained weights with the model section of the checkpoint taking
/// precedence over the config file.
fn load_model(cfg: &mut Config, path: &Path) -> chanformer::Result<(Checkpoint, chanformer::model::ModelState)> {
    let ck = Checkpoint::load(path)?;
    if ck.model != cfg.model {
        log::warn!("{}: model section differs from config; using the checkpoint's", path.display());
        cfg.model = ck.model.clone();
    }
    let state = ck.state()?;
    Ok((ck, state))
}

fn cmd_finetune(cfg: &Config, checkpoint: &Path, dataset: &Path, out: &Path) -> chanformer::Result<()> {
    let mut cfg = cfg.clone();
    let (_, base) = load_model(&mut cfg, checkpoint)?;
    let data = read_dataset(dataset)?.sequences;
    let train = prediction_samples(&data, cfg.eval.past_frames, cfg.model.patch)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let hash = cfg.hash();
    let mut summary = format!("# tool={TOOL_VERSION}\n# config_hash={hash}\nmode,fraction,n_train,first_loss,last_loss,checkpoint\n");
    for &mode in &cfg.eval.modes {
        for &fraction in &cfg.eval.fractions {
            let outcome = finetune_predictor(&base, &train, fraction, mode, &cfg)?;
            let name = format!("finetune-{}-{}.ckpt", mode_name(mode), fraction * 100.0);
            let ck = Checkpoint::new(&outcome.state, &hash, &finetune_label(mode, fraction), outcome.losses.len() as u64);
            let path = out.join(&name);
            ck.save(&path)?;
            let first = outcome.losses.first().copied().unwrap_or(f64::NAN);
            let last = outcome.losses.last().copied().unwrap_or(f64::NAN);
            log::info!("{name}: {} samples, loss {first:.4e} -> {last:.4e}", outcome.n_train);
            let _ = writeln!(summary, "{},{fraction},{},{first:.6e},{last:.6e},{name}", mode_name(mode), outcome.n_train);
        }
    }
    let path = out.join("finetune.csv");
    std::fs::write(&path, summary).map_err(|e| Error::io(&path, e))
}

fn cmd_eval(cfg: &Config, checkpoints: &[PathBuf], dataset: &Path, out: &Path, keep: Option<&[f64]>) -> chanformer::Result<()> {
    let mut cfg = cfg.clone();
    let mut models = Vec::new();
    for path in checkpoints {
        let (ck, state) = load_model(&mut cfg, path)?;
        let (mode, fraction) = match parse_label(&ck.label) {
            Some(mf) => mf,
            None => {
                return Err(Error::invalid(format!(
                    "{}: label {:?} is not a fine-tuned checkpoint",
                    path.display(),
                    ck.label
                )))
            }
        };
        if keep.is_some_and(|k| !k.iter().any(|f| (f - fraction).abs() < 1e-12)) {
            continue;
        }
        models.push((mode, fraction, state));
    }
    let data = read_dataset(dataset)?.sequences;
    let test = prediction_samples(&data, cfg.eval.past_frames, cfg.model.patch)?;
    let first = test.first().ok_or_else(|| Error::invalid("empty test set"))?;
    let ctx = predictor_context(first.example.dims, &cfg)?;
    let patch = cfg.model.patch;
    let mut methods = vec![Method {
        name: "S&H".into(),
        mode: None,
        fraction: None,
        predict: Box::new(move |s: &PredictionSample| Ok(patchify(&[sample_and_hold(&s.past)?], patch)?.1)),
    }];
    for (mode, fraction, state) in &models {
        let ctx = &ctx;
        methods.push(Method {
            name: format!("{}-{}%", mode_name(*mode), fraction * 100.0),
            mode: Some(mode_name(*mode).into()),
            fraction: Some(*fraction),
            predict: Box::new(move |s: &PredictionSample| Ok(patchify(&[predict_next(state, &s.past, ctx)?], patch)?.1)),
        });
    }
    let report = evaluate(&methods, &test, &cfg.eval.bins(), cfg.eval.nmse_floor_db, &cfg.hash())?;
    report.write(out)?;
    print!("{}", report.to_csv());
    Ok(())
}
