use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use tgmr_core::config::TrainMode;
use tgmr_core::Config;

#[derive(Debug, Parser)]
#[command(name = "tgmr", version, about = "Multi-future trajectory prediction on grid-world scenes")]
pub struct Cli {
    /// Worker threads for prediction and evaluation (training is single-threaded).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic scenes.
    GenData(GenDataArgs),
    /// Train a model and checkpoint it every epoch.
    Train(TrainArgs),
    /// Decode K trajectories per sample.
    Predict(PredictArgs),
    /// Score predictions against a dataset.
    Eval(EvalArgs),
    /// Train and evaluate every ablation row with a shared seed.
    Ablate(AblateArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenDataArgs {
    /// A layout name, or `desk` for the default train/eval split.
    #[arg(long, default_value = "desk")]
    pub template: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Samples to generate (training samples for `desk`).
    #[arg(long)]
    pub n: Option<usize>,
    /// Evaluation samples for `desk`.
    #[arg(long, default_value_t = 50)]
    pub n_eval: usize,
    /// Ground-truth futures per sample for a single layout.
    #[arg(long, default_value_t = 1)]
    pub futures: usize,
    #[arg(long)]
    pub out: PathBuf,
}

/// Config file plus flag overrides shared by `train` and `ablate`.
#[derive(Debug, Clone, Args, Serialize, Default)]
pub struct ConfigArgs {
    /// JSON config; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Regression-loss time scale; `inf` disables the exponential weighting.
    #[arg(long, value_parser = parse_mu)]
    pub mu: Option<MuArg>,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<TrainMode>,
    #[arg(long)]
    pub no_memory_replay: bool,
    #[arg(long)]
    pub no_location_encoder: bool,
    /// Keep only the finest grid.
    #[arg(long)]
    pub single_scale: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MuArg(pub Option<f64>);

fn parse_mu(s: &str) -> Result<MuArg, String> {
    match s {
        "inf" | "+inf" | "infinity" | "none" => Ok(MuArg(None)),
        _ => s
            .parse::<f64>()
            .map_err(|e| format!("`{s}` is not a number or `inf`: {e}"))
            .map(|v| MuArg(if v.is_infinite() { None } else { Some(v) })),
    }
}

fn parse_mode(s: &str) -> Result<TrainMode, String> {
    match s {
        "single-future" => Ok(TrainMode::SingleFuture),
        "multi-future" => Ok(TrainMode::MultiFuture),
        _ => Err(format!("unknown mode `{s}` (single-future or multi-future)")),
    }
}

impl ConfigArgs {
    pub fn resolve(&self) -> anyhow::Result<Config> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| tgmr_core::Error::Dataset {
                    location: p.display().to_string(),
                    msg: e.to_string(),
                })?;
                Config::from_json(&text)?
            }
            None => Config::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        if let Some(lr) = self.learning_rate {
            cfg.train.learning_rate = lr;
        }
        if let Some(MuArg(mu)) = self.mu {
            cfg.loss.mu = mu;
        }
        if let Some(m) = self.mode {
            cfg.train.mode = m;
        }
        if self.no_memory_replay {
            cfg.model.use_memory_replay = false;
        }
        if self.no_location_encoder {
            cfg.model.use_location_encoder = false;
        }
        if self.single_scale {
            cfg.model.scales.truncate(1);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    /// Scene file or directory of scene files.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Continue from the state saved in `--out`.
    #[arg(long)]
    pub resume: bool,
    /// Keep a numbered checkpoint every N epochs; the latest model is
    /// always written.
    #[arg(long, default_value_t = 1)]
    pub checkpoint_every: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PredictArgs {
    /// Training output directory (its run.json and final checkpoint).
    #[arg(long)]
    pub run: PathBuf,
    /// Use this checkpoint instead of the run's final one.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Predictions per sample (default from the run's config).
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub diversity_rate: Option<f64>,
    /// Also write one SVG heatmap per sample.
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    /// `predictions.jsonl` written by `predict`.
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AblateArgs {
    /// Training scenes.
    #[arg(long)]
    pub data: PathBuf,
    /// Evaluation scenes.
    #[arg(long)]
    pub eval_data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Comma-separated subset of rows (default: all).
    #[arg(long, value_delimiter = ',')]
    pub rows: Vec<String>,
    #[arg(long)]
    pub k: Option<usize>,
}
