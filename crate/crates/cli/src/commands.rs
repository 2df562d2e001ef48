use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tgmr_core::dataset;
use tgmr_core::decoder::predict as decode;
use tgmr_core::metrics::{evaluate_sample, MetricsReport, SampleMetrics};
use tgmr_core::scene::{Point, TrajectorySample};
use tgmr_core::synthetic::{desk_preset_sized, generate, GenOptions, Layout, ScenarioTemplate};
use tgmr_core::training::{load_checkpoint, save_checkpoint, train_epoch, TrainState};
use tgmr_core::{Config, Error, Model};

use crate::args::{EvalArgs, GenDataArgs, PredictArgs, TrainArgs};
use crate::run_info::RunInfo;
use crate::svg;

pub const MODEL_FILE: &str = "model.tgmr";
pub const STATE_FILE: &str = "train_state.json";
pub const LOSS_FILE: &str = "loss.csv";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";

pub fn gen_data(a: &GenDataArgs) -> anyhow::Result<()> {
    let opts = GenOptions::default();
    let files = if a.template == "desk" {
        let n = a.n.unwrap_or(200);
        desk_preset_sized(a.seed, n, a.n_eval, &Layout::ALL, &opts)?
            .into_iter()
            .map(|f| (a.out.join(f.split), f.scene))
            .collect::<Vec<_>>()
    } else {
        let t = ScenarioTemplate::new(Layout::parse(&a.template)?, a.futures);
        vec![(a.out.clone(), generate(&t, a.seed, a.n.unwrap_or(100), &opts)?)]
    };
    for (dir, scene) in &files {
        let path = dir.join(format!("{}.json", scene.scene_id));
        scene.save(&path)?;
        info!("wrote {} ({} samples)", path.display(), scene.samples.len());
    }
    RunInfo::new("gen-data", a.seed, None, a)?.write(&a.out)
}

pub fn load_data(path: &Path) -> anyhow::Result<Vec<TrajectorySample>> {
    let data = dataset::load(path)?;
    if data.is_empty() {
        return Err(Error::Empty("dataset").into());
    }
    Ok(data)
}

#[derive(Debug, Serialize)]
struct LossRow {
    epoch: usize,
    learning_rate: f64,
    mean_loss: f64,
}

fn write_loss_csv(path: &Path, state: &TrainState) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for (e, &l) in state.epoch_losses.iter().enumerate() {
        w.serialize(LossRow {
            epoch: e + 1,
            learning_rate: state.learning_rate * state.lr_decay_per_epoch.powi(e as i32),
            mean_loss: l,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn checkpoint_path(out: &Path, epoch: usize) -> PathBuf {
    out.join("checkpoints").join(format!("epoch-{epoch:04}.tgmr"))
}

/// Where and how often [`train_model`] writes its artifacts.
#[derive(Clone, Copy, Debug)]
pub struct TrainOutput<'a> {
    pub dir: &'a Path,
    /// Keep `checkpoints/epoch-NNNN.tgmr` every this many epochs (and after
    /// the last one).
    pub checkpoint_every: usize,
    /// Continue from the state found in `dir`.
    pub resume: bool,
}

/// Trains for the configured number of epochs. With an output, the latest
/// model, the loss curve and the resumable state are written after every
/// epoch.
pub fn train_model(cfg: &Config, data: &[TrajectorySample], out: Option<TrainOutput>) -> anyhow::Result<(Model, TrainState)> {
    let mut model = Model::new(&cfg.model, cfg.seed)?;
    for s in data {
        model.check_sample(s)?;
    }
    let mut state = TrainState::new(cfg);
    if let Some(TrainOutput { dir, resume: true, .. }) = out {
        let sp = dir.join(STATE_FILE);
        if sp.exists() {
            state = TrainState::load(&sp)?;
            let fresh = TrainState::new(cfg);
            if (state.seed, state.learning_rate, state.lr_decay_per_epoch, state.weight_decay)
                != (fresh.seed, fresh.learning_rate, fresh.lr_decay_per_epoch, fresh.weight_decay)
            {
                return Err(Error::Config(format!("{} was written with a different config", sp.display())).into());
            }
            if state.epoch > 0 {
                load_checkpoint(&mut model, &dir.join(MODEL_FILE))?;
            }
            info!("resuming after epoch {}", state.epoch);
        }
    }
    while state.epoch < cfg.train.epochs {
        let lr = state.current_lr();
        let loss = train_epoch(&mut model, data, &mut state, cfg)?;
        info!("epoch {}/{}: lr {lr:.5} loss {loss:.5}", state.epoch, cfg.train.epochs);
        if let Some(o) = out {
            if state.epoch % o.checkpoint_every.max(1) == 0 || state.epoch == cfg.train.epochs {
                let ck = checkpoint_path(o.dir, state.epoch);
                std::fs::create_dir_all(ck.parent().expect("checkpoint path has a parent"))?;
                save_checkpoint(&model, &ck)?;
            }
            // the state goes last: it names the epoch the model file holds
            save_checkpoint(&model, &o.dir.join(MODEL_FILE))?;
            write_loss_csv(&o.dir.join(LOSS_FILE), &state)?;
            state.save(&o.dir.join(STATE_FILE))?;
        }
    }
    Ok((model, state))
}

pub fn train(a: &TrainArgs) -> anyhow::Result<(Model, TrainState)> {
    let cfg = a.config.resolve()?;
    let data = load_data(&a.data)?;
    let info = RunInfo::new("train", cfg.seed, Some(cfg.clone()), a)?;
    if a.resume {
        if let Ok(prev) = RunInfo::read(&a.out) {
            let (mut p, mut c) = (prev.config.clone().unwrap_or_default(), cfg.clone());
            p.train.epochs = 0;
            c.train.epochs = 0;
            if p != c {
                return Err(Error::Config("resumed run must use the same config (only epochs may change)".into()).into());
            }
        }
    }
    info.write(&a.out)?;
    info!("training on {} samples", data.len());
    if a.checkpoint_every == 0 {
        return Err(Error::Config("--checkpoint-every must be at least 1".into()).into());
    }
    train_model(
        &cfg,
        &data,
        Some(TrainOutput {
            dir: &a.out,
            checkpoint_every: a.checkpoint_every,
            resume: a.resume,
        }),
    )
}

/// One line of `predictions.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub sample_id: String,
    pub scene_id: String,
    pub seed: u64,
    #[serde(rename = "K")]
    pub k: usize,
    pub trajectories: Vec<Vec<Point>>,
    pub scores: Vec<f64>,
    pub nodes: Vec<Vec<usize>>,
}

pub fn predict_samples(model: &Model, seed: u64, data: &[TrajectorySample], k: usize, rate: f64) -> anyhow::Result<Vec<(PredictionRecord, Vec<Vec<f64>>)>> {
    data.par_iter()
        .map(|s| {
            let p = decode(model, s, k, rate)?;
            Ok((
                PredictionRecord {
                    sample_id: s.id.clone(),
                    scene_id: s.scene_id.clone(),
                    seed,
                    k: p.k(),
                    trajectories: p.trajectories,
                    scores: p.scores,
                    nodes: p.nodes,
                },
                p.step_probs,
            ))
        })
        .collect()
}

pub fn load_run_model(run: &Path, checkpoint: Option<&Path>) -> anyhow::Result<(RunInfo, Model)> {
    let info = RunInfo::read(run)?;
    let cfg = info
        .config
        .clone()
        .ok_or_else(|| Error::Config(format!("{} has no model config", run.display())))?;
    let mut model = Model::new(&cfg.model, cfg.seed)?;
    let ck = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| run.join(MODEL_FILE));
    load_checkpoint(&mut model, &ck)?;
    Ok((info, model))
}

pub fn predict(a: &PredictArgs) -> anyhow::Result<()> {
    let (info, model) = load_run_model(&a.run, a.checkpoint.as_deref())?;
    let cfg = info.config.clone().expect("checked by load_run_model");
    let k = a.k.unwrap_or(cfg.decode.k);
    let rate = a.diversity_rate.unwrap_or(cfg.decode.diversity_rate);
    let data = load_data(&a.data)?;
    let mut resolved = cfg.clone();
    resolved.decode.k = k;
    resolved.decode.diversity_rate = rate;
    resolved.validate()?;
    RunInfo::new("predict", cfg.seed, Some(resolved), a)?.write(&a.out)?;
    let preds = predict_samples(&model, cfg.seed, &data, k, rate)?;
    let mut lines = String::new();
    for (p, _) in &preds {
        lines += &serde_json::to_string(p)?;
        lines.push('\n');
    }
    std::fs::write(a.out.join(PREDICTIONS_FILE), lines)?;
    if a.svg {
        let dir = a.out.join("svg");
        std::fs::create_dir_all(&dir)?;
        for (s, (p, probs)) in data.iter().zip(&preds) {
            let doc = svg::render(&model.finest().scene.spec, s, &p.trajectories, probs);
            std::fs::write(dir.join(format!("{}.svg", s.id)), doc)?;
        }
    }
    info!("wrote {} predictions (K = {k})", preds.len());
    Ok(())
}

pub fn read_predictions(path: &Path) -> anyhow::Result<Vec<PredictionRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Dataset {
        location: path.display().to_string(),
        msg: e.to_string(),
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| {
                Error::Dataset {
                    location: format!("{}:{}", path.display(), i + 1),
                    msg: e.to_string(),
                }
                .into()
            })
        })
        .collect()
}

/// Scores each sample's predictions; every dataset sample must have some.
pub fn evaluate(preds: &[PredictionRecord], data: &[TrajectorySample]) -> anyhow::Result<(Vec<SampleMetrics>, MetricsReport)> {
    let by_id: std::collections::HashMap<&str, &PredictionRecord> = preds.iter().map(|p| (p.sample_id.as_str(), p)).collect();
    let missing: Vec<String> = data.iter().filter(|s| !by_id.contains_key(s.id.as_str())).map(|s| s.id.clone()).collect();
    if !missing.is_empty() {
        return Err(Error::MissingIds(missing).into());
    }
    let rows = data
        .par_iter()
        .map(|s| evaluate_sample(&s.id, &by_id[s.id.as_str()].trajectories, &s.futures).map_err(anyhow::Error::from))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let report = MetricsReport::from_samples(&rows)?;
    Ok((rows, report))
}

pub fn eval(a: &EvalArgs) -> anyhow::Result<MetricsReport> {
    let preds = read_predictions(&a.predictions)?;
    let data = load_data(&a.data)?;
    let seed = preds.first().map_or(0, |p| p.seed);
    let (rows, report) = evaluate(&preds, &data)?;
    RunInfo::new("eval", seed, None, a)?.write(&a.out)?;
    let mut w = csv::Writer::from_path(a.out.join("metrics.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    std::fs::write(a.out.join("metrics.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    info!(
        "minADE_K {:.3} minFDE_K {:.3} PTU {:.3}/{:.3} over {} samples",
        report.min_ade_k, report.min_fde_k, report.ptu_ade, report.ptu_fde, report.n_samples
    );
    Ok(report)
}
