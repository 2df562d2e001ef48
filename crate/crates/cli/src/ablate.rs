//! Component and regression-time-scale ablations, all with the base seed.

use std::collections::HashMap;
use std::fmt::Write;

use log::info;
use serde::Serialize;
use tgmr_core::metrics::MetricsReport;
use tgmr_core::scene::TrajectorySample;
use tgmr_core::{Config, Error};

use crate::args::AblateArgs;
use crate::commands::{evaluate, load_data, predict_samples, train_model};
use crate::run_info::RunInfo;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Group {
    Components,
    Mu,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Row {
    SingleScale,
    NoMemoryReplay,
    NoLocationEncoder,
    NoExpLoss,
    Full,
    /// `None` is +∞.
    Mu(Option<f64>),
}

pub const COMPONENT_ROWS: [Row; 5] = [Row::SingleScale, Row::NoMemoryReplay, Row::NoLocationEncoder, Row::NoExpLoss, Row::Full];
pub const MU_ROWS: [Row; 4] = [Row::Mu(None), Row::Mu(Some(20.0)), Row::Mu(Some(10.0)), Row::Mu(Some(5.0))];

impl Row {
    pub fn all() -> Vec<Row> {
        COMPONENT_ROWS.iter().chain(&MU_ROWS).copied().collect()
    }

    pub fn name(self) -> String {
        match self {
            Row::SingleScale => "single-scale".into(),
            Row::NoMemoryReplay => "no-memory-replay".into(),
            Row::NoLocationEncoder => "no-location-encoder".into(),
            Row::NoExpLoss => "no-exp-loss".into(),
            Row::Full => "full".into(),
            Row::Mu(None) => "mu=inf".into(),
            Row::Mu(Some(m)) => format!("mu={m}"),
        }
    }

    pub fn parse(s: &str) -> anyhow::Result<Row> {
        Row::all()
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation row `{s}`")).into())
    }

    pub fn group(self) -> Group {
        match self {
            Row::Mu(_) => Group::Mu,
            _ => Group::Components,
        }
    }

    pub fn apply(self, base: &Config) -> Config {
        let mut c = base.clone();
        match self {
            Row::SingleScale => c.model.scales.truncate(1),
            Row::NoMemoryReplay => c.model.use_memory_replay = false,
            Row::NoLocationEncoder => c.model.use_location_encoder = false,
            Row::NoExpLoss => c.loss.mu = None,
            Row::Full => {}
            Row::Mu(m) => c.loss.mu = m,
        }
        c
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RowResult {
    pub row: String,
    pub group: Group,
    pub seed: u64,
    pub final_loss: f64,
    pub report: MetricsReport,
}

/// Trains and evaluates each row. Rows whose resolved configs coincide
/// (the full model and its own μ row, say) share one run.
pub fn run_rows(base: &Config, rows: &[Row], train: &[TrajectorySample], eval: &[TrajectorySample], k: usize) -> anyhow::Result<Vec<RowResult>> {
    let mut cache: HashMap<String, (f64, MetricsReport)> = HashMap::new();
    let mut out = Vec::with_capacity(rows.len());
    for &row in rows {
        let cfg = row.apply(base);
        cfg.validate()?;
        let key = serde_json::to_string(&cfg)?;
        let (final_loss, report) = match cache.get(&key) {
            Some(hit) => hit.clone(),
            None => {
                info!("ablation row {}", row.name());
                let (model, state) = train_model(&cfg, train, None)?;
                let preds = predict_samples(&model, cfg.seed, eval, k, cfg.decode.diversity_rate)?;
                let recs: Vec<_> = preds.into_iter().map(|(p, _)| p).collect();
                let (_, report) = evaluate(&recs, eval)?;
                let v = (state.epoch_losses.last().copied().unwrap_or(f64::NAN), report);
                cache.insert(key, v.clone());
                v
            }
        };
        out.push(RowResult {
            row: row.name(),
            group: row.group(),
            seed: cfg.seed,
            final_loss,
            report,
        });
    }
    Ok(out)
}

/// Markdown tables: components, then μ.
pub fn table(results: &[RowResult]) -> String {
    let mut s = String::new();
    for (group, title) in [(Group::Components, "Ablation of key components"), (Group::Mu, "Value of mu")] {
        let rows: Vec<&RowResult> = results.iter().filter(|r| r.group == group).collect();
        if rows.is_empty() {
            continue;
        }
        let _ = writeln!(s, "### {title}\n");
        let _ = writeln!(s, "| row | ADE | FDE | minADE_K | PTU (ADE) | minFDE_K | PTU (FDE) | final loss |");
        let _ = writeln!(s, "|---|---|---|---|---|---|---|---|");
        for r in rows {
            let m = &r.report;
            let _ = writeln!(
                s,
                "| {} | {:.2} | {:.2} | {:.2} | {:.1}% | {:.2} | {:.1}% | {:.4} |",
                r.row,
                m.ade,
                m.fde,
                m.min_ade_k,
                100.0 * m.ptu_ade,
                m.min_fde_k,
                100.0 * m.ptu_fde,
                r.final_loss
            );
        }
        s.push('\n');
    }
    s
}

pub fn ablate(a: &AblateArgs) -> anyhow::Result<Vec<RowResult>> {
    let base = a.config.resolve()?;
    let rows = if a.rows.is_empty() {
        Row::all()
    } else {
        a.rows.iter().map(|r| Row::parse(r)).collect::<anyhow::Result<_>>()?
    };
    let train = load_data(&a.data)?;
    let eval = load_data(&a.eval_data)?;
    let k = a.k.unwrap_or(base.decode.k);
    RunInfo::new("ablate", base.seed, Some(base.clone()), a)?.write(&a.out)?;
    let results = run_rows(&base, &rows, &train, &eval, k)?;
    let mut w = csv::Writer::from_path(a.out.join("ablation.csv"))?;
    w.write_record(["row", "seed", "final_loss", "ade", "fde", "min_ade_k", "min_fde_k", "ptu_ade", "ptu_fde", "n_samples"])?;
    for r in &results {
        let m = &r.report;
        let nums = [r.final_loss, m.ade, m.fde, m.min_ade_k, m.min_fde_k, m.ptu_ade, m.ptu_fde];
        let mut rec = vec![r.row.clone(), r.seed.to_string()];
        rec.extend(nums.iter().map(|v| v.to_string()));
        rec.push(m.n_samples.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    let md = format!("Seed {}, K = {k}\n\n{}", base.seed, table(&results));
    std::fs::write(a.out.join("ablation.md"), &md)?;
    println!("{md}");
    Ok(results)
}
