use std::path::Path;
use std::process::Command;

use tgmr_cli::commands::{read_predictions, PREDICTIONS_FILE};
use tgmr_cli::run_info::RunInfo;
use tgmr_core::scene::GridSpec;
use tgmr_core::synthetic::{generate, GenOptions, Layout, ScenarioTemplate};

fn tgmr(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_tgmr"))
        .args(args)
        .env("TGMR_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = tgmr(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY: &str = r#"{
  "seed": 3,
  "model": { "hidden_channels": 6, "attn_dim": 4 },
  "train": { "epochs": 2 },
  "decode": { "k": 3 }
}"#;

#[test]
fn generate_train_predict_eval() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    let cfg = d.join("tiny.json");
    std::fs::write(&cfg, TINY).unwrap();

    ok(&["gen-data", "--template", "t-junction", "--futures", "3", "--n", "3", "--seed", "4", "--out", p(&data)]);
    assert!(data.join("run.json").exists());
    assert!(data.join("t-junction-4.json").exists());

    let run = d.join("run");
    ok(&["train", "--data", p(&data), "--out", p(&run), "--config", p(&cfg), "--no-memory-replay"]);
    let info = RunInfo::read(&run).unwrap();
    assert!(!info.config.as_ref().unwrap().model.use_memory_replay);
    assert_eq!(info.seed, 3);
    assert!(run.join("checkpoints/epoch-0002.tgmr").exists());
    let csv = std::fs::read_to_string(run.join("loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "{csv}");

    let pred = d.join("pred");
    ok(&["predict", "--run", p(&run), "--data", p(&data), "--out", p(&pred), "--svg", "--threads", "2"]);
    let recs = read_predictions(&pred.join(PREDICTIONS_FILE)).unwrap();
    assert_eq!(recs.len(), 3);
    assert!(recs.iter().all(|r| r.k == 3 && r.trajectories.len() == 3 && r.trajectories[0].len() == 12));
    assert!(pred.join("run.json").exists());
    for r in &recs {
        let svg = std::fs::read_to_string(pred.join("svg").join(format!("{}.svg", r.sample_id))).unwrap();
        let doc = roxmltree::Document::parse(&svg).unwrap();
        assert_eq!(doc.root_element().tag_name().name(), "svg");
        assert_eq!(doc.descendants().filter(|n| n.tag_name().name() == "g").count(), 12);
    }

    let k1 = d.join("pred1");
    ok(&["predict", "--run", p(&run), "--data", p(&data), "--out", p(&k1), "--k", "1"]);
    let one = read_predictions(&k1.join(PREDICTIONS_FILE)).unwrap();
    assert!(one.iter().all(|r| r.trajectories.len() == 1));

    let ev = d.join("eval");
    ok(&["eval", "--predictions", p(&pred.join(PREDICTIONS_FILE)), "--data", p(&data), "--out", p(&ev)]);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(ev.join("metrics.json")).unwrap()).unwrap();
    for key in ["ade", "fde", "min_ade_k", "min_fde_k", "ptu_ade", "ptu_fde", "asd", "fsd", "n_samples"] {
        assert!(report.get(key).is_some(), "missing {key}");
    }
    assert_eq!(report["n_samples"], 3);
    let rows = std::fs::read_to_string(ev.join("metrics.csv")).unwrap();
    assert_eq!(rows.lines().count(), 4);

    // a second identical run produces identical predictions
    let again = d.join("pred-again");
    ok(&["predict", "--run", p(&run), "--data", p(&data), "--out", p(&again), "--svg"]);
    assert_eq!(
        std::fs::read(pred.join(PREDICTIONS_FILE)).unwrap(),
        std::fs::read(again.join(PREDICTIONS_FILE)).unwrap()
    );
}

#[test]
fn resume_matches_uninterrupted_training() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    let cfg = d.join("tiny.json");
    std::fs::write(&cfg, TINY).unwrap();
    ok(&["gen-data", "--template", "corridor", "--n", "3", "--out", p(&data)]);

    let full = d.join("full");
    ok(&["train", "--data", p(&data), "--out", p(&full), "--config", p(&cfg), "--epochs", "3"]);
    let part = d.join("part");
    ok(&["train", "--data", p(&data), "--out", p(&part), "--config", p(&cfg), "--epochs", "1"]);
    ok(&["train", "--data", p(&data), "--out", p(&part), "--config", p(&cfg), "--epochs", "3", "--resume"]);
    assert_eq!(std::fs::read(full.join("model.tgmr")).unwrap(), std::fs::read(part.join("model.tgmr")).unwrap());
    assert_eq!(
        std::fs::read_to_string(full.join("loss.csv")).unwrap(),
        std::fs::read_to_string(part.join("loss.csv")).unwrap()
    );

    let out = tgmr(&["train", "--data", p(&data), "--out", p(&part), "--config", p(&cfg), "--epochs", "4", "--resume", "--mu", "5"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = tgmr(&["gen-data", "--template", "maze", "--out", p(&d.join("x"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("maze"));

    let out = tgmr(&["train", "--data", p(&d.join("missing")), "--out", p(&d.join("r"))]);
    assert_eq!(out.status.code(), Some(2));

    let out = tgmr(&["train", "--bogus-flag"]);
    assert_eq!(out.status.code(), Some(2));

    let data = d.join("data");
    ok(&["gen-data", "--template", "corridor", "--n", "2", "--out", p(&data)]);
    let bad = d.join("bad.json");
    std::fs::write(&bad, r#"{"train": {"epochs": 1, "learning_rate": -1.0}}"#).unwrap();
    let out = tgmr(&["train", "--data", p(&data), "--out", p(&d.join("r")), "--config", p(&bad)]);
    assert_eq!(out.status.code(), Some(2));

    // output directory blocked by a regular file: an environment failure
    let blocker = d.join("blocker");
    std::fs::write(&blocker, "").unwrap();
    let out = tgmr(&["gen-data", "--template", "corridor", "--n", "1", "--out", p(&blocker.join("sub"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn eval_reports_missing_ids_and_degenerate_cases() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    ok(&["gen-data", "--template", "crossroad", "--futures", "4", "--n", "3", "--out", p(&data)]);
    let samples = tgmr_core::dataset::load(&data).unwrap();

    let write = |name: &str, recs: Vec<serde_json::Value>| {
        let path = d.join(name);
        let text: String = recs.iter().map(|r| r.to_string() + "\n").collect();
        std::fs::write(&path, text).unwrap();
        path
    };
    let exact: Vec<_> = samples
        .iter()
        .map(|s| serde_json::json!({"sample_id": s.id, "scene_id": s.scene_id, "seed": 0, "K": s.futures.len(), "trajectories": s.futures, "scores": vec![0.0; s.futures.len()], "nodes": []}))
        .collect();
    let path = write("exact.jsonl", exact);
    ok(&["eval", "--predictions", p(&path), "--data", p(&data), "--out", p(&d.join("e1"))]);
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("e1/metrics.json")).unwrap()).unwrap();
    assert_eq!(r["min_ade_k"], 0.0);
    assert_eq!(r["min_fde_k"], 0.0);
    assert_eq!(r["ptu_ade"], 1.0);

    let dup: Vec<_> = samples
        .iter()
        .map(|s| serde_json::json!({"sample_id": s.id, "scene_id": s.scene_id, "seed": 0, "K": 3, "trajectories": vec![s.futures[0].clone(); 3], "scores": [0.0, 0.0, 0.0], "nodes": []}))
        .collect();
    let path = write("dup.jsonl", dup);
    ok(&["eval", "--predictions", p(&path), "--data", p(&data), "--out", p(&d.join("e2"))]);
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("e2/metrics.json")).unwrap()).unwrap();
    assert!((r["ptu_fde"].as_f64().unwrap() - 0.25).abs() < 1e-12);

    let partial: Vec<_> = samples[..1]
        .iter()
        .map(|s| serde_json::json!({"sample_id": s.id, "scene_id": s.scene_id, "seed": 0, "K": 1, "trajectories": [s.futures[0]], "scores": [0.0], "nodes": []}))
        .collect();
    let path = write("partial.jsonl", partial);
    let out = tgmr(&["eval", "--predictions", p(&path), "--data", p(&data), "--out", p(&d.join("e3"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(&samples[1].id) && err.contains(&samples[2].id), "{err}");
}

#[test]
fn predict_rejects_k_beyond_search_space() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    let cfg = d.join("tiny.json");
    std::fs::write(&cfg, r#"{"model": {"hidden_channels": 4, "attn_dim": 2, "scales": [[2, 1]]}, "train": {"epochs": 1}}"#).unwrap();
    let t = ScenarioTemplate::new(Layout::Corridor, 1);
    let mut scene = generate(&t, 1, 1, &GenOptions::default()).unwrap();
    let spec = GridSpec::new(2, 1, 192.0, 96.0).unwrap();
    scene.scales = vec![(2, 1)];
    scene.seg_grid = vec![vec![t.pooled(&spec); scene.t_obs]];
    scene.save(&data.join("tiny.json")).unwrap();
    let run = d.join("run");
    ok(&["train", "--data", p(&data), "--out", p(&run), "--config", p(&cfg)]);
    // 2 nodes, 12 steps: 4096 sequences
    let out = tgmr(&["predict", "--run", p(&run), "--data", p(&data), "--out", p(&d.join("p")), "--k", "5000"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("K = 5000"));
}

#[test]
fn ablation_rows_share_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    let eval = d.join("eval");
    let cfg = d.join("tiny.json");
    std::fs::write(&cfg, r#"{"seed": 9, "model": {"hidden_channels": 3, "attn_dim": 2}, "train": {"epochs": 1}, "decode": {"k": 2}}"#).unwrap();
    ok(&["gen-data", "--template", "corridor", "--n", "2", "--out", p(&data)]);
    ok(&["gen-data", "--template", "t-junction", "--futures", "3", "--n", "2", "--out", p(&eval)]);
    let out = d.join("abl");
    ok(&["ablate", "--data", p(&data), "--eval-data", p(&eval), "--out", p(&out), "--config", p(&cfg)]);
    let csv = std::fs::read_to_string(out.join("ablation.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(
        rows,
        ["single-scale", "no-memory-replay", "no-location-encoder", "no-exp-loss", "full", "mu=inf", "mu=20", "mu=10", "mu=5"]
    );
    assert!(csv.lines().skip(1).all(|l| l.split(',').nth(1) == Some("9")));
    assert_eq!(RunInfo::read(&out).unwrap().seed, 9);
    let md = std::fs::read_to_string(out.join("ablation.md")).unwrap();
    assert!(md.contains("| mu=inf |") && md.contains("| full |"));
}

/// Reference model on ten samples, constant learning rate.
#[test]
fn overfit_ten_samples() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (data, run, cfg) = (d.join("data"), d.join("run"), d.join("smoke.json"));
    std::fs::write(&cfg, r#"{ "train": { "epochs": 120, "lr_decay_per_epoch": 1.0 } }"#).unwrap();
    ok(&["gen-data", "--template", "t-junction", "--n", "10", "--seed", "11", "--out", p(&data)]);
    let t = std::time::Instant::now();
    ok(&["train", "--data", p(&data), "--out", p(&run), "--config", p(&cfg), "--checkpoint-every", "40"]);
    let elapsed = t.elapsed();
    let mut r = csv::Reader::from_path(run.join("loss.csv")).unwrap();
    let losses: Vec<f64> = r.records().map(|rec| rec.unwrap()[2].parse().unwrap()).collect();
    assert_eq!(losses.len(), 120);
    assert!(losses[119] < 0.2 * losses[0], "{} -> {}", losses[0], losses[119]);
    assert!(elapsed.as_secs() < 300, "{elapsed:?}");
    let kept: Vec<_> = std::fs::read_dir(run.join("checkpoints")).unwrap().collect();
    assert_eq!(kept.len(), 3);
}
