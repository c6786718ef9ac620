use std::path::Path;
use std::process::{Command, Output};

use patchtune::checkpoint;
use patchtune::commands::{self, TrainOn};
use patchtune::data::load_dataset;
use patchtune::data::DataFormat;
use patchtune::HarnessConfig;
use patchtune_core::experiment::{encode_eval_set, evaluate, prepare, Seeds};
use patchtune_core::model::exact_match_encoded;

const SMALL: &[&str] = &[
    "data.gen.n_train=500",
    "data.gen.n_test=150",
    "data.gen.n_dev=80",
    "train.max_epochs=4",
    "finetune.max_epochs=4",
    "train.eval_every=15",
    "finetune.eval_every=15",
    "target_class=SL:DATE",
    "percentage=90",
    "lambda_grid=[1.0, 10.0]",
];

fn small_args() -> Vec<String> {
    SMALL.iter().flat_map(|s| ["--set".to_string(), s.to_string()]).collect()
}

fn small_config() -> HarnessConfig {
    let o: Vec<String> = SMALL.iter().map(|s| s.to_string()).collect();
    HarnessConfig::from_parts(None, &o).unwrap()
}

fn patchtune(dir: &Path, args: &[&str], extra: &[String]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_patchtune"))
        .current_dir(dir)
        .args(args)
        .args(extra)
        .output()
        .expect("binary runs")
}

#[test]
fn run_reports_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = patchtune(dir.path(), &["run", "--report", "a.json"], &small_args());
    let b = patchtune(dir.path(), &["run", "--report", "b.json"], &small_args());
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert!(b.status.success());
    let a = std::fs::read(dir.path().join("a.json")).unwrap();
    let b = std::fs::read(dir.path().join("b.json")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b);
}

#[test]
fn staged_commands_match_the_full_run() {
    let cfg = small_config();
    let (ckpt_prev, prev) = commands::train(&cfg, TrainOn::D1).unwrap();
    let (_, scratch) = commands::train(&cfg, TrainOn::Full).unwrap();
    let (_, ft) = commands::finetune(&cfg, &ckpt_prev, Some(&scratch)).unwrap();
    let full = commands::run(&cfg).unwrap();
    assert_eq!(full.prev, prev);
    assert_eq!(full.scratch, scratch);
    assert_eq!(full.finetune, ft.finetune);
    assert_eq!(Some(full.parity), ft.parity);
    assert_eq!(full.lambda, ft.lambda);
    assert_eq!(ft.prev, prev.final_eval);
}

#[test]
fn saved_checkpoint_reproduces_recorded_dev_score() {
    let cfg = small_config();
    let (ckpt, _) = commands::train(&cfg, TrainOn::D1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("prev.ckpt");
    checkpoint::save(&ckpt, &path).unwrap();
    let loaded = checkpoint::load(&path).unwrap();
    assert_eq!(loaded, ckpt);
    assert_eq!(loaded.fisher.steps, loaded.step);
    assert_eq!(loaded.config_digest, cfg.digest());

    let (train, dev, test) = cfg.datasets().unwrap();
    let data = prepare(&cfg.experiment, &train, &dev, &test).unwrap();
    let recorded = loaded.history.iter().find(|r| r.step == loaded.step).unwrap();
    let em = exact_match_encoded(&loaded.model, &data.dev);
    assert_eq!(em, recorded.dev_exact_match);

    let seeds = Seeds::from_run(cfg.experiment.seed);
    let report = commands::evaluate_checkpoint(&loaded, &dev, 5, seeds.folds).unwrap();
    assert_eq!(report.recorded_dev_exact_match, Some(em));
    let direct = evaluate(&loaded.model, &encode_eval_set(&loaded.model, &dev).unwrap(), 5, seeds.folds).unwrap();
    assert_eq!(report.scores, direct);
}

#[test]
fn gen_then_split_round_trips_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = patchtune(dir.path(), &["gen", "--out-dir", "data"], &small_args());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = patchtune(
        dir.path(),
        &[
            "split", "--input", "data/train.tsv", "--format", "canonical", "--target", "SL:DATE",
            "--percentage", "50", "--seed", "4", "--out-dir", "split",
        ],
        &[],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let (train, _) = load_dataset(&dir.path().join("data/train.tsv"), DataFormat::Canonical, false).unwrap();
    let (d1, _) = load_dataset(&dir.path().join("split/d1.tsv"), DataFormat::Canonical, false).unwrap();
    let (d2, _) = load_dataset(&dir.path().join("split/d2.tsv"), DataFormat::Canonical, false).unwrap();
    assert_eq!(d1.len() + d2.len(), train.len());
    assert_eq!(summary["d2"].as_u64().unwrap() as usize, d2.len());
    assert!(d1.examples().iter().all(|e| train.get(&e.id) == Some(e)));
}

#[test]
fn errors_are_structured_with_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = patchtune(dir.path(), &["run", "--set", "folds=1"], &[]);
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "config");

    let out = patchtune(dir.path(), &["evaluate", "--checkpoint", "missing.ckpt"], &[]);
    assert_eq!(out.status.code(), Some(3));

    std::fs::write(dir.path().join("bad.ckpt"), b"PTCKPT\0\0garbage that is long enough to reach the checksum comparison").unwrap();
    let out = patchtune(dir.path(), &["evaluate", "--checkpoint", "bad.ckpt"], &[]);
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "checksum");

    let out = patchtune(
        dir.path(),
        &["run", "--set", "data.train=a.tsv", "--set", "data.dev=b.tsv", "--set", "data.test=c.tsv"],
        &[],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_cells_rerun_on_their_own() {
    let dir = tempfile::tempdir().unwrap();
    let out = patchtune(
        dir.path(),
        &["sweep", "--methods", "naive,sample", "--p", "0.1", "--lambda", "1", "--out", "s.csv", "--cells-dir", "cells"],
        &small_args(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("s.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("method,p,lambda,seed"));

    let cell = HarnessConfig::load(Some(&dir.path().join("cells/cell-1.toml")), &[]).unwrap();
    let report = commands::run(&cell).unwrap();
    let row: Vec<&str> = lines[2].split(',').collect();
    assert_eq!(row[0], "sample");
    assert_eq!(row[3], cell.experiment.seed.to_string());
    assert_eq!(row[4].parse::<f64>().unwrap(), report.finetune.final_eval.exact_match.mean);
}
