//! Subcommand implementations, kept free of argument parsing so tests can
//! call them directly.

use std::path::Path;

use patchtune_core::dataset::{make_split, split_stats, ClassCount, Dataset, SplitSpec};
use patchtune_core::experiment::{
    compare, encode_eval_set, evaluate, finetune_tuned, prepare, run_experiment, sweep_cells,
    sweep_row, train_scratch, EvalPoint, ExperimentReport, LambdaTrial, ParityRecord, ParityRule,
    Prepared, RunReport, Seeds, SweepAxes, SweepCell, SweepRow,
};
use patchtune_core::metrics::FoldedReport;
use patchtune_core::model::Checkpoint;
use serde::{Deserialize, Serialize};

use crate::config::HarnessConfig;
use crate::data::{write_dataset, write_text};
use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSummary {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub classes: usize,
}

/// Writes `train.tsv`, `dev.tsv` and `test.tsv` (canonical format).
pub fn gen(config: &HarnessConfig, out_dir: &Path) -> Result<GenSummary, CliError> {
    let (train, dev, test) = config.datasets()?;
    for (name, ds) in [("train", &train), ("dev", &dev), ("test", &test)] {
        write_dataset(&out_dir.join(format!("{name}.tsv")), ds)?;
    }
    Ok(GenSummary {
        train: train.len(),
        dev: dev.len(),
        test: test.len(),
        classes: train.classes().len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub target_class: String,
    pub percentage: f64,
    pub seed: u64,
    pub d1: usize,
    pub d2: usize,
    pub moved: usize,
    pub coverage_moved: usize,
    pub warnings: Vec<String>,
    pub classes: Vec<ClassCount>,
}

/// Splits `source` into D1/D2 and optionally writes `d1.tsv` and `d2.tsv`.
pub fn split(source: &Dataset, spec: &SplitSpec, out_dir: Option<&Path>) -> Result<SplitSummary, CliError> {
    let result = make_split(source, spec)?;
    if let Some(dir) = out_dir {
        write_dataset(&dir.join("d1.tsv"), &result.d1)?;
        write_dataset(&dir.join("d2.tsv"), &result.d2)?;
    }
    Ok(SplitSummary {
        target_class: spec.target_class.clone(),
        percentage: spec.percentage,
        seed: spec.seed,
        d1: result.d1.len(),
        d2: result.d2.len(),
        moved: result.moved_count,
        coverage_moved: result.coverage_ids.len(),
        warnings: result.warnings.clone(),
        classes: split_stats(&result),
    })
}

/// Which training set a from-scratch run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TrainOn {
    /// D1 only: the previous model.
    D1,
    /// D1 ∪ D2: the from-scratch reference.
    Full,
}

fn prepared(config: &HarnessConfig) -> Result<Prepared, CliError> {
    let (train, dev, test) = config.datasets()?;
    Ok(prepare(&config.experiment, &train, &dev, &test)?)
}

/// Trains from scratch on D1 or on D1 ∪ D2.
pub fn train(config: &HarnessConfig, on: TrainOn) -> Result<(Checkpoint, RunReport), CliError> {
    let e = &config.experiment;
    let data = prepared(config)?;
    let seeds = Seeds::from_run(e.seed);
    let (name, sets): (&str, Vec<&[_]>) = match on {
        TrainOn::D1 => ("prev", vec![&data.d1]),
        TrainOn::Full => ("scratch", vec![&data.d1, &data.d2]),
    };
    let (mut ckpt, report) = train_scratch(
        name,
        e.model,
        data.vocab.clone(),
        &sets,
        &data.dev,
        &data.test,
        &e.train,
        &seeds,
        e.folds,
    )?;
    ckpt.config_digest = config.digest();
    Ok((ckpt, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneReport {
    pub method: String,
    pub prev: EvalPoint,
    pub finetune: RunReport,
    pub lambda: Option<f64>,
    pub lambda_search: Vec<LambdaTrial>,
    pub parity: Option<ParityRecord>,
}

/// Fine-tunes `prev` with the configured method. The previous model is
/// evaluated on test for the degradation report; with a scratch report,
/// parity is filled in too.
pub fn finetune(
    config: &HarnessConfig,
    prev: &Checkpoint,
    scratch: Option<&RunReport>,
) -> Result<(Checkpoint, FinetuneReport), CliError> {
    let e = &config.experiment;
    let data = prepared(config)?;
    if prev.model.vocab != data.vocab || prev.model.config != e.model {
        return Err(CliError::Config(
            "previous checkpoint does not match the configured model and data".into(),
        ));
    }
    let seeds = Seeds::from_run(e.seed);
    let prev_eval = EvalPoint::from_report(prev.step, evaluate(&prev.model, &data.test, e.folds, seeds.folds)?);
    let tuned = finetune_tuned(e, &data, prev, &prev_eval, e.method)?;
    let mut report = tuned.report;
    let parity = scratch.map(|s| compare(&report, s, &e.target_class, e.parity));
    if let Some(p) = &parity {
        report.steps_to_parity = p.steps_to_parity;
        report.relative_steps = p.relative_steps;
    }
    let mut ckpt = tuned.checkpoint;
    ckpt.config_digest = config.digest();
    Ok((
        ckpt,
        FinetuneReport {
            method: e.method.name(),
            prev: prev_eval,
            finetune: report,
            lambda: tuned.lambda,
            lambda_search: tuned.lambda_search,
            parity,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub examples: usize,
    pub folds: usize,
    pub step: u64,
    pub config_digest: String,
    /// Dev EM recorded in training at the checkpoint's step.
    pub recorded_dev_exact_match: Option<f64>,
    #[serde(flatten)]
    pub scores: FoldedReport,
}

pub fn evaluate_checkpoint(
    ckpt: &Checkpoint,
    dataset: &Dataset,
    folds: usize,
    fold_seed: u64,
) -> Result<EvaluationReport, CliError> {
    let encoded = encode_eval_set(&ckpt.model, dataset)?;
    let scores = evaluate(&ckpt.model, &encoded, folds, fold_seed)?;
    Ok(EvaluationReport {
        examples: dataset.len(),
        folds,
        step: ckpt.step,
        config_digest: ckpt.config_digest.clone(),
        recorded_dev_exact_match: ckpt
            .history
            .iter()
            .rev()
            .find(|r| r.step == ckpt.step)
            .map(|r| r.dev_exact_match),
        scores,
    })
}

pub fn compare_reports(finetune: &RunReport, scratch: &RunReport, target: &str, rule: ParityRule) -> ParityRecord {
    compare(finetune, scratch, target, rule)
}

/// Full experiment: split, M_prev, M_from_scratch and the configured method.
pub fn run(config: &HarnessConfig) -> Result<ExperimentReport, CliError> {
    let (train, dev, test) = config.datasets()?;
    Ok(run_experiment(&config.experiment, &train, &dev, &test)?)
}

/// Runs every cell of the sweep. When `cells_dir` is given each cell's config
/// is written there as `cell-<n>.toml`, runnable on its own with `run`.
pub fn sweep(
    config: &HarnessConfig,
    axes: &SweepAxes,
    cells_dir: Option<&Path>,
    mut progress: impl FnMut(&SweepCell, &SweepRow),
) -> Result<Vec<SweepRow>, CliError> {
    let cells = sweep_cells(&config.experiment, axes)?;
    let (train, dev, test) = config.datasets()?;
    let mut rows = Vec::with_capacity(cells.len());
    for (i, cell) in cells.iter().enumerate() {
        if let Some(dir) = cells_dir {
            let cell_config = HarnessConfig {
                data: config.data.clone(),
                experiment: cell.config.clone(),
            };
            write_text(&dir.join(format!("cell-{i}.toml")), &cell_config.to_toml())?;
        }
        let report = run_experiment(&cell.config, &train, &dev, &test)?;
        let row = sweep_row(cell, &report);
        progress(cell, &row);
        rows.push(row);
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Csv(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}
