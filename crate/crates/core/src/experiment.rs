//! The data-patch experiment: train M_prev on D1, train M_from_scratch on
//! D1 ∪ D2, fine-tune M_prev on D2 with a method, then measure forgetting
//! and steps-to-parity.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{make_split, split_stats, ClassCount, Dataset, DatasetError, SplitSpec};
use crate::metrics::{
    degraded_classes, CorpusEvaluation, DegradationReport, FoldedReport, MetricsError,
    UncertainScore,
};
use crate::model::{
    train, Anchor, Checkpoint, Encoded, ModelConfig, ModelError, TaggerModel, TrainConfig,
    TrainData, Vocab,
};
use crate::regularizers::{FreezeMask, PenaltyForm, RegConfig, RegKind};
use crate::sampling::{SamplerConfig, SamplerMode};
use crate::seed;
use crate::treebank::ParseTree;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("invalid experiment config: {0}")]
    Config(String),
}

/// A fine-tuning method: how old data is mixed in and which penalty is used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Method {
    pub sampler: SamplerMode,
    pub p: f64,
    #[serde(default)]
    pub reg: RegConfig,
}

impl Method {
    pub fn naive() -> Self {
        Method {
            sampler: SamplerMode::Replay,
            p: 0.0,
            reg: RegConfig::none(),
        }
    }

    pub fn replay(p: f64) -> Self {
        Method {
            sampler: SamplerMode::Replay,
            p,
            reg: RegConfig::none(),
        }
    }

    pub fn sample(p: f64) -> Self {
        Method {
            sampler: SamplerMode::Sample,
            p,
            reg: RegConfig::none(),
        }
    }

    pub fn move_norm_replay(lambda: f64, p: f64) -> Self {
        Method {
            reg: RegConfig::move_norm(lambda),
            ..Method::replay(p)
        }
    }

    pub fn ewc_replay(lambda: f64, p: f64) -> Self {
        Method {
            reg: RegConfig::ewc(lambda),
            ..Method::replay(p)
        }
    }

    pub fn ewc_sample(lambda: f64, p: f64) -> Self {
        Method {
            reg: RegConfig::ewc(lambda),
            ..Method::sample(p)
        }
    }

    /// The recommended cell: EWC with 20% sampling of old data.
    pub fn ewc_sample_20(lambda: f64) -> Self {
        Method::ewc_sample(lambda, 0.2)
    }

    /// Looks up a method by name: `naive`, `replay`, `sample`,
    /// `movenorm+replay`, `ewc+replay`, `ewc+sample`, `ewc+sample20`.
    pub fn by_name(name: &str, p: f64, lambda: f64) -> Option<Self> {
        Some(match name {
            "naive" => Method::naive(),
            "replay" => Method::replay(p),
            "sample" => Method::sample(p),
            "movenorm+replay" => Method::move_norm_replay(lambda, p),
            "ewc+replay" => Method::ewc_replay(lambda, p),
            "ewc+sample" => Method::ewc_sample(lambda, p),
            "ewc+sample20" => Method::ewc_sample_20(lambda),
            _ => return None,
        })
    }

    pub fn name(&self) -> String {
        let mode = match self.sampler {
            SamplerMode::Replay => "replay",
            SamplerMode::Sample => "sample",
        };
        let form = match self.reg.form {
            PenaltyForm::Squared => "",
            PenaltyForm::Norm => "-norm",
        };
        match self.reg.kind {
            RegKind::None if self.p == 0.0 => "naive".to_string(),
            RegKind::None => format!("{mode}(p={})", self.p),
            RegKind::MoveNorm => format!("movenorm{form}(l={})+{mode}(p={})", self.reg.lambda, self.p),
            RegKind::Ewc => format!("ewc{form}(l={})+{mode}(p={})", self.reg.lambda, self.p),
        }
    }
}

/// Which thresholds must both hold for parity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParityRule {
    #[default]
    Both,
    Either,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub model: ModelConfig,
    /// Hyperparameters for from-scratch runs (M_prev and M_from_scratch).
    pub train: TrainConfig,
    /// Hyperparameters for fine-tuning; `reg` is replaced by the method's.
    pub finetune: TrainConfig,
    pub target_class: String,
    pub percentage: f64,
    #[serde(default = "default_coverage")]
    pub coverage_per_class: usize,
    pub method: Method,
    /// Candidate λ values tried on dev when the method has a penalty.
    #[serde(default)]
    pub lambda_grid: Vec<f64>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub parity: ParityRule,
    #[serde(default)]
    pub freeze: FreezeMask,
}

fn default_coverage() -> usize {
    1
}

fn default_folds() -> usize {
    5
}

/// Sub-seeds derived from the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub split: u64,
    pub init: u64,
    pub sampler: u64,
    pub folds: u64,
}

impl Seeds {
    pub fn from_run(run: u64) -> Self {
        Seeds {
            split: seed::derive(run, "split"),
            init: seed::derive(run, "init"),
            sampler: seed::derive(run, "sampler"),
            folds: seed::derive(run, "folds"),
        }
    }
}

/// Metrics of one model on the test set at one point of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    /// Steps taken in this run when the point was recorded.
    pub step: u64,
    pub exact_match: UncertainScore,
    pub tp_f1: UncertainScore,
    pub global_f1: f64,
    pub per_class: BTreeMap<String, UncertainScore>,
}

impl EvalPoint {
    pub fn from_report(step: u64, report: FoldedReport) -> Self {
        EvalPoint {
            step,
            exact_match: report.exact_match,
            tp_f1: report.tp_f1,
            global_f1: report.global.f1,
            per_class: report.per_class,
        }
    }

    /// Per-class score, or an empty score when the class has no gold paths.
    pub fn class(&self, class: &str) -> Option<&UncertainScore> {
        self.per_class.get(class)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub points: Vec<EvalPoint>,
    /// Test metrics of the restored best checkpoint.
    pub final_eval: EvalPoint,
    /// Steps taken in this run.
    pub total_steps: u64,
    /// Run-relative step of the best checkpoint.
    pub best_step: u64,
    pub stopped_early: bool,
    #[serde(default)]
    pub degradation: Option<DegradationReport>,
    #[serde(default)]
    pub steps_to_parity: Option<u64>,
    #[serde(default)]
    pub relative_steps: Option<f64>,
}

/// Predicts every test example and summarizes over `k` seeded folds.
pub fn evaluate(
    model: &TaggerModel,
    test: &[Encoded],
    k: usize,
    fold_seed: u64,
) -> Result<FoldedReport, ExperimentError> {
    let gold: Vec<ParseTree> = test.iter().map(|e| e.tree.clone()).collect();
    let pred = predict_all(model, test)?;
    Ok(CorpusEvaluation::new(&gold, &pred)?.folded_report(k, fold_seed)?)
}

pub fn predict_all(model: &TaggerModel, test: &[Encoded]) -> Result<Vec<ParseTree>, ExperimentError> {
    test.iter()
        .map(|e| model.predict_features(&e.query(), &e.features).map_err(Into::into))
        .collect()
}

/// Encoded train/dev/test views sharing one vocabulary.
pub struct Prepared {
    pub d1: Vec<Encoded>,
    pub d2: Vec<Encoded>,
    pub dev: Vec<Encoded>,
    pub test: Vec<Encoded>,
    pub vocab: Vocab,
    pub split: Vec<ClassCount>,
}

/// Encodes dev/test examples; gold labels outside the vocabulary are kept
/// and simply cannot be predicted.
pub fn encode_eval_set(model: &TaggerModel, ds: &Dataset) -> Result<Vec<Encoded>, ExperimentError> {
    ds.examples()
        .iter()
        .map(|e| model.encode_eval(&e.query, &e.tree).map_err(Into::into))
        .collect()
}

pub fn prepare(
    config: &ExperimentConfig,
    train_set: &Dataset,
    dev: &Dataset,
    test: &Dataset,
) -> Result<Prepared, ExperimentError> {
    let seeds = Seeds::from_run(config.seed);
    let split = make_split(
        train_set,
        &SplitSpec {
            target_class: config.target_class.clone(),
            percentage: config.percentage,
            seed: seeds.split,
            coverage_per_class: config.coverage_per_class,
        },
    )?;
    let vocab = Vocab::from_datasets(&[train_set]);
    let probe = TaggerModel::zeros(
        ModelConfig {
            init_scale: 0.0,
            ..config.model
        },
        vocab.clone(),
    );
    let d1 = probe.encode_dataset(&split.d1)?;
    let d2 = probe.encode_dataset(&split.d2)?;
    Ok(Prepared {
        d1,
        d2,
        dev: encode_eval_set(&probe, dev)?,
        test: encode_eval_set(&probe, test)?,
        vocab,
        split: split_stats(&split),
    })
}

#[allow(clippy::too_many_arguments)]
fn run(
    name: String,
    start: Checkpoint,
    data: &TrainData<'_>,
    dev: &[Encoded],
    test: &[Encoded],
    config: &TrainConfig,
    anchor: Option<&Anchor>,
    k: usize,
    fold_seed: u64,
) -> Result<(Checkpoint, RunReport), ExperimentError> {
    let start_step = start.step;
    let mut points = Vec::new();
    let mut eval_err = None;
    let outcome = train(start, data, dev, config, anchor, |step, model| {
        match evaluate(model, test, k, fold_seed) {
            Ok(r) => points.push(EvalPoint::from_report(step, r)),
            Err(e) => eval_err = Some(e),
        }
    })?;
    if let Some(e) = eval_err {
        return Err(e);
    }
    let best_step = outcome.best.step - start_step;
    let final_eval = points
        .iter()
        .find(|p| p.step == best_step)
        .cloned()
        .expect("best checkpoint was evaluated");
    Ok((
        outcome.best,
        RunReport {
            name,
            points,
            final_eval,
            total_steps: outcome.steps,
            best_step,
            stopped_early: outcome.stopped_early,
            degradation: None,
            steps_to_parity: None,
            relative_steps: None,
        },
    ))
}

/// Trains a fresh model on `old ∪ new` (everything visited every epoch).
#[allow(clippy::too_many_arguments)]
pub fn train_scratch(
    name: &str,
    model_config: ModelConfig,
    vocab: Vocab,
    data: &[&[Encoded]],
    dev: &[Encoded],
    test: &[Encoded],
    config: &TrainConfig,
    seeds: &Seeds,
    k: usize,
) -> Result<(Checkpoint, RunReport), ExperimentError> {
    let all: Vec<Encoded> = data.iter().flat_map(|d| d.iter().cloned()).collect();
    let model = TaggerModel::init(model_config, vocab, seeds.init);
    let train_data = TrainData {
        old: &[],
        new: &all,
        sampler: SamplerConfig {
            mode: SamplerMode::Replay,
            p: 0.0,
            batch_size: config.batch_size,
            seed: seed::derive(seeds.sampler, name),
        },
    };
    let mut cfg = config.clone();
    cfg.reg = RegConfig::none();
    run(
        name.to_string(),
        Checkpoint::fresh(model),
        &train_data,
        dev,
        test,
        &cfg,
        None,
        k,
        seeds.folds,
    )
}

/// Fine-tunes `prev` on D2 plus old data chosen by `method`.
#[allow(clippy::too_many_arguments)]
pub fn finetune(
    prev: &Checkpoint,
    method: &Method,
    d1: &[Encoded],
    d2: &[Encoded],
    dev: &[Encoded],
    test: &[Encoded],
    config: &TrainConfig,
    seeds: &Seeds,
    k: usize,
) -> Result<(Checkpoint, RunReport), ExperimentError> {
    let anchor = Anchor::from_checkpoint(prev);
    let mut cfg = config.clone();
    cfg.reg = method.reg;
    let data = TrainData {
        old: d1,
        new: d2,
        sampler: SamplerConfig {
            mode: method.sampler,
            p: method.p,
            batch_size: cfg.batch_size,
            seed: seeds.sampler,
        },
    };
    let anchor = (method.reg.kind != RegKind::None).then_some(&anchor);
    run(method.name(), prev.clone(), &data, dev, test, &cfg, anchor, k, seeds.folds)
}

/// Parity thresholds derived from the scratch model's final scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParityRecord {
    pub target_class: String,
    pub target_threshold: f64,
    pub em_threshold: f64,
    pub rule: ParityRule,
    pub steps_to_parity: Option<u64>,
    pub scratch_total_steps: u64,
    pub relative_steps: Option<f64>,
}

fn meets(point: &EvalPoint, target: &str, t_thr: f64, em_thr: f64, rule: ParityRule) -> bool {
    let target_ok = point.class(target).is_some_and(|s| s.mean >= t_thr);
    let em_ok = point.exact_match.mean >= em_thr;
    match rule {
        ParityRule::Both => target_ok && em_ok,
        ParityRule::Either => target_ok || em_ok,
    }
}

/// First evaluation point of `finetune` whose target-class TP-F1 and EM reach
/// the scratch means minus two standard deviations. The relative figure uses
/// the scratch run's best-checkpoint step as its total.
pub fn compare(
    finetune: &RunReport,
    scratch: &RunReport,
    target_class: &str,
    rule: ParityRule,
) -> ParityRecord {
    let s = &scratch.final_eval;
    let target_threshold = s
        .class(target_class)
        .map_or(f64::INFINITY, |c| c.mean - 2.0 * c.std);
    let em_threshold = s.exact_match.mean - 2.0 * s.exact_match.std;
    let steps_to_parity = finetune
        .points
        .iter()
        .find(|p| meets(p, target_class, target_threshold, em_threshold, rule))
        .map(|p| p.step);
    let scratch_total_steps = scratch.best_step.max(1);
    ParityRecord {
        target_class: target_class.to_string(),
        target_threshold,
        em_threshold,
        rule,
        steps_to_parity,
        scratch_total_steps,
        relative_steps: steps_to_parity.map(|s| 100.0 * s as f64 / scratch_total_steps as f64),
    }
}

/// Summary of a full data-patch experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub split: Vec<ClassCount>,
    pub prev: RunReport,
    pub scratch: RunReport,
    pub finetune: RunReport,
    /// λ chosen on dev (when a grid was searched).
    pub lambda: Option<f64>,
    pub lambda_search: Vec<LambdaTrial>,
    pub parity: ParityRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaTrial {
    pub lambda: f64,
    pub dev_degraded: usize,
    pub dev_exact_match: f64,
}

/// Finished M_prev and M_from_scratch runs, reusable across fine-tuning
/// methods.
pub struct Baselines {
    pub prev: Checkpoint,
    pub prev_report: RunReport,
    pub scratch_report: RunReport,
}

pub fn train_baselines(config: &ExperimentConfig, data: &Prepared) -> Result<Baselines, ExperimentError> {
    let seeds = Seeds::from_run(config.seed);
    let (prev, prev_report) = train_scratch(
        "prev",
        config.model,
        data.vocab.clone(),
        &[&data.d1],
        &data.dev,
        &data.test,
        &config.train,
        &seeds,
        config.folds,
    )?;
    let (_, scratch_report) = train_scratch(
        "scratch",
        config.model,
        data.vocab.clone(),
        &[&data.d1, &data.d2],
        &data.dev,
        &data.test,
        &config.train,
        &seeds,
        config.folds,
    )?;
    Ok(Baselines {
        prev,
        prev_report,
        scratch_report,
    })
}

/// Result of [`finetune_tuned`].
pub struct TunedFinetune {
    pub checkpoint: Checkpoint,
    pub report: RunReport,
    pub lambda: Option<f64>,
    pub lambda_search: Vec<LambdaTrial>,
}

/// Fine-tunes `prev` with `method`, choosing λ from `config.lambda_grid` on
/// dev when the method has a penalty (fewest dev-degraded classes, then
/// highest dev EM, then smallest λ). Degradation is measured against
/// `prev_test`, the previous model's test scores.
pub fn finetune_tuned(
    config: &ExperimentConfig,
    data: &Prepared,
    prev: &Checkpoint,
    prev_test: &EvalPoint,
    method: Method,
) -> Result<TunedFinetune, ExperimentError> {
    let seeds = Seeds::from_run(config.seed);
    let mut ft_cfg = config.finetune.clone();
    ft_cfg.freeze = config.freeze.clone();

    let mut trials = Vec::new();
    let mut chosen = method;
    if method.reg.kind != RegKind::None && !config.lambda_grid.is_empty() {
        let prev_dev = evaluate(&prev.model, &data.dev, config.folds, seeds.folds)?;
        let mut best: Option<(usize, f64)> = None;
        for &lambda in &config.lambda_grid {
            let mut m = method;
            m.reg.lambda = lambda;
            // Trial runs track the dev set in place of test.
            let (_, trial) = finetune(
                prev,
                &m,
                &data.d1,
                &data.d2,
                &data.dev,
                &data.dev,
                &ft_cfg,
                &seeds,
                config.folds,
            )?;
            let dev_eval = &trial.final_eval;
            let degraded = degraded_classes(&prev_dev.per_class, &dev_eval.per_class);
            let key = (degraded.degraded_count, dev_eval.exact_match.mean);
            trials.push(LambdaTrial {
                lambda,
                dev_degraded: key.0,
                dev_exact_match: key.1,
            });
            if best.is_none_or(|b| key.0 < b.0 || (key.0 == b.0 && key.1 > b.1)) {
                best = Some(key);
                chosen = m;
            }
        }
    }

    let (checkpoint, mut report) = finetune(
        prev,
        &chosen,
        &data.d1,
        &data.d2,
        &data.dev,
        &data.test,
        &ft_cfg,
        &seeds,
        config.folds,
    )?;
    report.degradation = Some(degraded_classes(&prev_test.per_class, &report.final_eval.per_class));
    Ok(TunedFinetune {
        checkpoint,
        report,
        lambda: (chosen.reg.kind != RegKind::None).then_some(chosen.reg.lambda),
        lambda_search: trials,
    })
}

/// Runs [`finetune_tuned`] from the baselines and fills in parity.
pub fn run_method(
    config: &ExperimentConfig,
    data: &Prepared,
    base: &Baselines,
    method: Method,
) -> Result<ExperimentReport, ExperimentError> {
    let tuned = finetune_tuned(config, data, &base.prev, &base.prev_report.final_eval, method)?;
    let mut report = tuned.report;
    let parity = compare(&report, &base.scratch_report, &config.target_class, config.parity);
    report.steps_to_parity = parity.steps_to_parity;
    report.relative_steps = parity.relative_steps;
    Ok(ExperimentReport {
        config: config.clone(),
        split: data.split.clone(),
        prev: base.prev_report.clone(),
        scratch: base.scratch_report.clone(),
        finetune: report,
        lambda: tuned.lambda,
        lambda_search: tuned.lambda_search,
        parity,
    })
}

/// Full experiment: split, both baselines, then the configured method.
pub fn run_experiment(
    config: &ExperimentConfig,
    train_set: &Dataset,
    dev: &Dataset,
    test: &Dataset,
) -> Result<ExperimentReport, ExperimentError> {
    if config.folds < 2 {
        return Err(ExperimentError::Config("folds must be at least 2".into()));
    }
    let data = prepare(config, train_set, dev, test)?;
    let base = train_baselines(config, &data)?;
    run_method(config, &data, &base, config.method)
}

/// Builtin-corpus sizes used by [`desk_config`].
pub fn desk_corpus(seed: u64) -> crate::datagen::GenConfig {
    crate::datagen::GenConfig {
        seed,
        n_train: 6000,
        n_test: 1500,
        n_dev: 600,
        tail_exponent: 1.0,
    }
}

/// Desk-scale data-patch setup on the builtin corpus: a 95% split of the
/// rare `SL:ORGANIZER_EVENT` slot, linear tagger, and the EWC + 20% sample
/// method with λ picked from {1, 10, 100}.
pub fn desk_config(seed: u64) -> ExperimentConfig {
    let train = TrainConfig {
        lr: 0.5,
        batch_size: 32,
        max_epochs: 40,
        ..TrainConfig::default()
    };
    ExperimentConfig {
        seed,
        model: ModelConfig::default(),
        finetune: train.clone(),
        train,
        target_class: "SL:ORGANIZER_EVENT".to_string(),
        percentage: 95.0,
        coverage_per_class: 1,
        method: Method::ewc_sample_20(10.0),
        lambda_grid: alloc::vec![1.0, 10.0, 100.0],
        folds: 5,
        parity: ParityRule::Both,
        freeze: FreezeMask::none(),
    }
}

/// One row of a sweep matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: String,
    pub p: f64,
    pub lambda: f64,
    pub seed: u64,
    pub exact_match: f64,
    pub exact_match_std: f64,
    pub tp_f1: f64,
    pub target_tp_f1: f64,
    pub target_tp_f1_std: f64,
    pub degraded: usize,
    pub total_steps: u64,
    pub steps_to_parity: Option<u64>,
    pub relative_steps: Option<f64>,
}

/// Axes of a sweep; every (method, p, λ) combination becomes one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepAxes {
    pub methods: Vec<String>,
    #[serde(default = "default_p_axis")]
    pub p: Vec<f64>,
    #[serde(default = "default_lambda_axis")]
    pub lambda: Vec<f64>,
}

pub fn default_p_axis() -> Vec<f64> {
    alloc::vec![0.0, 0.1, 0.2, 0.5, 1.0]
}

fn default_lambda_axis() -> Vec<f64> {
    alloc::vec![100.0]
}

/// One sweep cell: the config it runs with, including its derived seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub method_name: String,
    pub config: ExperimentConfig,
}

/// Expands axes into cells. Each cell's seed is derived from the template
/// seed and the cell's coordinates, so it can be rerun on its own.
pub fn sweep_cells(template: &ExperimentConfig, axes: &SweepAxes) -> Result<Vec<SweepCell>, ExperimentError> {
    let mut cells = Vec::new();
    for name in &axes.methods {
        for &p in &axes.p {
            for &lambda in &axes.lambda {
                let method = Method::by_name(name, p, lambda)
                    .ok_or_else(|| ExperimentError::Config(format!("unknown method `{name}`")))?;
                let mut config = template.clone();
                config.method = method;
                config.lambda_grid = Vec::new();
                let key = format!("{name}|{p}|{lambda}");
                // Kept below 2^63 so the seed fits a TOML integer.
                config.seed = seed::derive(template.seed, &key) >> 1;
                cells.push(SweepCell {
                    method_name: name.clone(),
                    config,
                });
            }
        }
    }
    Ok(cells)
}

pub fn sweep_row(cell: &SweepCell, report: &ExperimentReport) -> SweepRow {
    let fin = &report.finetune.final_eval;
    let target = fin.class(&cell.config.target_class);
    SweepRow {
        method: cell.method_name.clone(),
        p: cell.config.method.p,
        lambda: cell.config.method.reg.lambda,
        seed: cell.config.seed,
        exact_match: fin.exact_match.mean,
        exact_match_std: fin.exact_match.std,
        tp_f1: fin.global_f1,
        target_tp_f1: target.map_or(0.0, |s| s.mean),
        target_tp_f1_std: target.map_or(0.0, |s| s.std),
        degraded: report
            .finetune
            .degradation
            .as_ref()
            .map_or(0, |d| d.degraded_count),
        total_steps: report.finetune.total_steps,
        steps_to_parity: report.parity.steps_to_parity,
        relative_steps: report.parity.relative_steps,
    }
}
