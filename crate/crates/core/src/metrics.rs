//! Tree-path F1, exact match, fold-based uncertainty and the 2σ forgetting
//! counter.
//!
//! A parse tree is scored through its tree paths: one path per slot node
//! (root-to-slot labels plus the slot's serialized contents) and one path per
//! intent that has no slot anywhere beneath it (empty value). Bare tokens
//! outside slots are ignored. Paths are compared as multisets and counts are
//! micro-averaged over the corpus.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::ops::{Add, AddAssign};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;
use crate::treebank::{serialize, Child, Node, NodeKind, ParseTree};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("gold has {gold} trees but predictions have {pred}")]
    LengthMismatch { gold: usize, pred: usize },
    #[error("{n} examples cannot fill {k} folds")]
    TooFewExamples { n: usize, k: usize },
    #[error("fold count must be at least 2, got {0}")]
    InvalidFoldCount(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TreePath {
    pub labels: Vec<String>,
    pub value: String,
}

impl TreePath {
    /// `labels` joined by `>`, then `=`, then the value.
    pub fn canonical(&self) -> String {
        let mut out = self.labels.join(">");
        out.push('=');
        out.push_str(&self.value);
        out
    }

    /// True if `class` is one of the path labels or is opened inside the
    /// (compositional) value.
    pub fn contains_class(&self, class: &str) -> bool {
        self.labels.iter().any(|l| l == class)
            || self
                .value
                .split_whitespace()
                .any(|piece| piece.strip_prefix('[') == Some(class))
    }

    /// Every class the path touches, deduplicated.
    pub fn classes(&self) -> Vec<String> {
        let mut out: Vec<String> = self.labels.clone();
        out.extend(
            self.value
                .split_whitespace()
                .filter_map(|p| p.strip_prefix('['))
                .map(|s| s.to_string()),
        );
        out.sort();
        out.dedup();
        out
    }
}

fn walk_paths(node: &Node, prefix: &mut Vec<String>, out: &mut Vec<TreePath>) {
    prefix.push(node.name().to_string());
    match node.kind() {
        NodeKind::Slot => out.push(TreePath {
            labels: prefix.clone(),
            value: node.children_string(),
        }),
        NodeKind::Intent => {
            if !node.has_slot_descendant() {
                out.push(TreePath {
                    labels: prefix.clone(),
                    value: String::new(),
                });
            }
        }
    }
    for child in node.children() {
        if let Child::Node(n) = child {
            walk_paths(n, prefix, out);
        }
    }
    prefix.pop();
}

/// All tree paths of `tree`, in pre-order. Duplicates are kept.
pub fn extract_paths(tree: &ParseTree) -> Vec<TreePath> {
    let mut out = Vec::new();
    walk_paths(tree.root(), &mut Vec::new(), &mut out);
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathCounts {
    pub correct: u64,
    pub predicted: u64,
    pub expected: u64,
}

impl Add for PathCounts {
    type Output = PathCounts;

    fn add(self, rhs: PathCounts) -> PathCounts {
        PathCounts {
            correct: self.correct + rhs.correct,
            predicted: self.predicted + rhs.predicted,
            expected: self.expected + rhs.expected,
        }
    }
}

impl AddAssign for PathCounts {
    fn add_assign(&mut self, rhs: PathCounts) {
        *self = *self + rhs;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TpF1Report {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub n_correct: u64,
    pub n_predicted: u64,
    pub n_expected: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl From<PathCounts> for TpF1Report {
    fn from(c: PathCounts) -> Self {
        let precision = ratio(c.correct, c.predicted);
        let recall = ratio(c.correct, c.expected);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        TpF1Report {
            precision,
            recall,
            f1,
            n_correct: c.correct,
            n_predicted: c.predicted,
            n_expected: c.expected,
        }
    }
}

/// Per-example scoring, computed once and summed over any subset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExampleScore {
    pub exact: bool,
    pub global: PathCounts,
    pub per_class: BTreeMap<String, PathCounts>,
}

/// Multiset of canonical path strings with, per path, the classes it touches.
fn path_bag(tree: &ParseTree) -> BTreeMap<String, (u64, Vec<String>)> {
    let mut bag: BTreeMap<String, (u64, Vec<String>)> = BTreeMap::new();
    for path in extract_paths(tree) {
        bag.entry(path.canonical())
            .or_insert_with(|| (0, path.classes()))
            .0 += 1;
    }
    bag
}

pub fn score_example(gold: &ParseTree, pred: &ParseTree) -> ExampleScore {
    let gold_bag = path_bag(gold);
    let pred_bag = path_bag(pred);
    let mut global = PathCounts::default();
    let mut per_class: BTreeMap<String, PathCounts> = BTreeMap::new();

    let mut add = |classes: &[String], counts: PathCounts| {
        global += counts;
        for class in classes {
            *per_class.entry(class.clone()).or_default() += counts;
        }
    };
    for (key, (g, classes)) in &gold_bag {
        let p = pred_bag.get(key).map_or(0, |e| e.0);
        add(
            classes,
            PathCounts {
                correct: (*g).min(p),
                predicted: p,
                expected: *g,
            },
        );
    }
    for (key, (p, classes)) in &pred_bag {
        if !gold_bag.contains_key(key) {
            add(
                classes,
                PathCounts {
                    correct: 0,
                    predicted: *p,
                    expected: 0,
                },
            );
        }
    }
    ExampleScore {
        exact: gold == pred,
        global,
        per_class,
    }
}

fn check_lengths(gold: &[ParseTree], pred: &[ParseTree]) -> Result<(), MetricsError> {
    if gold.len() != pred.len() {
        return Err(MetricsError::LengthMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    Ok(())
}

/// Micro-averaged tree-path F1 over aligned gold/predicted corpora.
pub fn tp_f1(gold: &[ParseTree], pred: &[ParseTree]) -> Result<TpF1Report, MetricsError> {
    check_lengths(gold, pred)?;
    let total = gold
        .iter()
        .zip(pred)
        .map(|(g, p)| score_example(g, p).global)
        .fold(PathCounts::default(), Add::add);
    Ok(total.into())
}

/// Tree-path F1 restricted to paths that contain `class`. An unknown class
/// yields all-zero counts.
pub fn per_class_tp_f1(
    gold: &[ParseTree],
    pred: &[ParseTree],
    class: &str,
) -> Result<TpF1Report, MetricsError> {
    check_lengths(gold, pred)?;
    let total = gold
        .iter()
        .zip(pred)
        .filter_map(|(g, p)| score_example(g, p).per_class.get(class).copied())
        .fold(PathCounts::default(), Add::add);
    Ok(total.into())
}

/// Fraction of aligned pairs with identical canonical serializations
/// (0 for empty corpora).
pub fn exact_match(gold: &[ParseTree], pred: &[ParseTree]) -> Result<f64, MetricsError> {
    check_lengths(gold, pred)?;
    let hits = gold
        .iter()
        .zip(pred)
        .filter(|(g, p)| serialize(g) == serialize(p))
        .count();
    Ok(ratio(hits as u64, gold.len() as u64))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    ExactMatch,
    TpF1,
    ClassTpF1(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertainScore {
    pub mean: f64,
    pub std: f64,
    pub n_folds: usize,
    pub per_fold: Vec<f64>,
}

impl UncertainScore {
    /// Sample mean and sample (n−1) standard deviation of `per_fold`.
    pub fn from_folds(per_fold: Vec<f64>) -> Self {
        let n = per_fold.len();
        let mean = if n == 0 {
            0.0
        } else {
            per_fold.iter().sum::<f64>() / n as f64
        };
        let std = if n < 2 {
            0.0
        } else {
            let ss: f64 = per_fold.iter().map(|v| (v - mean) * (v - mean)).sum();
            libm::sqrt(ss / (n - 1) as f64)
        };
        UncertainScore {
            mean,
            std,
            n_folds: n,
            per_fold,
        }
    }
}

/// Seeded shuffle of `0..n` cut into `k` contiguous folds; the first `n % k`
/// folds are one larger.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>, MetricsError> {
    if k < 2 {
        return Err(MetricsError::InvalidFoldCount(k));
    }
    if n < k {
        return Err(MetricsError::TooFewExamples { n, k });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed));
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        folds.push(order[start..start + len].to_vec());
        start += len;
    }
    Ok(folds)
}

/// Scores of a whole corpus, cached per example so that folds and per-class
/// restrictions are sums over subsets.
#[derive(Debug, Clone)]
pub struct CorpusEvaluation {
    scores: Vec<ExampleScore>,
    gold_classes: Vec<String>,
}

/// Fold-level summary of one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldedReport {
    pub exact_match: UncertainScore,
    pub tp_f1: UncertainScore,
    pub global: TpF1Report,
    pub per_class: BTreeMap<String, UncertainScore>,
}

impl CorpusEvaluation {
    pub fn new(gold: &[ParseTree], pred: &[ParseTree]) -> Result<Self, MetricsError> {
        check_lengths(gold, pred)?;
        let scores: Vec<ExampleScore> = gold
            .iter()
            .zip(pred)
            .map(|(g, p)| score_example(g, p))
            .collect();
        let mut gold_classes: Vec<String> = scores
            .iter()
            .flat_map(|s| {
                s.per_class
                    .iter()
                    .filter(|(_, c)| c.expected > 0)
                    .map(|(k, _)| k.clone())
            })
            .collect();
        gold_classes.sort();
        gold_classes.dedup();
        Ok(CorpusEvaluation {
            scores,
            gold_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Classes with at least one expected path in the gold corpus.
    pub fn gold_classes(&self) -> &[String] {
        &self.gold_classes
    }

    pub fn examples(&self) -> &[ExampleScore] {
        &self.scores
    }

    fn subset<'a>(&'a self, indices: &'a [usize]) -> impl Iterator<Item = &'a ExampleScore> + 'a {
        indices.iter().map(move |&i| &self.scores[i])
    }

    pub fn exact_match_on(&self, indices: &[usize]) -> f64 {
        let hits = self.subset(indices).filter(|s| s.exact).count();
        ratio(hits as u64, indices.len() as u64)
    }

    pub fn tp_f1_on(&self, indices: &[usize]) -> TpF1Report {
        self.subset(indices)
            .map(|s| s.global)
            .fold(PathCounts::default(), Add::add)
            .into()
    }

    pub fn class_tp_f1_on(&self, indices: &[usize], class: &str) -> TpF1Report {
        self.subset(indices)
            .filter_map(|s| s.per_class.get(class).copied())
            .fold(PathCounts::default(), Add::add)
            .into()
    }

    pub fn metric_on(&self, indices: &[usize], metric: &Metric) -> f64 {
        match metric {
            Metric::ExactMatch => self.exact_match_on(indices),
            Metric::TpF1 => self.tp_f1_on(indices).f1,
            Metric::ClassTpF1(class) => self.class_tp_f1_on(indices, class).f1,
        }
    }

    pub fn all_indices(&self) -> Vec<usize> {
        (0..self.scores.len()).collect()
    }

    pub fn fold_scores(&self, k: usize, metric: &Metric, seed: u64) -> Result<UncertainScore, MetricsError> {
        let folds = fold_assignment(self.scores.len(), k, seed)?;
        Ok(UncertainScore::from_folds(
            folds.iter().map(|f| self.metric_on(f, metric)).collect(),
        ))
    }

    /// EM, TP-F1 and per-class TP-F1 over the same `k` folds; per-class
    /// entries cover every gold class.
    pub fn folded_report(&self, k: usize, seed: u64) -> Result<FoldedReport, MetricsError> {
        let folds = fold_assignment(self.scores.len(), k, seed)?;
        let per_fold = |metric: &Metric| {
            UncertainScore::from_folds(folds.iter().map(|f| self.metric_on(f, metric)).collect())
        };
        let per_class = self
            .gold_classes
            .iter()
            .map(|c| (c.clone(), per_fold(&Metric::ClassTpF1(c.clone()))))
            .collect();
        Ok(FoldedReport {
            exact_match: per_fold(&Metric::ExactMatch),
            tp_f1: per_fold(&Metric::TpF1),
            global: self.tp_f1_on(&self.all_indices()),
            per_class,
        })
    }
}

/// Mean and sample standard deviation of `metric` over `k` seeded folds.
pub fn fold_scores(
    gold: &[ParseTree],
    pred: &[ParseTree],
    k: usize,
    metric: &Metric,
    seed: u64,
) -> Result<UncertainScore, MetricsError> {
    CorpusEvaluation::new(gold, pred)?.fold_scores(k, metric, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationEntry {
    pub class: String,
    pub before: UncertainScore,
    pub after: UncertainScore,
    pub degraded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationReport {
    pub entries: Vec<DegradationEntry>,
    pub degraded_count: usize,
    /// Classes present in only one of the two maps.
    pub skipped: Vec<String>,
}

impl DegradationReport {
    pub fn degraded(&self) -> impl Iterator<Item = &str> {
        self.entries
            .iter()
            .filter(|e| e.degraded)
            .map(|e| e.class.as_str())
    }
}

/// A class is degraded when its mean drops by more than twice the
/// before-model's fold standard deviation.
pub fn is_degraded(before: &UncertainScore, after: &UncertainScore) -> bool {
    before.mean - after.mean > 2.0 * before.std
}

pub fn degraded_classes(
    before: &BTreeMap<String, UncertainScore>,
    after: &BTreeMap<String, UncertainScore>,
) -> DegradationReport {
    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for (class, b) in before {
        match after.get(class) {
            Some(a) => entries.push(DegradationEntry {
                class: class.clone(),
                before: b.clone(),
                after: a.clone(),
                degraded: is_degraded(b, a),
            }),
            None => skipped.push(class.clone()),
        }
    }
    skipped.extend(after.keys().filter(|k| !before.contains_key(*k)).cloned());
    skipped.sort();
    let degraded_count = entries.iter().filter(|e| e.degraded).count();
    DegradationReport {
        entries,
        degraded_count,
        skipped,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::treebank::parse_top;
    use alloc::vec;

    const FIG1_GOLD: &str = "[IN:GET_DEPARTURE when should i leave for my \
        [SL:DESTINATION [IN:GET_EVENT [SL:NAME_EVENT dentist ] [SL:CATEGORY_EVENT appointment ] ] ] \
        at [SL:TIME_ARRIVAL 4 pm ] ]";
    const FIG1_PRED: &str = "[IN:GET_DEPARTURE when should i leave for \
        [SL:DESTINATION [IN:GET_EVENT [SL:NAME_EVENT my dentist ] [SL:CATEGORY_EVENT appointment ] ] ] \
        at [SL:TIME_ARRIVAL 4 pm ] ]";

    fn t(s: &str) -> ParseTree {
        parse_top(s).unwrap()
    }

    fn canon(tree: &ParseTree) -> Vec<String> {
        let mut v: Vec<String> = extract_paths(tree).iter().map(TreePath::canonical).collect();
        v.sort();
        v
    }

    #[test]
    fn figure_one_has_four_paths() {
        let mut expected = vec![
            "IN:GET_DEPARTURE>SL:TIME_ARRIVAL=4 pm".to_string(),
            "IN:GET_DEPARTURE>SL:DESTINATION=[IN:GET_EVENT [SL:NAME_EVENT dentist ] [SL:CATEGORY_EVENT appointment ] ]".to_string(),
            "IN:GET_DEPARTURE>SL:DESTINATION>IN:GET_EVENT>SL:NAME_EVENT=dentist".to_string(),
            "IN:GET_DEPARTURE>SL:DESTINATION>IN:GET_EVENT>SL:CATEGORY_EVENT=appointment".to_string(),
        ];
        expected.sort();
        assert_eq!(canon(&t(FIG1_GOLD)), expected);
    }

    #[test]
    fn slotless_intent_yields_empty_value_path() {
        assert_eq!(canon(&t("[IN:CANCEL never mind ]")), vec!["IN:CANCEL="]);
        assert_eq!(canon(&t("[IN:CANCEL ]")), vec!["IN:CANCEL="]);
    }

    #[test]
    fn bare_tokens_contribute_nothing() {
        assert_eq!(
            canon(&t("[IN:GET_WEATHER what is the weather [SL:DATE today ] ]")),
            vec!["IN:GET_WEATHER>SL:DATE=today"]
        );
    }

    #[test]
    fn nested_slotless_intent_gets_its_own_path() {
        assert_eq!(
            canon(&t("[IN:A [SL:B [IN:C x ] ] ]")),
            vec!["IN:A>SL:B=[IN:C x ]", "IN:A>SL:B>IN:C="]
        );
    }

    #[test]
    fn figure_one_perturbed_scores_half() {
        let report = tp_f1(&[t(FIG1_GOLD)], &[t(FIG1_PRED)]).unwrap();
        assert_eq!(
            (report.n_correct, report.n_predicted, report.n_expected),
            (2, 4, 4)
        );
        assert_eq!(report.f1, 0.5);
    }

    #[test]
    fn per_class_figure_one() {
        let gold = [t(FIG1_GOLD)];
        let pred = [t(FIG1_PRED)];
        let name = per_class_tp_f1(&gold, &pred, "SL:NAME_EVENT").unwrap();
        assert_eq!((name.n_correct, name.n_expected, name.n_predicted), (0, 2, 2));
        assert_eq!(name.f1, 0.0);
        let time = per_class_tp_f1(&gold, &pred, "SL:TIME_ARRIVAL").unwrap();
        assert_eq!((time.n_correct, time.n_expected), (1, 1));
        assert_eq!(time.f1, 1.0);
        let absent = per_class_tp_f1(&gold, &pred, "SL:NOPE").unwrap();
        assert_eq!(absent, PathCounts::default().into());
    }

    #[test]
    fn class_containment_is_label_exact() {
        let path = TreePath {
            labels: vec!["IN:A".into(), "SL:B".into()],
            value: "[IN:C [SL:NAME_EVENT x ] ]".into(),
        };
        assert!(path.contains_class("SL:NAME_EVENT"));
        assert!(path.contains_class("IN:C"));
        assert!(!path.contains_class("SL:NAME"));
    }

    #[test]
    fn wrong_value_scores_zero() {
        let r = tp_f1(
            &[t("[IN:GET_WEATHER [SL:DATE today ] ]")],
            &[t("[IN:GET_WEATHER [SL:DATE tomorrow ] ]")],
        )
        .unwrap();
        assert_eq!(r.f1, 0.0);
        assert_eq!(r.n_correct, 0);
    }

    #[test]
    fn duplicate_paths_are_clipped() {
        let gold = t("[IN:A [SL:B x ] [SL:B x ] ]");
        let pred = t("[IN:A [SL:B x ] ]");
        let r = tp_f1(&[gold], &[pred]).unwrap();
        assert_eq!((r.n_correct, r.n_predicted, r.n_expected), (1, 1, 2));
    }

    #[test]
    fn exact_match_cases() {
        let a = t("[IN:CANCEL never mind ]");
        let b = t("[IN:CANCEL never  mind ]");
        let c = t("[IN:CANCEL never again ]");
        assert_eq!(exact_match(&[a.clone(), a.clone()], &[b, c]).unwrap(), 0.5);
        assert_eq!(exact_match(std::slice::from_ref(&a), std::slice::from_ref(&a)).unwrap(), 1.0);
        assert_eq!(
            exact_match(std::slice::from_ref(&a), &[]),
            Err(MetricsError::LengthMismatch { gold: 1, pred: 0 })
        );
        assert_eq!(tp_f1(&[a], &[]).unwrap_err(), MetricsError::LengthMismatch { gold: 1, pred: 0 });
    }

    #[test]
    fn sample_std_of_fold_values() {
        let s = UncertainScore::from_folds(vec![0.8, 0.8, 0.7, 0.9, 0.8]);
        assert!((s.mean - 0.8).abs() < 1e-12);
        // sqrt(0.02 / 4)
        assert!((s.std - 0.070_710_678_118_654_76).abs() < 1e-12);
        let flat = UncertainScore::from_folds(vec![0.5; 5]);
        assert_eq!(flat.std, 0.0);
    }

    #[test]
    fn fold_sizes() {
        let folds = fold_assignment(1000, 5, 3).unwrap();
        assert!(folds.iter().all(|f| f.len() == 200));
        let folds = fold_assignment(12, 5, 3).unwrap();
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![3, 3, 2, 2, 2]);
        let mut all: Vec<usize> = folds.concat();
        all.sort();
        assert_eq!(all, (0..12).collect::<Vec<_>>());
        assert_eq!(fold_assignment(3, 5, 0), Err(MetricsError::TooFewExamples { n: 3, k: 5 }));
        assert_eq!(fold_assignment(10, 1, 0), Err(MetricsError::InvalidFoldCount(1)));
    }

    #[test]
    fn constant_metric_has_zero_std() {
        let trees: Vec<ParseTree> = (0..10).map(|_| t("[IN:A [SL:B x ] ]")).collect();
        let s = fold_scores(&trees, &trees, 5, &Metric::ExactMatch, 9).unwrap();
        assert_eq!((s.mean, s.std, s.n_folds), (1.0, 0.0, 5));
    }

    fn score(mean: f64, std: f64) -> UncertainScore {
        UncertainScore {
            mean,
            std,
            n_folds: 5,
            per_fold: vec![],
        }
    }

    #[test]
    fn degradation_threshold() {
        let before: BTreeMap<String, UncertainScore> = [
            ("A".to_string(), score(0.80, 0.05)),
            ("B".to_string(), score(0.80, 0.05)),
            ("C".to_string(), score(0.5, 0.0)),
        ]
        .into_iter()
        .collect();
        let after: BTreeMap<String, UncertainScore> = [
            ("A".to_string(), score(0.65, 0.01)),
            ("B".to_string(), score(0.72, 0.01)),
            ("D".to_string(), score(0.1, 0.0)),
        ]
        .into_iter()
        .collect();
        let report = degraded_classes(&before, &after);
        assert_eq!(report.degraded_count, 1);
        assert_eq!(report.degraded().collect::<Vec<_>>(), vec!["A"]);
        assert_eq!(report.skipped, vec!["C".to_string(), "D".to_string()]);
        assert_eq!(degraded_classes(&before, &before).degraded_count, 0);
    }
}
