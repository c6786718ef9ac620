//! Examples, datasets, text ingestion, and the class-percentage split that
//! produces the "old" (D1) and "new" (D2) segments.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;
use crate::treebank::{classes_of, parse_top, serialize, Child, Node, ParseError, ParseTree};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DatasetError {
    #[error("duplicate example id `{0}`")]
    DuplicateId(String),
    #[error("example `{id}`: query tokens do not match the tree's tokens")]
    QueryMismatch { id: String },
    #[error("line {line}: {source}")]
    Parse { line: usize, source: ParseError },
    #[error("line {line}: {message}")]
    BadLine { line: usize, message: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("class `{0}` does not occur in the dataset")]
    ClassNotFound(String),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("class `{0}` cannot be covered in the old segment")]
    CoverageImpossible(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub query: String,
    pub tree: ParseTree,
    pub classes: BTreeSet<String>,
}

impl Example {
    /// Example whose query is the tree's token leaves.
    pub fn from_tree(id: impl Into<String>, tree: ParseTree) -> Self {
        let query = tree.tokens().join(" ");
        let classes = classes_of(&tree);
        Example {
            id: id.into(),
            query,
            tree,
            classes,
        }
    }

    /// Example with an explicit query, checked against the tree's tokens.
    pub fn with_query(
        id: impl Into<String>,
        query: &str,
        tree: ParseTree,
    ) -> Result<Self, DatasetError> {
        let id = id.into();
        if !query.split_whitespace().eq(tree.tokens()) {
            return Err(DatasetError::QueryMismatch { id });
        }
        Ok(Example::from_tree(id, tree))
    }

    pub fn tokens(&self) -> Vec<&str> {
        self.query.split_whitespace().collect()
    }

    pub fn has_class(&self, class: &str) -> bool {
        self.classes.contains(class)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    examples: Vec<Example>,
    class_index: BTreeMap<String, Vec<String>>,
    positions: BTreeMap<String, usize>,
}

impl Dataset {
    pub fn from_examples(examples: Vec<Example>) -> Result<Self, DatasetError> {
        let mut positions = BTreeMap::new();
        let mut class_index: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (i, ex) in examples.iter().enumerate() {
            if positions.insert(ex.id.clone(), i).is_some() {
                return Err(DatasetError::DuplicateId(ex.id.clone()));
            }
            for class in &ex.classes {
                class_index
                    .entry(class.clone())
                    .or_default()
                    .push(ex.id.clone());
            }
        }
        Ok(Dataset {
            examples,
            class_index,
            positions,
        })
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Example> {
        self.positions.get(id).map(|&i| &self.examples[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.positions.get(id).copied()
    }

    /// Class → ids of the examples containing it, in dataset order.
    pub fn class_index(&self) -> &BTreeMap<String, Vec<String>> {
        &self.class_index
    }

    pub fn classes(&self) -> BTreeSet<String> {
        self.class_index.keys().cloned().collect()
    }

    /// Number of examples containing `class`.
    pub fn class_count(&self, class: &str) -> usize {
        self.class_index.get(class).map_or(0, Vec::len)
    }

    pub fn trees(&self) -> Vec<ParseTree> {
        self.examples.iter().map(|e| e.tree.clone()).collect()
    }

    /// Concatenation of two datasets (ids must stay unique).
    pub fn union(&self, other: &Dataset) -> Result<Dataset, DatasetError> {
        let mut all = self.examples.clone();
        all.extend(other.examples.iter().cloned());
        Dataset::from_examples(all)
    }

    pub fn into_examples(self) -> Vec<Example> {
        self.examples
    }
}

/// A rejected input line, kept when loading leniently.
#[derive(Debug, Clone, PartialEq)]
pub struct LineError {
    pub line: usize,
    pub error: DatasetError,
}

fn load_lines<F>(text: &str, lenient: bool, mut parse_line: F) -> Result<(Dataset, Vec<LineError>), DatasetError>
where
    F: FnMut(usize, &[&str]) -> Result<Example, DatasetError>,
{
    let mut examples = Vec::new();
    let mut rejected = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let raw = raw.trim_end_matches('\r');
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        let result = if fields.len() != 3 {
            Err(DatasetError::BadLine {
                line,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            })
        } else {
            parse_line(line, &fields)
        };
        match result {
            Ok(ex) => examples.push(ex),
            Err(e) if lenient => rejected.push(LineError { line, error: e }),
            Err(e) => return Err(e),
        }
    }
    Ok((Dataset::from_examples(examples)?, rejected))
}

fn parse_tree_at(line: usize, text: &str) -> Result<ParseTree, DatasetError> {
    parse_top(text).map_err(|source| DatasetError::Parse { line, source })
}

fn with_line(line: usize, e: DatasetError) -> DatasetError {
    match e {
        DatasetError::QueryMismatch { id } => DatasetError::BadLine {
            line,
            message: format!("query tokens of `{id}` do not match the tree"),
        },
        other => other,
    }
}

/// Parses the TOP distribution's `raw<TAB>tokenized<TAB>tree` lines.
/// Ids are `line:<n>` (1-based).
pub fn parse_top_tsv(text: &str, lenient: bool) -> Result<(Dataset, Vec<LineError>), DatasetError> {
    load_lines(text, lenient, |line, f| {
        let tree = parse_tree_at(line, f[2])?;
        Example::with_query(format!("line:{line}"), f[1], tree).map_err(|e| with_line(line, e))
    })
}

/// Parses canonical `id<TAB>query<TAB>tree` lines.
pub fn parse_canonical_tsv(
    text: &str,
    lenient: bool,
) -> Result<(Dataset, Vec<LineError>), DatasetError> {
    load_lines(text, lenient, |line, f| {
        let tree = parse_tree_at(line, f[2])?;
        Example::with_query(f[0], f[1], tree).map_err(|e| with_line(line, e))
    })
}

/// Canonical `id<TAB>query<TAB>tree` export, one line per example.
pub fn to_canonical_tsv(dataset: &Dataset) -> String {
    let mut out = String::new();
    for ex in dataset.examples() {
        out.push_str(&ex.id);
        out.push('\t');
        out.push_str(&ex.query);
        out.push('\t');
        out.push_str(&serialize(&ex.tree));
        out.push('\n');
    }
    out
}

/// `GetWeather` → `GET_WEATHER`, `timeRange` → `TIME_RANGE`,
/// `served_dish` → `SERVED_DISH`.
pub fn snips_label(name: &str) -> String {
    let mut out = String::new();
    let mut prev: Option<char> = None;
    for c in name.chars() {
        if c.is_ascii_alphanumeric() {
            if c.is_ascii_uppercase()
                && prev.is_some_and(|p| p.is_ascii_lowercase() || p.is_ascii_digit())
            {
                out.push('_');
            }
            out.push(c.to_ascii_uppercase());
        } else if !out.ends_with('_') && !out.is_empty() {
            out.push('_');
        }
        prev = Some(c);
    }
    while out.ends_with('_') {
        out.pop();
    }
    out
}

/// One piece of a SNIPS utterance: text, optionally tagged with a slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnipsSegment {
    pub text: String,
    #[serde(default, alias = "entity", skip_serializing_if = "Option::is_none")]
    pub slot: Option<String>,
}

/// A character-offset slot span over an utterance's text (`end` exclusive).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnipsSpan {
    pub start: usize,
    pub end: usize,
    pub slot: String,
}

fn snips_tokens(text: &str) -> Result<Vec<Child>, DatasetError> {
    text.split_whitespace()
        .map(|t| {
            if t.contains(['[', ']']) {
                Err(DatasetError::Schema(format!("token `{t}` contains a bracket")))
            } else {
                Ok(Child::Token(t.to_string()))
            }
        })
        .collect()
}

fn label_error(e: ParseError) -> DatasetError {
    DatasetError::Schema(e.to_string())
}

/// Depth-2 TOP tree for a SNIPS utterance given as consecutive segments.
pub fn snips_tree(intent: &str, segments: &[SnipsSegment]) -> Result<ParseTree, DatasetError> {
    let mut children = Vec::new();
    for seg in segments {
        let tokens = snips_tokens(&seg.text)?;
        match &seg.slot {
            None => children.extend(tokens),
            Some(slot) => {
                if tokens.is_empty() {
                    return Err(DatasetError::Schema(format!("slot `{slot}` has empty text")));
                }
                let label = format!("SL:{}", snips_label(slot));
                children.push(Child::Node(Node::slot(&label, tokens).map_err(label_error)?));
            }
        }
    }
    let label = format!("IN:{}", snips_label(intent));
    ParseTree::new(Node::intent(&label, children).map_err(label_error)?).map_err(label_error)
}

/// Depth-2 TOP tree from text plus character spans. Spans must not overlap
/// and must fall on whitespace boundaries.
pub fn snips_tree_from_spans(
    intent: &str,
    text: &str,
    spans: &[SnipsSpan],
) -> Result<ParseTree, DatasetError> {
    let mut sorted: Vec<&SnipsSpan> = spans.iter().collect();
    sorted.sort_by_key(|s| (s.start, s.end));
    let mut segments = Vec::new();
    let mut cursor = 0;
    for span in sorted {
        if span.start >= span.end || span.end > text.len() {
            return Err(DatasetError::Schema(format!(
                "span {}..{} is out of range for `{text}`",
                span.start, span.end
            )));
        }
        if span.start < cursor {
            return Err(DatasetError::Schema(format!(
                "span {}..{} ({}) overlaps a previous span",
                span.start, span.end, span.slot
            )));
        }
        let on_boundary = |i: usize| {
            text.is_char_boundary(i)
                && (i == 0
                    || i == text.len()
                    || text[..i].ends_with(char::is_whitespace)
                    || text[i..].starts_with(char::is_whitespace))
        };
        if !on_boundary(span.start) || !on_boundary(span.end) {
            return Err(DatasetError::Schema(format!(
                "span {}..{} splits a token",
                span.start, span.end
            )));
        }
        segments.push(SnipsSegment {
            text: text[cursor..span.start].to_string(),
            slot: None,
        });
        segments.push(SnipsSegment {
            text: text[span.start..span.end].to_string(),
            slot: Some(span.slot.clone()),
        });
        cursor = span.end;
    }
    segments.push(SnipsSegment {
        text: text[cursor..].to_string(),
        slot: None,
    });
    snips_tree(intent, &segments)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub target_class: String,
    /// Share of the target-class examples moved to D2, in (0, 100].
    pub percentage: f64,
    pub seed: u64,
    #[serde(default = "default_coverage")]
    pub coverage_per_class: usize,
}

fn default_coverage() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitResult {
    pub d1: Dataset,
    pub d2: Dataset,
    /// Target-class examples drawn for D2 before the coverage pass.
    pub moved_count: usize,
    /// Ids moved back from D2 to D1 to cover classes missing from D1.
    pub coverage_ids: Vec<String>,
    pub warnings: Vec<String>,
}

/// Round half to even.
pub fn round_half_even(x: f64) -> usize {
    let floor = libm::floor(x);
    let frac = x - floor;
    let base = floor as usize;
    if frac > 0.5 || (frac == 0.5 && base % 2 == 1) {
        base + 1
    } else {
        base
    }
}

/// Moves a seeded uniform `round(P_C/100 · n_C)` of the target-class examples
/// to D2, then returns D2 examples to D1 until every source class occurs in
/// D1, preferring examples with the fewest target-class occurrences.
pub fn make_split(src: &Dataset, spec: &SplitSpec) -> Result<SplitResult, DatasetError> {
    if !(spec.percentage > 0.0 && spec.percentage <= 100.0) {
        return Err(DatasetError::InvalidSplit(format!(
            "percentage must be in (0, 100], got {}",
            spec.percentage
        )));
    }
    if spec.coverage_per_class == 0 {
        return Err(DatasetError::InvalidSplit(
            "coverage_per_class must be at least 1".into(),
        ));
    }
    let target = &spec.target_class;
    let holders: Vec<usize> = src
        .examples()
        .iter()
        .enumerate()
        .filter(|(_, e)| e.has_class(target))
        .map(|(i, _)| i)
        .collect();
    if holders.is_empty() {
        return Err(DatasetError::ClassNotFound(target.clone()));
    }

    let moved_count = round_half_even(spec.percentage * holders.len() as f64 / 100.0);
    let mut warnings = Vec::new();
    if moved_count == 0 {
        warnings.push(format!(
            "{}% of {} examples of {} rounds to 0; D2 is empty",
            spec.percentage,
            holders.len(),
            target
        ));
    }

    let mut rng = seed::rng(seed::derive(spec.seed, "split"));
    let mut in_d2 = alloc::vec![false; src.len()];
    for pick in rand::seq::index::sample(&mut rng, holders.len(), moved_count).into_iter() {
        in_d2[holders[pick]] = true;
    }

    let mut d1_classes: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, ex) in src.examples().iter().enumerate() {
        if !in_d2[i] {
            for c in &ex.classes {
                *d1_classes.entry(c.as_str()).or_default() += 1;
            }
        }
    }

    let mut coverage_ids = Vec::new();
    for class in src.class_index().keys() {
        if d1_classes.contains_key(class.as_str()) {
            continue;
        }
        let mut candidates: Vec<(usize, usize)> = src
            .examples()
            .iter()
            .enumerate()
            .filter(|(i, e)| in_d2[*i] && e.has_class(class))
            .map(|(i, e)| (e.tree.count_label(target), i))
            .collect();
        candidates.sort();
        for &(_, i) in candidates.iter().take(spec.coverage_per_class) {
            in_d2[i] = false;
            coverage_ids.push(src.examples()[i].id.clone());
            for c in &src.examples()[i].classes {
                *d1_classes.entry(c.as_str()).or_default() += 1;
            }
        }
        if !d1_classes.contains_key(class.as_str()) {
            return Err(DatasetError::CoverageImpossible(class.clone()));
        }
    }

    let (mut d1, mut d2) = (Vec::new(), Vec::new());
    for (i, ex) in src.examples().iter().enumerate() {
        if in_d2[i] {
            d2.push(ex.clone());
        } else {
            d1.push(ex.clone());
        }
    }
    Ok(SplitResult {
        d1: Dataset::from_examples(d1)?,
        d2: Dataset::from_examples(d2)?,
        moved_count,
        coverage_ids,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCount {
    pub class: String,
    pub count_d1: usize,
    pub count_d2: usize,
}

/// Per-class example counts in D1 and D2, sorted by class.
pub fn split_stats(result: &SplitResult) -> Vec<ClassCount> {
    let classes: BTreeSet<String> = result
        .d1
        .classes()
        .into_iter()
        .chain(result.d2.classes())
        .collect();
    classes
        .into_iter()
        .map(|class| ClassCount {
            count_d1: result.d1.class_count(&class),
            count_d2: result.d2.class_count(&class),
            class,
        })
        .collect()
}
