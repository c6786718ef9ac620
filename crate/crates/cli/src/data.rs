//! Dataset, grammar and report files.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use patchtune_core::datagen::Grammar;
use patchtune_core::dataset::{
    parse_canonical_tsv, parse_top_tsv, snips_tree, snips_tree_from_spans, to_canonical_tsv,
    Dataset, DatasetError, Example, LineError, SnipsSegment, SnipsSpan,
};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    /// `raw<TAB>tokenized<TAB>tree`, as distributed with TOP.
    #[default]
    Top,
    /// `id<TAB>query<TAB>tree`, as written by this tool.
    Canonical,
    /// SNIPS-style JSON.
    Snips,
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads a dataset; in lenient mode bad lines are skipped and returned.
pub fn load_dataset(
    path: &Path,
    format: DataFormat,
    lenient: bool,
) -> Result<(Dataset, Vec<LineError>), CliError> {
    let text = read_text(path)?;
    Ok(match format {
        DataFormat::Top => parse_top_tsv(&text, lenient)?,
        DataFormat::Canonical => parse_canonical_tsv(&text, lenient)?,
        DataFormat::Snips => (parse_snips(&text)?, Vec::new()),
    })
}

#[derive(Debug, Deserialize)]
struct SnipsUtterance {
    #[serde(default)]
    data: Option<Vec<SnipsSegment>>,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    spans: Vec<SnipsSpan>,
}

#[derive(Debug, Deserialize)]
struct SnipsRecord {
    intent: String,
    #[serde(flatten)]
    utterance: SnipsUtterance,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum SnipsFile {
    List(Vec<SnipsRecord>),
    ByIntent(BTreeMap<String, Vec<SnipsUtterance>>),
}

fn snips_example(index: usize, intent: &str, u: &SnipsUtterance) -> Result<Example, DatasetError> {
    let tree = match (&u.data, &u.text) {
        (Some(segments), _) => snips_tree(intent, segments)?,
        (None, Some(text)) => snips_tree_from_spans(intent, text, &u.spans)?,
        (None, None) => {
            return Err(DatasetError::Schema(format!(
                "utterance {index} has neither `data` nor `text`"
            )))
        }
    };
    Ok(Example::from_tree(format!("snips:{index}"), tree))
}

/// Parses SNIPS JSON, either `{"Intent": [{"data": [...]}, ...]}` or a list
/// of `{"intent": ..., "data": [...]}` / `{"intent": ..., "text": ...,
/// "spans": [...]}` records. Ids are `snips:<n>` in file order (intents in
/// sorted order for the keyed form).
pub fn parse_snips(text: &str) -> Result<Dataset, DatasetError> {
    let file: SnipsFile = serde_json::from_str(text).map_err(|e| DatasetError::Schema(e.to_string()))?;
    let mut examples = Vec::new();
    match file {
        SnipsFile::List(records) => {
            for r in &records {
                examples.push(snips_example(examples.len(), &r.intent, &r.utterance)?);
            }
        }
        SnipsFile::ByIntent(map) => {
            for (intent, utterances) in &map {
                for u in utterances {
                    examples.push(snips_example(examples.len(), intent, u)?);
                }
            }
        }
    }
    Dataset::from_examples(examples)
}

pub fn load_grammar(path: &Path) -> Result<Grammar, CliError> {
    let grammar: Grammar = read_json(path)?;
    grammar.validate()?;
    Ok(grammar)
}

pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<(), CliError> {
    write_text(path, &to_canonical_tsv(ds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use patchtune_core::treebank::serialize;

    #[test]
    fn snips_segments_by_intent() {
        let json = r#"{"GetWeather": [{"data": [{"text": "weather "}, {"text": "today", "entity": "date"}]}]}"#;
        let ds = parse_snips(json).unwrap();
        assert_eq!(serialize(&ds.examples()[0].tree), "[IN:GET_WEATHER weather [SL:DATE today ] ]");
    }

    #[test]
    fn snips_span_records() {
        let json = r#"[
            {"intent": "GetWeather", "text": "weather today", "spans": [{"start": 8, "end": 13, "slot": "date"}]},
            {"intent": "Cancel", "text": "never mind"}
        ]"#;
        let ds = parse_snips(json).unwrap();
        assert_eq!(serialize(&ds.examples()[0].tree), "[IN:GET_WEATHER weather [SL:DATE today ] ]");
        assert_eq!(serialize(&ds.examples()[1].tree), "[IN:CANCEL never mind ]");
    }

    #[test]
    fn overlapping_spans_are_schema_errors() {
        let json = r#"[{"intent": "A", "text": "a b c", "spans": [
            {"start": 0, "end": 3, "slot": "x"}, {"start": 2, "end": 5, "slot": "y"}]}]"#;
        assert!(matches!(parse_snips(json), Err(DatasetError::Schema(_))));
        assert!(matches!(parse_snips("{not json"), Err(DatasetError::Schema(_))));
    }
}
