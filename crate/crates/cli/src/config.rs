//! TOML experiment configuration.
//!
//! A config file holds any subset of the keys printed by `patchtune config`;
//! missing keys take their defaults. `--set key.path=value` overrides are
//! applied after the file, with `value` parsed as a TOML value (bare words
//! fall back to strings). Unknown keys are rejected.

use std::path::{Path, PathBuf};

use patchtune_core::datagen::{builtin_grammar, GenConfig, Grammar};
use patchtune_core::dataset::Dataset;
use patchtune_core::experiment::{desk_config, desk_corpus, ExperimentConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::data::{load_dataset, load_grammar, DataFormat};
use crate::error::CliError;

/// Where train/dev/test come from: dataset files, or a grammar (the builtin
/// one unless `grammar` is set) sampled with `gen`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dev: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    #[serde(default)]
    pub format: DataFormat,
    #[serde(default)]
    pub lenient: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grammar: Option<PathBuf>,
    pub gen: GenConfig,
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec {
            train: None,
            dev: None,
            test: None,
            format: DataFormat::Top,
            lenient: false,
            grammar: None,
            gen: desk_corpus(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessConfig {
    pub data: DataSpec,
    #[serde(flatten)]
    pub experiment: ExperimentConfig,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            data: DataSpec::default(),
            experiment: desk_config(7),
        }
    }
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn unknown_keys(given: &Table, known: &Table, prefix: &str, out: &mut Vec<String>) {
    for (k, v) in given {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (v, known.get(k)) {
            (_, None) => out.push(path),
            (Value::Table(g), Some(Value::Table(kn))) => unknown_keys(g, kn, &path, out),
            _ => {}
        }
    }
}

fn parse_override(spec: &str) -> Result<(Vec<String>, Value), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{spec}` is not key=value")))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.iter().any(String::is_empty) {
        return Err(CliError::Config(format!("bad override key `{key}`")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    Ok((path, value))
}

fn set_path(table: &mut Table, path: &[String], value: Value) -> Result<(), CliError> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = table;
    for p in parents {
        let entry = cur.entry(p.clone()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("`{p}` is not a table")))?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}

fn to_table<T: Serialize>(v: &T) -> Table {
    match Value::try_from(v).expect("config serializes to TOML") {
        Value::Table(t) => t,
        _ => unreachable!("configs are tables"),
    }
}

impl HarnessConfig {
    /// Defaults, then `file_text`, then `overrides`.
    pub fn from_parts(file_text: Option<&str>, overrides: &[String]) -> Result<Self, CliError> {
        let mut table = to_table(&HarnessConfig::default());
        if let Some(text) = file_text {
            let file: Table = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
            merge(&mut table, file);
        }
        for o in overrides {
            let (path, value) = parse_override(o)?;
            set_path(&mut table, &path, value)?;
        }
        let config: HarnessConfig = Value::Table(table.clone())
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        let mut unknown = Vec::new();
        unknown_keys(&table, &to_table(&config), "", &mut unknown);
        if !unknown.is_empty() {
            return Err(CliError::Config(format!("unknown keys: {}", unknown.join(", "))));
        }
        config.validate()?;
        Ok(config)
    }

    /// Loads `path` (if any) with overrides; relative data paths are taken
    /// relative to the config file.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let text = path.map(crate::data::read_text).transpose()?;
        let mut config = HarnessConfig::from_parts(text.as_deref(), overrides)?;
        if let Some(dir) = path.and_then(Path::parent) {
            let d = &mut config.data;
            for p in [&mut d.train, &mut d.dev, &mut d.test, &mut d.grammar].into_iter().flatten() {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let e = &self.experiment;
        let bad = |m: String| Err(CliError::Config(m));
        if e.folds < 2 {
            return bad("folds must be at least 2".into());
        }
        if !(e.percentage > 0.0 && e.percentage <= 100.0) {
            return bad(format!("percentage must be in (0, 100], got {}", e.percentage));
        }
        if !(0.0..=1.0).contains(&e.method.p) {
            return bad(format!("method.p must be in [0, 1], got {}", e.method.p));
        }
        e.train.validate().map_err(|x| CliError::Config(x.to_string()))?;
        e.finetune.validate().map_err(|x| CliError::Config(x.to_string()))?;
        e.method.reg.validate().map_err(|x| CliError::Config(x.to_string()))?;
        let d = &self.data;
        let files = [&d.train, &d.dev, &d.test];
        let given = files.iter().filter(|f| f.is_some()).count();
        if given != 0 && given != 3 {
            return bad("data.train, data.dev and data.test must be given together".into());
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&to_table(self)).expect("config serializes to TOML")
    }

    pub fn grammar(&self) -> Result<Grammar, CliError> {
        match &self.data.grammar {
            Some(p) => load_grammar(p),
            None => Ok(builtin_grammar()),
        }
    }

    /// Train, dev and test sets named by the config.
    pub fn datasets(&self) -> Result<(Dataset, Dataset, Dataset), CliError> {
        let d = &self.data;
        match (&d.train, &d.dev, &d.test) {
            (Some(tr), Some(dv), Some(te)) => {
                let load = |p: &PathBuf| {
                    if !p.exists() {
                        return Err(CliError::Config(format!("dataset not found: {}", p.display())));
                    }
                    Ok(load_dataset(p, d.format, d.lenient)?.0)
                };
                Ok((load(tr)?, load(dv)?, load(te)?))
            }
            _ => {
                let grammar = self.grammar()?;
                if d.gen.n_dev == 0 {
                    return Err(CliError::Config("data.gen.n_dev must be at least 1".into()));
                }
                Ok(patchtune_core::datagen::generate_corpus(&grammar, &d.gen)?)
            }
        }
    }
}
