use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use patchtune::checkpoint;
use patchtune::commands::{self, TrainOn};
use patchtune::data::{load_dataset, read_json, to_json, write_text, DataFormat};
use patchtune::{CliError, HarnessConfig};
use patchtune_core::dataset::SplitSpec;
use patchtune_core::experiment::{default_p_axis, ParityRule, RunReport, Seeds, SweepAxes};

#[derive(Parser)]
#[command(name = "patchtune", version, about = "Data-patch fine-tuning experiments for semantic parsers")]
struct Cli {
    /// TOML experiment config; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.lr=0.25`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the effective config as TOML.
    Config,
    /// Sample train/dev/test from the grammar and write them as TSV.
    Gen {
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Split a dataset into D1 and D2.
    Split {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = DataFormat::Top)]
        format: DataFormat,
        #[arg(long)]
        target: String,
        #[arg(long)]
        percentage: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        coverage: usize,
        /// Skip malformed lines instead of failing.
        #[arg(long)]
        lenient: bool,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Train from scratch on D1 or on D1 ∪ D2.
    Train {
        #[arg(long, value_enum, default_value_t = TrainOn::D1)]
        on: TrainOn,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Fine-tune a previous checkpoint with the configured method.
    Finetune {
        #[arg(long)]
        prev: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Scratch run report, for steps-to-parity.
        #[arg(long)]
        scratch: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the config's test set or on a dataset file.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = DataFormat::Canonical)]
        format: DataFormat,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Steps-to-parity between a fine-tune report and a scratch report.
    Compare {
        #[arg(long)]
        finetune: PathBuf,
        #[arg(long)]
        scratch: PathBuf,
        #[arg(long)]
        target: String,
        #[arg(long, value_parser = parse_rule, default_value = "both")]
        rule: ParityRule,
    },
    /// Run a (method × p × λ) grid and write one CSV row per cell.
    Sweep {
        #[arg(long, value_delimiter = ',', required = true)]
        methods: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        p: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        lambda: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Write each cell's config here.
        #[arg(long)]
        cells_dir: Option<PathBuf>,
    },
    /// Full experiment: split, both baselines and the configured method.
    Run {
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn parse_rule(s: &str) -> Result<ParityRule, String> {
    match s {
        "both" => Ok(ParityRule::Both),
        "either" => Ok(ParityRule::Either),
        _ => Err(format!("expected `both` or `either`, got `{s}`")),
    }
}

fn emit(text: &str, path: Option<&Path>) -> Result<(), CliError> {
    match path {
        Some(p) => write_text(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let config = || HarnessConfig::load(cli.config.as_deref(), &cli.overrides);
    match cli.command {
        Command::Config => emit(&config()?.to_toml(), None),
        Command::Gen { ref out_dir } => emit(&to_json(&commands::gen(&config()?, out_dir)?), None),
        Command::Split {
            ref input,
            format,
            ref target,
            percentage,
            seed,
            coverage,
            lenient,
            ref out_dir,
        } => {
            let (ds, skipped) = load_dataset(input, format, lenient)?;
            for s in &skipped {
                eprintln!("skipped line {}: {}", s.line, s.error);
            }
            let spec = SplitSpec {
                target_class: target.clone(),
                percentage,
                seed,
                coverage_per_class: coverage,
            };
            emit(&to_json(&commands::split(&ds, &spec, out_dir.as_deref())?), None)
        }
        Command::Train {
            on,
            ref checkpoint,
            ref report,
        } => {
            let (ckpt, run) = commands::train(&config()?, on)?;
            checkpoint::save(&ckpt, checkpoint)?;
            emit(&to_json(&run), report.as_deref())
        }
        Command::Finetune {
            ref prev,
            ref checkpoint,
            ref scratch,
            ref report,
        } => {
            let prev = checkpoint::load(prev)?;
            let scratch: Option<RunReport> = scratch.as_deref().map(read_json).transpose()?;
            let (ckpt, run) = commands::finetune(&config()?, &prev, scratch.as_ref())?;
            checkpoint::save(&ckpt, checkpoint)?;
            emit(&to_json(&run), report.as_deref())
        }
        Command::Evaluate {
            ref checkpoint,
            ref data,
            format,
            folds,
            ref report,
        } => {
            let cfg = config()?;
            let ckpt = checkpoint::load(checkpoint)?;
            let ds = match data {
                Some(p) => load_dataset(p, format, cfg.data.lenient)?.0,
                None => cfg.datasets()?.2,
            };
            let folds = folds.unwrap_or(cfg.experiment.folds);
            let seed = Seeds::from_run(cfg.experiment.seed).folds;
            let out = commands::evaluate_checkpoint(&ckpt, &ds, folds, seed)?;
            emit(&to_json(&out), report.as_deref())
        }
        Command::Compare {
            ref finetune,
            ref scratch,
            ref target,
            rule,
        } => {
            let ft: RunReport = read_json(finetune)?;
            let sc: RunReport = read_json(scratch)?;
            emit(&to_json(&commands::compare_reports(&ft, &sc, target, rule)), None)
        }
        Command::Sweep {
            ref methods,
            ref p,
            ref lambda,
            ref out,
            ref cells_dir,
        } => {
            let axes = SweepAxes {
                methods: methods.clone(),
                p: if p.is_empty() { default_p_axis() } else { p.clone() },
                lambda: if lambda.is_empty() { vec![100.0] } else { lambda.clone() },
            };
            let rows = commands::sweep(&config()?, &axes, cells_dir.as_deref(), |cell, row| {
                eprintln!(
                    "{} p={} lambda={}: em={:.4} degraded={}",
                    cell.method_name, row.p, row.lambda, row.exact_match, row.degraded
                );
            })?;
            write_text(out, &commands::sweep_csv(&rows)?)
        }
        Command::Run { ref report } => emit(&to_json(&commands::run(&config()?)?), report.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{msg}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
