use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fdre::data::load_csv;
use fdre::experiment::{self, ConfigIssue, ExperimentConfig, RawConfig};
use fdre::FlowModel;

const VALIDATION_FAILURE: u8 = 1;
const RUNTIME_FAILURE: u8 = 2;

/// Featurized density ratio estimation experiments.
#[derive(Parser)]
#[command(name = "fdre", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Replace the config's seed list; repeat for several seeds.
        #[arg(long = "seed")]
        seeds: Vec<u64>,
        /// Override a config value, e.g. `--set flow.epochs=20`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
    },
    /// Check a config file without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write flow encodings of every row of a CSV file.
    Encode {
        /// A saved model directory or a `flow.json` file.
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Invalid(Vec<ConfigIssue>),
    Runtime(String),
}

impl From<fdre::Error> for Failure {
    fn from(e: fdre::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn load(path: &Path, sets: &[String], seeds: &[u64]) -> Result<ExperimentConfig, Failure> {
    let mut raw = RawConfig::read(path).map_err(|e| Failure::Invalid(vec![e]))?;
    for s in sets {
        raw.set(s).map_err(|e| Failure::Invalid(vec![e]))?;
    }
    if !seeds.is_empty() {
        raw.set_seeds(seeds);
    }
    raw.resolve().map_err(Failure::Invalid)
}

fn run(config: &Path, seeds: &[u64], sets: &[String]) -> Result<(), Failure> {
    let cfg = load(config, sets, seeds)?;
    let result = experiment::run(&cfg)?;
    let (json, csv) = result.write()?;
    for a in &result.aggregates {
        println!("{:<28} mean {:>12.6}  std {:>10.6}  n {}", a.metric, a.mean, a.std, a.n);
    }
    println!("wrote {} and {}", json.display(), csv.display());
    if result.failures.is_empty() {
        return Ok(());
    }
    let lines: Vec<String> = result.failures.iter().map(|f| format!("seed {}: {}", f.seed, f.error)).collect();
    Err(Failure::Runtime(lines.join("\n")))
}

fn encode(model: &Path, input: &Path, out: &Path) -> Result<(), Failure> {
    let flow_path = if model.is_dir() { model.join("flow.json") } else { model.to_path_buf() };
    let flow = FlowModel::load(&flow_path)?;
    let data = load_csv(input, None)?;
    let z = flow.encode(&data.features)?;
    let mut w = csv::Writer::from_path(out).map_err(fdre::Error::from)?;
    let header: Vec<String> = (1..=z.dim()).map(|j| format!("z{j}")).collect();
    w.write_record(&header).map_err(fdre::Error::from)?;
    for row in z.iter_rows() {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(fdre::Error::from)?;
    }
    w.flush().map_err(fdre::Error::from)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(VALIDATION_FAILURE) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match &cli.command {
        Command::Run { config, seeds, sets } => run(config, seeds, sets),
        Command::Validate { config } => load(config, &[], &[]).map(|_| println!("{}: ok", config.display())),
        Command::Encode { model, input, out } => encode(model, input, out),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(issues)) => {
            for i in issues {
                eprintln!("invalid config: {i}");
            }
            ExitCode::from(VALIDATION_FAILURE)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(RUNTIME_FAILURE)
        }
    }
}
