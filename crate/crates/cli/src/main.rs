//! `occsim` command line: run, sweep, compare and validate scenarios.
//!
//! Every failure exits nonzero and prints `{"errors": [{"path", "message"}]}`
//! on stderr.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use occsim::engine::EngineError;
use occsim::experiment::{self, ExperimentError};
use occsim::output::{self, LogOptions, OutputError};
use occsim::scenario::{preset, ScenarioConfig, ScenarioError, PRESETS, SWEEP_AXES};
use occsim::ControllerKind;

#[derive(Parser)]
#[command(name = "occsim", version, about = "Cellular downlink real-time video rate-control simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and print its metrics CSV.
    Run {
        /// Scenario JSON file or the name of a built-in preset.
        config: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Write config.json, metrics.json and metrics.csv (plus requested logs) here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        log_decisions: bool,
        #[arg(long)]
        log_packets: bool,
    },
    /// Run one scenario per axis value and print the combined CSV.
    Sweep {
        config: String,
        #[arg(long)]
        axis: String,
        /// Comma-separated values; fractions such as `1/40` are accepted.
        #[arg(long, value_delimiter = ',', num_args = 1.., value_parser = parse_value)]
        values: Vec<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one scenario per controller with identical seeds.
    Compare {
        config: String,
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        controllers: Vec<ControllerKind>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a scenario and report every violation.
    Validate { config: String },
    /// List built-in presets and sweep axes.
    Presets,
}

fn parse_value(s: &str) -> Result<f64, String> {
    let s = s.trim();
    let parsed = match s.split_once('/') {
        Some((n, d)) => n
            .trim()
            .parse::<f64>()
            .and_then(|n| d.trim().parse::<f64>().map(|d| n / d)),
        None => s.parse::<f64>(),
    };
    match parsed {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(format!("`{s}` is not a number")),
    }
}

#[derive(Debug)]
struct Failure(Vec<(Option<String>, String)>);

impl Failure {
    fn message(message: impl Into<String>) -> Self {
        Failure(vec![(None, message.into())])
    }

    fn to_json(&self) -> serde_json::Value {
        let errors: Vec<_> = self
            .0
            .iter()
            .map(|(path, message)| json!({ "path": path, "message": message }))
            .collect();
        json!({ "errors": errors })
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Invalid(violations) => {
                Failure(violations.into_iter().map(|v| (Some(v.path), v.message)).collect())
            }
            ScenarioError::Parse { line, column, message } => {
                Failure(vec![(Some(format!("line {line}, column {column}")), message)])
            }
            ScenarioError::Io { path, message } => Failure(vec![(Some(path), message)]),
            other => Failure::message(other.to_string()),
        }
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Scenario(s) => s.into(),
            other => Failure::message(other.to_string()),
        }
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Scenario(s) => s.into(),
            ExperimentError::Engine(s) => s.into(),
            other => Failure::message(other.to_string()),
        }
    }
}

impl From<OutputError> for Failure {
    fn from(e: OutputError) -> Self {
        Failure::message(e.to_string())
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::message(e.to_string())
    }
}

/// Loads a scenario file, falling back to a preset of that name.
fn load(config: &str, seed: Option<u64>) -> Result<ScenarioConfig, Failure> {
    let mut c = match preset(config) {
        Some(p) if !Path::new(config).exists() => p,
        _ => ScenarioConfig::load(config)?,
    };
    if let Some(s) = seed {
        c.seed = s;
    }
    Ok(c)
}

fn execute(command: Command) -> Result<(), Failure> {
    let mut stdout = io::stdout().lock();
    match command {
        Command::Run {
            config,
            seed,
            out,
            log_decisions,
            log_packets,
        } => {
            let c = load(&config, seed)?;
            let result = occsim::run(&c)?;
            if let Some(dir) = out {
                let logs = LogOptions {
                    decisions: log_decisions,
                    packets: log_packets,
                };
                output::write_run_dir(&dir, &c, &result, logs)?;
            }
            output::write_metrics_csv(&mut stdout, &result.report.rows())?;
        }
        Command::Sweep {
            config,
            axis,
            values,
            seed,
            out,
        } => {
            let c = load(&config, seed)?;
            let runs = experiment::sweep(&c, &axis, &values)?;
            let rows: Vec<_> = runs.iter().map(|r| (r.value, r.output.report.rows())).collect();
            if let Some(dir) = out {
                for r in &runs {
                    let sub = dir.join(format!("{axis}={}", r.value));
                    output::write_run_dir(&sub, &r.config, &r.output, LogOptions::default())?;
                }
                output::write_sweep_csv(fs::File::create(dir.join("sweep.csv"))?, &axis, &rows)?;
            }
            output::write_sweep_csv(&mut stdout, &axis, &rows)?;
        }
        Command::Compare {
            config,
            controllers,
            seed,
            out,
        } => {
            let c = load(&config, seed)?;
            let runs = experiment::compare(&c, &controllers)?;
            let rows: Vec<_> = runs.iter().flat_map(|(_, o)| o.report.rows()).collect();
            if let Some(dir) = out {
                for (i, (kind, o)) in runs.iter().enumerate() {
                    let sub = dir.join(format!("{i}_{}", kind.name()));
                    output::write_run_dir(&sub, &c.with_controller(*kind), o, LogOptions::default())?;
                }
                output::write_metrics_csv(fs::File::create(dir.join("compare.csv"))?, &rows)?;
            }
            output::write_metrics_csv(&mut stdout, &rows)?;
        }
        Command::Validate { config } => {
            let c = load(&config, None)?;
            c.validate()?;
            writeln!(stdout, "{}", json!({ "ok": true, "scenario": c.name }))?;
        }
        Command::Presets => {
            let names: Vec<_> = PRESETS.iter().map(|p| p.0).collect();
            writeln!(stdout, "{}", json!({ "presets": names, "sweep_axes": SWEEP_AXES }))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let failure = Failure::message(e.render().to_string().trim_end());
            eprintln!("{}", failure.to_json());
            return ExitCode::from(2);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("{}", failure.to_json());
            ExitCode::FAILURE
        }
    }
}
