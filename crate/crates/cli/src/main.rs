//! `stode`: train, evaluate and verify continuous graph-ODE forecasters.
//!
//! Exit codes: 0 success, 1 usage, configuration or data error,
//! 2 verification failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use stode_core::data::SynthParams;
use stode_core::verify::Suite;

use crate::config::{resolve, RunConfig};

const OUTPUT_ENV: &str = "STODE_OUTPUT_DIR";

#[derive(Parser)]
#[command(name = "stode", version, about = "Continuous spatio-temporal graph ODE forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoint, log, resolved config and test report.
    Train(RunArgs),
    /// Evaluate a checkpoint on one split.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Forecast past the end of the data with a checkpoint.
    Forecast {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output CSV (default: <output-dir>/forecast.csv).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Generate the lagged-chain synthetic dataset.
    Synth(SynthArgs),
    /// Run the numerical verification suites.
    Verify {
        #[arg(long, default_value = "all")]
        suite: Suite,
        /// Also write the checks as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Flat JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set lr=0.01` or `--set widths=[2,3]`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    ablation: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, env = OUTPUT_ENV)]
    output_dir: Option<PathBuf>,
    /// Comma-separated multi-step horizons to report.
    #[arg(long, value_delimiter = ',')]
    horizons: Option<Vec<usize>>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut flags: Vec<(&str, Value)> = Vec::new();
        if let Some(p) = &self.data {
            flags.push(("data", Value::String(p.display().to_string())));
        }
        if let Some(a) = &self.ablation {
            flags.push(("ablation", a.clone().into()));
        }
        if let Some(e) = self.epochs {
            flags.push(("epochs", e.into()));
        }
        if let Some(s) = self.seed {
            flags.push(("seed", s.into()));
        }
        if let Some(d) = &self.output_dir {
            flags.push(("output_dir", Value::String(d.display().to_string())));
        }
        if let Some(h) = &self.horizons {
            flags.push(("horizons", h.clone().into()));
        }
        resolve(self.config.as_deref(), &self.sets, flags)
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = SynthParams::default().nodes)]
    nodes: usize,
    #[arg(long, default_value_t = SynthParams::default().steps)]
    steps: usize,
    #[arg(long, default_value_t = SynthParams::default().lag)]
    lag: usize,
    #[arg(long, default_value_t = SynthParams::default().noise)]
    noise: f64,
    #[arg(long, default_value_t = SynthParams::default().seed)]
    seed: u64,
    #[arg(long, default_value_t = SynthParams::default().coupling)]
    coupling: f64,
    #[arg(long, default_value_t = SynthParams::default().drive)]
    drive: f64,
    #[arg(long, env = OUTPUT_ENV, default_value = "stode-output")]
    output_dir: PathBuf,
}

enum Outcome {
    Done,
    VerificationFailed,
}

fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Train(args) => {
            let run = args.resolve()?;
            let out = commands::train_run(&run)?;
            log::info!(
                "artifacts: {}, {}, {}, {}",
                out.config.display(),
                out.checkpoint.display(),
                out.log.display(),
                out.report.display()
            );
        }
        Command::Eval { run, checkpoint, split } => {
            commands::eval(&run.resolve()?, &checkpoint, &split)?;
        }
        Command::Forecast {
            run,
            checkpoint,
            output,
        } => {
            let path = commands::forecast(&run.resolve()?, &checkpoint, output.as_deref())?;
            println!("{}", path.display());
        }
        Command::Synth(a) => {
            let params = SynthParams {
                nodes: a.nodes,
                steps: a.steps,
                lag: a.lag,
                noise: a.noise,
                seed: a.seed,
                coupling: a.coupling,
                drive: a.drive,
            };
            let (csv, edges) = commands::synth(&params, &a.output_dir)?;
            println!("{}\n{}", csv.display(), edges.display());
        }
        Command::Verify { suite, json } => {
            let checks = commands::verify(suite, json.as_deref())?;
            if checks.iter().any(|c| !c.pass) {
                return Ok(Outcome::VerificationFailed);
            }
        }
    }
    Ok(Outcome::Done)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::VerificationFailed) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
