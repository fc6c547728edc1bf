mod commands;
mod config;
mod error;
mod manifest;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use error::CliError;

#[derive(Parser)]
#[command(name = "stagecast", version, about = "Surrogate water-stage forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write its checkpoint, history and manifest.
    Train(Common),
    /// Score checkpoints (and an external series) on the test period.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Use the observed targets of the training windows as predictions.
        #[arg(long)]
        identity: bool,
    },
    /// Measure MAE changes under covariate noise.
    Perturb(Common),
    /// Time full test-set passes.
    Bench(Common),
    /// Render the JSON outputs in the output directory as Markdown.
    Report(Common),
    /// Write a synthetic river-like record as station CSV.
    Synth {
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2 * 8760)]
        hours: usize,
        #[arg(long, default_value = "2017-01-01T00:00:00")]
        start: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Flags shared by the pipeline commands. Each overrides the config file.
#[derive(Args)]
struct Common {
    /// Key-value config file or a run manifest.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Model checkpoint; repeat for several models.
    #[arg(long)]
    checkpoint: Vec<PathBuf>,
    /// External prediction CSV, e.g. hydraulic model output.
    #[arg(long)]
    external: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Past steps.
    #[arg(long)]
    w: Option<usize>,
    /// Forecast horizon.
    #[arg(long)]
    k: Option<usize>,
    /// Extreme-error threshold, feet.
    #[arg(long)]
    threshold: Option<f64>,
    /// Comma-separated noise fractions.
    #[arg(long)]
    fractions: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Model kind to train.
    #[arg(long)]
    model: Option<String>,
    /// Any config key, as KEY=VALUE; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        for pair in &self.set {
            cfg.set_pair(pair)?;
        }
        let path = |p: &PathBuf| p.display().to_string();
        let flags = [
            ("data", self.data.as_ref().map(path)),
            ("external", self.external.as_ref().map(path)),
            ("seed", self.seed.map(|v| v.to_string())),
            ("w", self.w.map(|v| v.to_string())),
            ("k", self.k.map(|v| v.to_string())),
            ("threshold", self.threshold.map(|v| v.to_string())),
            ("fractions", self.fractions.clone()),
            ("out", self.out.as_ref().map(path)),
            ("model", self.model.clone()),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let written = match cli.command {
        Command::Train(c) => commands::cmd_train(&c.resolve()?)?,
        Command::Evaluate { common, identity } => commands::cmd_evaluate(&common.resolve()?, &common.checkpoint, identity)?,
        Command::Perturb(c) => commands::cmd_perturb(&c.resolve()?, &c.checkpoint)?,
        Command::Bench(c) => commands::cmd_bench(&c.resolve()?, &c.checkpoint)?,
        Command::Report(c) => commands::cmd_report(&c.resolve()?)?,
        Command::Synth { out, hours, start, seed } => {
            commands::cmd_synth(&out, &start, hours, seed)?;
            vec![out]
        }
    };
    for p in written {
        log::info!("wrote {}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
