//! Subcommands of the `tremorkit` pipeline and the configuration they share.

pub mod commands;
pub mod config;
pub mod error;
pub mod layout;
pub mod metrics;
pub mod pipeline;
pub mod treatment;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{ModelChoice, RunConfig};
pub use error::{CliError, CliResult};
pub use layout::Layout;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset: manifest, keypoints and optionally frames.
    Synth,
    /// Extract hand clips and write the coverage report.
    Preprocess,
    /// Compute pose features and list pose failures.
    Features,
    /// Write folds and train the selected models per fold.
    Train,
    /// Score test folds and run the statistical comparisons.
    Eval,
    /// t-SNE of network embeddings with per-class outlier envelopes.
    Embed,
    /// Markdown summary and plot-ready tables from the evaluation outputs.
    Report,
    /// Every stage in order.
    Run,
}

/// Flags override the matching keys of the config file.
#[derive(Debug, Parser)]
#[command(name = "tremorkit", version, about = "Tremor severity scoring pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// `seed`
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// `jobs`
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// `fold`
    #[arg(long, global = true)]
    pub fold: Option<usize>,
    /// `model`
    #[arg(long, global = true, value_enum)]
    pub model: Option<ModelChoice>,
    /// `data_dir`
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
    /// `output_dir`
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
}

impl Cli {
    pub fn resolve(&self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(j) = self.jobs {
            cfg.jobs = Some(j);
        }
        if let Some(f) = self.fold {
            cfg.fold = Some(f);
        }
        if let Some(m) = self.model {
            cfg.model = m;
        }
        if let Some(d) = &self.data_dir {
            cfg.data_dir = d.clone();
        }
        if let Some(o) = &self.output_dir {
            cfg.output_dir = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn run(command: Command, cfg: &RunConfig) -> CliResult<()> {
    let layout = Layout::new(&cfg.data_dir, &cfg.output_dir);
    match command {
        Command::Synth => commands::synth::run(cfg, &layout),
        Command::Preprocess => commands::preprocess::run(cfg, &layout),
        Command::Features => commands::features::run(cfg, &layout),
        Command::Train => commands::train::run(cfg, &layout),
        Command::Eval => commands::eval::run(cfg, &layout),
        Command::Embed => commands::embed::run(cfg, &layout),
        Command::Report => commands::report::run(cfg, &layout),
        Command::Run => {
            for c in [Command::Synth, Command::Preprocess, Command::Features, Command::Train, Command::Eval] {
                run(c, cfg)?;
            }
            if cfg.model.includes_net() {
                run(Command::Embed, cfg)?;
            }
            run(Command::Report, cfg)
        }
    }
}
