//! Batch pipeline over `modssd-core`: `embed`, `sweep`, `fit`, `interpret`,
//! `report` and `synth`, sharing one TOML config and one run directory.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::artifacts::RunLock;
use crate::config::RunConfig;
pub use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "modssd", version, about = "Interaction-moderated supervised semantic differential")]
pub struct Cli {
    /// TOML run configuration; every key has a default.
    #[arg(short, long, global = true)]
    pub config: Option<PathBuf>,
    /// Run directory (overrides paths.output and SSD_OUTPUT_DIR).
    #[arg(short, long, global = true)]
    pub output: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides paths.data.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Overrides paths.vectors.
    #[arg(long, global = true)]
    pub vectors: Option<PathBuf>,
    /// Fixes K, overriding sweep.k.
    #[arg(short = 'k', long = "k", global = true)]
    pub k: Option<usize>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Tokenize, embed and remove the top component.
    Embed,
    /// Score candidate K values.
    Sweep,
    /// Fit the moderated regression and back-project gradients.
    Fit,
    /// Neighbors, clusters and snippets for every gradient pole.
    Interpret,
    /// Consolidated markdown report.
    Report,
    /// Generate a synthetic corpus, vectors and ground truth.
    Synth,
}

impl Cli {
    /// Config file (or defaults) with command-line overrides applied.
    pub fn resolve_config(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(o) = &self.output {
            cfg.paths.output = Some(o.clone());
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(d) = &self.data {
            cfg.paths.data = Some(d.clone());
        }
        if let Some(v) = &self.vectors {
            cfg.paths.vectors = Some(v.clone());
        }
        if let Some(k) = self.k {
            cfg.sweep.k = Some(k);
        }
        Ok(cfg)
    }
}

/// Runs one subcommand under the run-directory lock; returns a summary line.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    let cfg = cli.resolve_config()?;
    let run_dir = cfg.output_dir();
    let _lock = RunLock::acquire(&run_dir)?;
    match cli.command {
        Command::Embed => commands::embed(&cfg, &run_dir),
        Command::Sweep => commands::sweep(&cfg, &run_dir),
        Command::Fit => commands::fit(&cfg, &run_dir),
        Command::Interpret => commands::interpret(&cfg, &run_dir),
        Command::Report => commands::report(&cfg, &run_dir),
        Command::Synth => commands::synth(&cfg, &run_dir),
    }
}
