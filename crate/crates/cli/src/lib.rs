//! Command-line orchestration for the pairgen pipeline.

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::GenerateStatus;
use crate::config::{Overrides, PipelineConfig, ScorerKind};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "pairgen", version, about = "Synthetic relevance data generation and evaluation")]
pub struct Cli {
    /// Pipeline configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed for sampling, mocking and training.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Concurrent generation workers.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the seeded document sample.
    Sample,
    /// Generate, filter and deduplicate synthetic queries.
    Generate {
        /// Stop after this many newly processed documents (resume later).
        #[arg(long)]
        halt_after: Option<usize>,
    },
    /// Mine BM25 hard negatives for relevant examples.
    Negatives {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Print the generation statistics table.
    Stats {
        /// Stats file, manifest or run directory.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Build and save the BM25 index.
    Index,
    /// Train the linear relevance baseline.
    Train {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Export training data for external trainers.
    Export {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Rank the evaluation pool and report NDCG.
    Evaluate {
        #[arg(long, value_enum)]
        scorer: Option<ScorerKind>,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Summarise statistics and metrics of a run directory.
    Report,
}

impl Cli {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            workers: self.workers,
            out: self.out.clone(),
        }
    }

    fn load_config(&self) -> Result<PipelineConfig, CliError> {
        let path = self
            .config
            .as_ref()
            .ok_or_else(|| CliError::Config("--config is required for this command".into()))?;
        PipelineConfig::load(path, &self.overrides())
    }

    /// `--out`, else the config's output directory, else `out`.
    fn out_dir(&self) -> Result<PathBuf, CliError> {
        if let Some(out) = &self.out {
            return Ok(out.clone());
        }
        match &self.config {
            Some(_) => Ok(self.load_config()?.out),
            None => Ok(PathBuf::from("out")),
        }
    }
}

/// Run a parsed command line and return the process exit code.
pub fn run(cli: &Cli) -> i32 {
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Sample => {
            let n = commands::cmd_sample(&cli.load_config()?)?;
            println!("sampled {n} documents");
        }
        Command::Generate { halt_after } => {
            let cfg = cli.load_config()?;
            match commands::cmd_generate(&cfg, *halt_after)? {
                GenerateStatus::Complete(manifest) => {
                    let stats = commands::StatsFile {
                        flow: manifest.flow,
                        labels: manifest.labels.clone(),
                        stages: manifest.stages.clone(),
                    };
                    let rows = commands::stats_rows(&stats);
                    print!("{}", pairgen::synthgen::render_stats_table(&rows, &stats.labels));
                    println!("wrote {}", cfg.out.display());
                }
                GenerateStatus::Halted { completed } => {
                    println!("halted after {completed} new documents; rerun to resume");
                }
            }
        }
        Command::Negatives { input } => {
            let n = commands::cmd_negatives(&cli.load_config()?, input.as_deref())?;
            println!("mined {n} hard negatives");
        }
        Command::Stats { input } => {
            let path = match input {
                Some(p) => p.clone(),
                None => cli.out_dir()?,
            };
            print!("{}", commands::cmd_stats(&path)?);
        }
        Command::Index => {
            let n = commands::cmd_index(&cli.load_config()?)?;
            println!("indexed {n} documents");
        }
        Command::Train { input } => {
            let report = commands::cmd_train(&cli.load_config()?, input.as_deref())?;
            println!(
                "final loss {:.6}, train accuracy {:.4}{}",
                report.epoch_losses.last().copied().unwrap_or(f64::NAN),
                report.train_accuracy,
                report.validation_accuracy.map(|v| format!(", validation accuracy {v:.4}")).unwrap_or_default()
            );
        }
        Command::Export { input } => {
            let (train, validation) = commands::cmd_export(&cli.load_config()?, input.as_deref())?;
            println!("exported {train} training and {validation} validation examples");
        }
        Command::Evaluate { scorer, model } => {
            for r in commands::cmd_evaluate(&cli.load_config()?, *scorer, model.as_deref())? {
                println!(
                    "NDCG@{} ({}): {:.4} over {} queries ({} zero-ideal, {} unranked)",
                    r.k,
                    r.gain,
                    r.mean,
                    r.evaluated(),
                    r.zero_ideal.len(),
                    r.missing_from_run.len()
                );
            }
        }
        Command::Report => print!("{}", commands::cmd_report(&cli.out_dir()?)?),
    }
    Ok(())
}
