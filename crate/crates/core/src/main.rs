//! `seqcomp` command line: synthetic corpus generation, descriptor
//! extraction, and the similarity-rating / year-prediction experiments.
//!
//! Exit codes: 0 on success, 1 on validation or I/O errors, 2 on solver
//! non-convergence. All file outputs are byte-deterministic for a fixed
//! config and seed; timing goes to stderr.

use clap::{Parser, Subcommand};
use seqcomp::pipeline::{self, ExperimentConfig};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

#[derive(Parser)]
#[command(
    name = "seqcomp",
    version,
    about = "Compression-based sequential-complexity descriptors for audio-feature time series"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// key=value configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Random seed (overrides the config)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for descriptor/distance computation (0 = all cores)
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory (overrides the config)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus
    Synth,
    /// Compute FCD/FMD descriptors for every track
    Descriptors,
    /// Run the pairwise similarity-rating experiment
    Similarity,
    /// Run the song-year prediction experiment
    Year,
}

fn run(cli: Cli) -> Result<String, pipeline::PipelineError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.apply("seed", &seed.to_string(), Path::new("."))?;
    }
    if let Some(jobs) = cli.jobs {
        cfg.apply("jobs", &jobs.to_string(), Path::new("."))?;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    match cli.command {
        Command::Synth => {
            let summary = pipeline::cmd_synth(&cfg)?;
            Ok(format!(
                "wrote {} tracks ({} feature files, {} ratings) under {}",
                summary.tracks,
                summary.feature_files,
                summary.ratings,
                cfg.out_dir.display()
            ))
        }
        Command::Descriptors => {
            let path = pipeline::cmd_descriptors(&cfg)?;
            Ok(format!("wrote {}", path.display()))
        }
        Command::Similarity => {
            let report = pipeline::cmd_similarity(&cfg)?;
            let stats: Vec<String> = report
                .statistics
                .iter()
                .map(|s| format!("{}={:.4} (se {:.4})", s.name, s.value, s.standard_error))
                .collect();
            Ok(format!(
                "similarity set {}: {} [train {}, test {}] -> {}",
                report.set,
                stats.join(", "),
                report.n_train,
                report.n_test,
                cfg.out_dir.display()
            ))
        }
        Command::Year => {
            let report = pipeline::cmd_year(&cfg)?;
            let stats: Vec<String> = report
                .statistics
                .iter()
                .map(|s| format!("{}={:.4} (se {:.4})", s.name, s.value, s.standard_error))
                .collect();
            Ok(format!(
                "year: {} [baseline mae {:.4}, train {}, test {}] -> {}",
                stats.join(", "),
                report.baseline_mae,
                report.n_train,
                report.n_test,
                cfg.out_dir.display()
            ))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are successes; usage mistakes are
            // validation errors (exit 1)
            let code = if e.exit_code() == 0 { 0 } else { 1 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let started = Instant::now();
    match run(cli) {
        Ok(message) => {
            println!("{message}");
            eprintln!("completed in {:.2}s", started.elapsed().as_secs_f64());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
