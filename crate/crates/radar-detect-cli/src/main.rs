mod config;
mod jobs;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::Config;
use radar_detect::error::Result;

#[derive(Parser)]
#[command(name = "radar-detect", version, about = "Radar VRU detection pipeline")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Every subcommand takes the same pair: a job file and an optional
/// seed override.
#[derive(Args)]
struct Job {
    /// TOML or JSON job file
    config: PathBuf,
    /// Overrides the seed from the job file
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render synthetic benchmark scenes to dataset CSVs
    Generate(Job),
    /// Search filter and clustering parameters for the best mean V1
    Tune(Job),
    /// Extract the labeled per-sample feature matrix
    Features(Job),
    /// Rank features and run guided backward elimination per net
    Select(Job),
    /// Train the six-net classifier ensemble
    Train(Job),
    /// Score clustering against ground-truth instances
    EvalCluster(Job),
    /// Score classification on ground-truth clusters
    EvalClass(Job),
    /// Score the full detection pipeline
    EvalPipeline(Job),
    /// Render a summary table from saved evaluation reports
    Report(Job),
}

fn run(cmd: &Cmd) -> Result<()> {
    type Runner = fn(&Config, u64) -> Result<()>;
    let (job, runner): (&Job, Runner) = match cmd {
        Cmd::Generate(j) => (j, jobs::generate),
        Cmd::Tune(j) => (j, jobs::tune),
        Cmd::Features(j) => (j, jobs::features),
        Cmd::Select(j) => (j, jobs::select),
        Cmd::Train(j) => (j, jobs::train),
        Cmd::EvalCluster(j) => (j, jobs::eval_cluster),
        Cmd::EvalClass(j) => (j, jobs::eval_class),
        Cmd::EvalPipeline(j) => (j, jobs::eval_pipeline),
        Cmd::Report(j) => (j, jobs::report),
    };
    let cfg = Config::load(&job.config)?;
    let seed = job.seed.or(cfg.seed).unwrap_or(0);
    runner(&cfg, seed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
