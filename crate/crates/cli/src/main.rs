use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thinkgraph::eval::RewardAssignment;
use thinkgraph_cli::config::{Config, Overrides};
use thinkgraph_cli::pipeline::{parse_stages, run_stage, StageStatus};
use thinkgraph_cli::synthetic::gen_synthetic_corpus;
use thinkgraph_cli::validate::validate_corpus;

#[derive(Parser, Debug)]
#[command(name = "thinkgraph", version, about = "Run the EHR reasoning-data pipeline")]
#[command(args_conflicts_with_subcommands = true)]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Stage to run, or `all`.
    #[arg(long, default_value = "all")]
    stage: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Longest relation path searched between two concepts.
    #[arg(long)]
    max_depth: Option<usize>,
    /// How the format reward is assigned: `prose` or `equation`.
    #[arg(long)]
    reward_assignment: Option<RewardAssignment>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a sample corpus for schema errors, leakage and instruction drift.
    ValidateCorpus { path: PathBuf },
    /// Write a synthetic corpus with a ready-to-run config.
    GenSynthetic {
        #[arg(long)]
        patients: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run_pipeline(cli: &Cli) -> ExitCode {
    let Some(path) = &cli.config else {
        eprintln!("error stage=config code=3 kind=config message=\"--config is required\"");
        return ExitCode::from(3);
    };
    let stages = match parse_stages(&cli.stage) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error stage=config code=3 kind=config message={}", serde_json::json!(e));
            return ExitCode::from(3);
        }
    };
    let mut cfg = match Config::load(path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{}", e.report_line("config"));
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    Overrides {
        seed: cli.seed,
        max_depth: cli.max_depth,
        reward_assignment: cli.reward_assignment,
        jobs: cli.jobs,
    }
    .apply(&mut cfg);

    for stage in stages {
        match run_stage(stage, &cfg) {
            Ok(outcome) => {
                let status = match outcome.status {
                    StageStatus::Ran => "ran",
                    StageStatus::UpToDate => "up-to-date",
                };
                let counts: Vec<String> = outcome
                    .manifest
                    .counts
                    .iter()
                    .map(|(k, v)| format!("{k}={v}"))
                    .collect();
                println!("stage={stage} status={status} {}", counts.join(" "));
            }
            Err(e) => {
                eprintln!("{}", e.report_line(stage.name()));
                return ExitCode::from(e.exit_code() as u8);
            }
        }
    }
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match &cli.command {
        None => run_pipeline(&cli),
        Some(Command::ValidateCorpus { path }) => {
            let report = validate_corpus(path);
            for v in &report.violations {
                let id = v.sample_id.as_deref().unwrap_or("-");
                println!("{:?} {}:{} sample={id} {}", v.kind, v.file, v.line, v.message);
            }
            println!("{}", report.summary());
            if report.is_clean() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Some(Command::GenSynthetic { patients, seed, out }) => match gen_synthetic_corpus(*patients, *seed, out) {
            Ok(c) => {
                println!(
                    "wrote {} patients, {} rows to {}; config {}",
                    c.patients,
                    c.events,
                    c.root.display(),
                    c.config.display()
                );
                println!(
                    "planted pair: {:?} -> {:?}; connectable fraction {:.3}",
                    thinkgraph_cli::synthetic::PLANTED_CONTEXT,
                    thinkgraph_cli::synthetic::PLANTED_LABEL,
                    c.connectable_fraction
                );
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!(
                    "error stage=gen-synthetic code=1 kind=io message={}",
                    serde_json::json!(e.to_string())
                );
                ExitCode::from(1)
            }
        },
    }
}
