//! `smp`: file-based pipeline over the scoring engine.
//!
//! Exit codes: 0 success, 2 invalid input or config, 3 I/O, 4 internal.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use smp_client::ClientError;
use smp_core::api::{ErrorCode, ServiceError};

#[derive(Parser)]
#[command(name = "smp", version, about = "Stock movement reward, curriculum and evaluation engine")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Common {
    /// JSON run configuration. Flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file (directory for `synth`). Defaults to standard output.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
pub struct Remote {
    /// Send the batch to a running service instead of computing in-process.
    #[arg(long, env = "SMP_SERVICE_URL")]
    remote: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Label a price CSV into samples JSONL.
    Label(commands::LabelArgs),
    /// Generate seeded synthetic prices, rollouts and votes.
    Synth(commands::SynthArgs),
    /// Parse responses and report format problems.
    Parse(commands::ParseArgs),
    /// Shape rewards for rollouts.
    Score(commands::ScoreArgs),
    /// Group-relative advantages and objectives.
    Advantage(commands::AdvantageArgs),
    /// Bin samples by rollout difficulty and order the medium ones.
    Curriculum(commands::CurriculumArgs),
    /// Majority-vote each ballot.
    Vote(commands::VoteArgs),
    /// Per-k, per-split and per-label report with the random bound.
    Eval(commands::EvalArgs),
    /// Run the HTTP scoring service.
    Serve(commands::ServeArgs),
}

#[tokio::main]
async fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Label(a) => commands::label(&cli.common, a),
        Command::Synth(a) => commands::synth(&cli.common, a),
        Command::Parse(a) => commands::parse(&cli.common, a),
        Command::Score(a) => commands::score(&cli.common, a).await,
        Command::Advantage(a) => commands::advantage(&cli.common, a).await,
        Command::Curriculum(a) => commands::curriculum(&cli.common, a),
        Command::Vote(a) => commands::vote(&cli.common, a).await,
        Command::Eval(a) => commands::eval(&cli.common, a),
        Command::Serve(a) => commands::serve(&cli.common, a).await,
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn service_code(e: &ServiceError) -> u8 {
    match e.code {
        ErrorCode::BadRequest | ErrorCode::ValidationFailed | ErrorCode::Overloaded => 2,
        ErrorCode::Internal => 4,
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<smp_core::Error>() {
            return if e.is_validation() { 2 } else { 3 };
        }
        if let Some(e) = cause.downcast_ref::<ServiceError>() {
            return service_code(e);
        }
        if let Some(e) = cause.downcast_ref::<ClientError>() {
            return match e {
                ClientError::Service { error, .. } => service_code(error),
                ClientError::BatchTooLarge { .. } => 2,
                ClientError::Transport { .. } => 3,
                ClientError::Server { .. } | ClientError::Decode(_) => 4,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 3;
        }
    }
    4
}
