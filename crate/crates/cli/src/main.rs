mod bank_cmd;
mod config;
mod error;
mod eval_cmd;
mod generate;
mod manifest;
mod session_cmd;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::CliResult;

/// Distractor generation and evaluation for multiple-choice questions.
#[derive(Debug, Parser)]
#[command(name = "dforge", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Validate and normalize a question bank.
    Ingest(bank_cmd::IngestArgs),
    /// Per-subject item and distractor counts.
    Stats(bank_cmd::StatsArgs),
    /// Write seq2seq training pairs for a masked-distractor model.
    PrepMt5(bank_cmd::PrepArgs),
    /// Choose the fixed example list for the static strategy.
    SelectStatic(bank_cmd::SelectArgs),
    /// Prompt a backend and parse distractors for a test set.
    Generate(config::GenerateArgs),
    /// Annotation sessions.
    #[command(subcommand)]
    Session(session_cmd::SessionCmd),
    /// Rates, significance and agreement from ratings.
    Eval(eval_cmd::EvalArgs),
}

fn run(cli: Cli) -> CliResult {
    match cli.cmd {
        Cmd::Ingest(a) => bank_cmd::ingest_cmd(a),
        Cmd::Stats(a) => bank_cmd::stats_cmd(a),
        Cmd::PrepMt5(a) => bank_cmd::prep_cmd(a),
        Cmd::SelectStatic(a) => bank_cmd::select_cmd(a),
        Cmd::Generate(a) => generate::run(a),
        Cmd::Session(c) => session_cmd::run(c),
        Cmd::Eval(a) => eval_cmd::run(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .init();
    dforge::llm::install_crypto_provider();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
