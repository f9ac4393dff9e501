mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use commands::{CommandOutcome, EXIT_USAGE};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).format_timestamp(None).init();

    let result = match &cli.command {
        Command::Train(a) => commands::train(a),
        Command::Infer(a) => commands::infer(a),
        Command::Eval(a) => commands::eval(a),
        Command::Attn(a) => commands::attn(a),
        Command::Synth(a) => commands::synth(a),
    };
    let outcome = result.unwrap_or_else(|e| CommandOutcome::from_error(&e));
    for path in &outcome.artifacts {
        log::debug!("wrote {}", path.display());
    }
    for line in &outcome.diagnostics {
        eprintln!("{line}");
    }
    if !outcome.summary.is_empty() {
        println!("{}", outcome.summary);
    }
    ExitCode::from(outcome.exit_code)
}
