mod args;
mod commands;
mod config;

use std::io::IsTerminal;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches};
use tracing::Level;

use args::{Cli, Command};

fn main() -> ExitCode {
    let matches = Cli::command().get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let level = match cli.verbose {
        0 => Level::WARN,
        1 => Level::INFO,
        _ => Level::DEBUG,
    };
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .with_target(false)
        .with_ansi(std::io::stderr().is_terminal())
        .init();

    let (_, sub) = matches.subcommand().expect("a subcommand is required");
    let status = match &cli.command {
        Command::Run(a) => commands::run(sub, a),
        Command::Record { run, transcript_out } => commands::record(sub, run, transcript_out),
        Command::Validate { run, dry_run } => commands::validate(sub, run, *dry_run),
        Command::GenCases(a) => commands::gen_cases(sub, a),
        Command::Index(a) => commands::index(a),
        Command::Tree(c) => commands::tree(c),
        Command::Eval(a) => commands::eval(a),
    };
    match status {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
