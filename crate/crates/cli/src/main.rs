use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use pilework_cli::{execute, Cli};

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(out) => {
            let line = if cli.json { out.to_json_line() } else { out.text };
            // A closed pipe (e.g. `| head`) is not an error.
            if !line.is_empty() {
                let _ = writeln!(std::io::stdout().lock(), "{line}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
