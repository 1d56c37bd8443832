use std::process::ExitCode;

use clap::Parser;
use emorec_cli::commands::Status;
use emorec_cli::{run, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Status::Success) => ExitCode::SUCCESS,
        Ok(Status::DomainFailure(msg)) => {
            eprintln!("emorec: {msg}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("emorec: {e:#}");
            ExitCode::from(2)
        }
    }
}
