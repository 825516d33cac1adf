use std::process::ExitCode;

use clap::Parser;
use wavedepth::cli::{execute, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("wavedepth: {e}");
            ExitCode::FAILURE
        }
    }
}
