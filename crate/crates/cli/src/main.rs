use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    match espew_cli::run(espew_cli::Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("espew: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
