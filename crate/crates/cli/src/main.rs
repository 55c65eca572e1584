use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = braidsort_cli::Cli::parse();
    match braidsort_cli::run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
