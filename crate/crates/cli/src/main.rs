use std::process::ExitCode;

use clap::Parser;
use conenet_cli::{error_code, run, RunConfig};

fn main() -> ExitCode {
    let cfg = RunConfig::parse();
    let mut stdout = std::io::stdout().lock();
    match run(&cfg, &mut stdout) {
        Ok(outcome) => ExitCode::from(outcome.code() as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(error_code(&e) as u8)
        }
    }
}
