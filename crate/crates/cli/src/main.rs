//! `robust-fm` command-line entry point; failures print a JSON error record
//! on stderr and exit nonzero.

use std::process::ExitCode;

use clap::Parser;

use robust_fm_cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(record) => {
            println!("{record}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.record());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
