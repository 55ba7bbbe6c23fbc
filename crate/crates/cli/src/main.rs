use std::process::ExitCode;

use amc_cli::{run, Args};
use clap::Parser;

fn main() -> ExitCode {
    let args = Args::parse();
    let progress = |done: usize, total: usize| eprintln!("cell {done}/{total} done");
    match run(&args, progress) {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("amc: error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
