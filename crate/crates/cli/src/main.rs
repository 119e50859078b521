use std::io::{self, Write};
use std::process::ExitCode;

use clap::Parser;
use mutachain_cli::{execute, Cli, CliError};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut stdout = io::stdout().lock();
    match execute(cli, &mut stdout) {
        Ok(code) => {
            let _ = stdout.flush();
            ExitCode::from(code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if matches!(e, CliError::Script { .. } | CliError::Usage(_)) { 2 } else { 1 })
        }
    }
}
