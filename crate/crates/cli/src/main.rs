use std::process::ExitCode;

use clap::Parser;
use ncgrpo_cli::commands::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut stdout = std::io::stdout().lock();
    match run(&cli, &mut stdout) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ncgrpo {}: {e}", cli.command.name());
            ExitCode::from(e.exit_code())
        }
    }
}
