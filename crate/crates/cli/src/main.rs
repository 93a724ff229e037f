use std::io::Write;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use surge_cli::{run, Cli, EXIT_INTERNAL, EXIT_USAGE};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE as u8),
            };
        }
    };
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    let outcome = std::panic::catch_unwind(|| run(&cli, &mut stdout.lock(), &mut stderr.lock()));
    let _ = stdout.lock().flush();
    match outcome {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
        Err(_) => ExitCode::from(EXIT_INTERNAL as u8),
    }
}
