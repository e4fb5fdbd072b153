use std::process::ExitCode;

use clap::error::ErrorKind;

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    match mixflow_cli::execute(argv) {
        Ok(outcome) => ExitCode::from(outcome.exit_code()),
        Err(e) => {
            if let Some(clap_err) = e.downcast_ref::<clap::Error>() {
                let _ = clap_err.print();
                return match clap_err.kind() {
                    ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                    _ => ExitCode::from(1),
                };
            }
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
