//! The `awt` binary: parses the command line and maps errors to exit codes
//! (0 success, 1 usage, 2 invalid configuration or data, 3 numeric failure).

use clap::error::ErrorKind;
use clap::Parser;

fn main() {
    let cli = match awt::cli::Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version are not failures.
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = awt::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(awt::cli::exit_code(&e));
    }
}
