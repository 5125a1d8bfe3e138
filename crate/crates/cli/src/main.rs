use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = evoarena_cli::Cli::parse();
    evoarena_cli::init_logging();
    ExitCode::from(evoarena_cli::run(cli))
}
