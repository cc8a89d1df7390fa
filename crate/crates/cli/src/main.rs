use std::process::ExitCode;

use clap::Parser;
use terra_active_cli::Cli;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TERRA_ACTIVE_LOG", "warn")).init();
    let cli = Cli::parse();
    match terra_active_cli::run_cli(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
