use std::process::ExitCode;

use a3d_cli::args::Cli;
use a3d_cli::commands::execute;
use clap::Parser;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("a3d {}: {e}", cli.command.name());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
