use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches};

use cdt_core::cli::{env_hint, run, Cli};

fn main() -> ExitCode {
    let matches = Cli::command().after_help(env_hint()).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
