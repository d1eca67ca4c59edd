//! The `ccnet` command-line driver: dataset generation, training, evaluation,
//! inference, ablation sweeps and gate-curve export.

pub mod ablate;
pub mod args;
pub mod commands;
pub mod error;
pub mod state;

use std::ffi::OsString;

use clap::{CommandFactory, FromArgMatches};

pub use args::{Cli, Command};
pub use error::{CliError, ExitStatus};

/// Clap command with every configuration key appended to each `--help`.
pub fn command() -> clap::Command {
    let keys = format!("Configuration keys (set with --set key=value):\n{}", ccnet_core::config::key_help());
    let mut cmd = Cli::command().after_long_help(keys.clone());
    let names: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_string()).collect();
    for name in names {
        let keys = keys.clone();
        cmd = cmd.mut_subcommand(name, move |s| s.after_long_help(keys));
    }
    cmd
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { ExitStatus::Usage } else { ExitStatus::Success };
            let _ = e.print();
            return code as i32;
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitStatus::Usage as i32;
        }
    };
    match commands::dispatch(&cli) {
        Ok(()) => ExitStatus::Success as i32,
        Err(e) => {
            eprintln!("error: {e:#}");
            e.status() as i32
        }
    }
}
