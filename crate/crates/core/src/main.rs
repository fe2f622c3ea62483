use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    dgan::cli::main_with(dgan::cli::Cli::parse())
}
