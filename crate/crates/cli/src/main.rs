//! Command-line front end: simulation, pose, rigidity, fusion, evaluation
//! and visualization over files.

mod commands;

use std::error::Error as _;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use rigidscene::ErrorClass;

use commands::Command;

#[derive(Debug, Parser)]
#[command(name = "rigidscene", version, about = "Rigid scene flow toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Lib(rigidscene::Error),
}

impl From<rigidscene::Error> for CliError {
    fn from(e: rigidscene::Error) -> Self {
        CliError::Lib(e)
    }
}

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    match cli.command.run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(CliError::Lib(e)) => {
            eprint!("error: {e}");
            let mut source = e.source();
            while let Some(s) = source {
                eprint!(": {s}");
                source = s.source();
            }
            eprintln!();
            ExitCode::from(match e.class() {
                ErrorClass::Data => EXIT_DATA,
                ErrorClass::Numerical => EXIT_NUMERICAL,
            })
        }
    }
}
