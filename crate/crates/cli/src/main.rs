mod args;
mod commands;

use clap::Parser;

use args::{Cli, Command};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or input files: exit 1.
    Usage(String),
    /// Failure while running: exit 2.
    Runtime(String),
}

impl From<lse_dose::Error> for CliError {
    fn from(e: lse_dose::Error) -> Self {
        use lse_dose::Error as E;
        match e {
            E::InvalidParameter(_) | E::InvalidConfig(_) | E::Parse(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Conduct(a) => commands::conduct(a),
        Command::Serve(a) => commands::serve(a),
        Command::TheoryCheck(a) => commands::theory_check(a),
        Command::PriorPreview(a) => commands::prior_preview(a),
        Command::CalibrateR(a) => commands::calibrate_r(a),
    };
    match result {
        Ok(()) => {}
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            std::process::exit(1);
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            std::process::exit(2);
        }
    }
}
