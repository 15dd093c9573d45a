mod commands;

use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches};
use dvc_core::ErrorKind;

use commands::{Cli, Failure};

fn main() -> ExitCode {
    let cmd = Cli::command().after_long_help(commands::long_help());
    let cli = match cmd.try_get_matches().and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind as K;
            if matches!(e.kind(), K::DisplayHelp | K::DisplayVersion | K::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let detail = e.to_string();
            let first = detail.lines().next().unwrap_or("").trim_start_matches("error: ");
            return fail(&Failure { kind: ErrorKind::Usage, detail: first.to_string() });
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => fail(&f),
    }
}

fn fail(f: &Failure) -> ExitCode {
    let (code, exit) = match f.kind {
        ErrorKind::Usage => ("usage", 1),
        ErrorKind::Data => ("data", 2),
        ErrorKind::Numeric => ("numeric", 3),
    };
    eprintln!("ERR:{code}:{}", f.detail.replace('\n', " "));
    ExitCode::from(exit)
}
