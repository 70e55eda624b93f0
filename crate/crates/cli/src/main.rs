use std::process::ExitCode;

use clap::Parser;
use uab_cli::{Cli, Status};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match cli.execute() {
        Ok(Status::Complete) => ExitCode::SUCCESS,
        Ok(status @ Status::Partial { failed }) => {
            log::warn!("finished with {failed} failed items");
            ExitCode::from(status.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
