mod args;
mod commands;
mod config;

use std::process::ExitCode;

use anyhow::Result;
use clap::Parser;
use toml::Table;

use args::{Cli, Command};

/// A bad flag value or config entry, as opposed to a failure while running.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(UsageError("--threads must be positive".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let name = cli.command.name();
    let file = match &cli.config {
        Some(p) => config::load_section(p, name)?,
        None => Table::new(),
    };
    match cli.command {
        Command::GenerateData(a) => commands::generate(config::merge(&a, file, name)?),
        Command::Partition(a) => commands::partition(config::merge(&a, file, name)?),
        Command::Train(a) => commands::train_cmd(config::merge(&a, file, name)?),
        Command::Eval(a) => commands::eval(config::merge(&a, file, name)?),
        Command::PerturbEval(a) => commands::perturb_eval(config::merge(&a, file, name)?),
        Command::ValidateManifest(a) => commands::validate(config::merge(&a, file, name)?),
    }
}

fn main() -> ExitCode {
    // clap prints usage and exits 2 on unknown commands or flags
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // one line: the whole cause chain joined
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
