use std::fs::OpenOptions;
use std::io::Write;
use std::process::ExitCode;

use anyhow::Context;
use blockipm::cli::{execute, Cli, CliError, Command};
use clap::Parser;

fn output_path(cli: &Cli) -> Option<&std::path::Path> {
    match &cli.command {
        Command::Solve(a) | Command::Bench(a) | Command::CheckDerivatives(a) | Command::Dims(a) => {
            a.output.as_deref()
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<u8> {
    let out = execute(cli)?;
    match output_path(cli) {
        Some(p) => {
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .with_context(|| format!("opening {}", p.display()))?;
            f.write_all(out.text.as_bytes())
                .with_context(|| format!("writing {}", p.display()))?;
        }
        None => print!("{}", out.text),
    }
    Ok(out.code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(e.downcast_ref::<CliError>().map_or(1, CliError::exit_code))
        }
    }
}
