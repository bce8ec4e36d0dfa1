mod config;
mod error;
mod output;
mod run;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};

use crate::config::load_config;
use crate::error::CliError;
use crate::run::Session;

/// Solve, check and simulate controlled G-expectation problems.
#[derive(Parser)]
#[command(name = "grobust", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured solvers and write fields, a summary and a comparison table.
    Solve(RunArgs),
    /// Write reference values at the probe points.
    Oracle(RunArgs),
    /// Solve, then check DPP residuals, tolerances and regularity.
    Validate(RunArgs),
    /// Scenario Monte Carlo lower bounds at the probe points.
    Simulate(RunArgs),
    /// Convergence table over `solver.n_x_list`.
    Table(RunArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Probe point `t,x`; repeatable, replaces `validate.probes`.
    #[arg(long = "probe", value_parser = parse_probe)]
    probes: Vec<(f64, f64)>,
    /// Reject unknown configuration keys.
    #[arg(long, default_value_t = true, action = ArgAction::Set, num_args = 0..=1, default_missing_value = "true")]
    strict: bool,
}

fn parse_probe(text: &str) -> Result<(f64, f64), String> {
    let (t, x) = text.split_once(',').ok_or_else(|| format!("expected `t,x`, got `{text}`"))?;
    let num = |s: &str| s.trim().parse::<f64>().map_err(|e| format!("`{s}`: {e}"));
    Ok((num(t)?, num(x)?))
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("GROBUST_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().map_err(|_| {
        CliError::config(
            format!("GROBUST_THREADS must be a non-negative integer, got `{raw}`"),
            vec!["GROBUST_THREADS".into()],
        )
    })?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(format!("thread pool: {e}"), vec!["GROBUST_THREADS".into()]))?;
    }
    Ok(())
}

fn execute(command: Command) -> Result<bool, CliError> {
    configure_threads()?;
    let (args, action): (RunArgs, fn(&Session) -> Result<bool, CliError>) = match command {
        Command::Solve(a) => (a, run::solve),
        Command::Oracle(a) => (a, run::oracle),
        Command::Validate(a) => (a, run::validate),
        Command::Simulate(a) => (a, run::simulate),
        Command::Table(a) => (a, table::table),
    };
    let (cfg, unknown) = load_config(&args.config, args.strict)?;
    for key in unknown {
        eprintln!("{}", serde_json::json!({ "warning": format!("ignoring unknown key `{key}`") }));
    }
    let session = Session::new(cfg, args.probes, args.out)?;
    action(&session)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probe_parsing() {
        assert_eq!(parse_probe("0, 1.5").unwrap(), (0.0, 1.5));
        assert!(parse_probe("0").is_err());
        assert!(parse_probe("a,1").is_err());
    }
}
