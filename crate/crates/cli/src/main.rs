use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use osl_cli::commands::{run, Command, Run};
use osl_cli::config::ExperimentConfig;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Sub {
    GroundState,
    Spectrum,
    Functionals,
    Evolve,
    FixedPoint,
    Shoot,
    Sweep,
}

/// Solitary waves of the focusing NLS outside an obstacle.
#[derive(Parser, Debug)]
#[command(name = "osl", version)]
struct Cli {
    #[arg(value_enum)]
    command: Sub,
    /// Flat key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "osl_out")]
    out: PathBuf,
    /// Input field for functionals and evolve.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Bisection over alpha_plus (shoot).
    #[arg(long)]
    search: bool,
    /// Overrides as key=value or --key value.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    overrides: Vec<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut cfg = ExperimentConfig::default();
    if let Some(p) = &cli.config {
        let text = match std::fs::read_to_string(p) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("precondition: {}: {e}", p.display());
                return ExitCode::from(2);
            }
        };
        if let Err(e) = cfg.apply_text(&text) {
            eprintln!("precondition: {e}");
            return ExitCode::from(2);
        }
    }
    let mut search = cli.search;
    let mut overrides = Vec::new();
    for o in &cli.overrides {
        match o.as_str() {
            "--search" => search = true,
            "--alpha-plus" => overrides.push("--alpha_plus".to_string()),
            _ => overrides.push(o.clone()),
        }
    }
    if let Err(e) = cfg.apply_args(&overrides) {
        eprintln!("precondition: {e}");
        return ExitCode::from(2);
    }
    if search {
        cfg.search = true;
    }
    let cmd = match cli.command {
        Sub::GroundState => Command::GroundState,
        Sub::Spectrum => Command::Spectrum,
        Sub::Functionals => Command::Functionals,
        Sub::Evolve => Command::Evolve,
        Sub::FixedPoint => Command::FixedPoint,
        Sub::Shoot => Command::Shoot,
        Sub::Sweep => Command::Sweep,
    };
    match run(cmd, &Run { cfg: &cfg, out: cli.out, input: cli.input }) {
        Ok(summary) => {
            let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&summary).expect("json summary"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
