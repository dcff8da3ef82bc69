use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tdae_cli::commands::{self, Check};
use tdae_cli::error::{EXIT_CONFIG, EXIT_OK};
use tdae_cli::{CliError, Output, ReportFormat, Result, RunConfig};

/// Image immunization against differentiable editors.
#[derive(Debug, Parser)]
#[command(name = "tdae", version)]
struct Cli {
    /// TOML run configuration; built-in defaults when absent.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Exit with status 5 when any acceptance check fails.
    #[arg(long = "assert", global = true)]
    assert_checks: bool,
    #[arg(long, global = true, value_enum, default_value = "json")]
    format: ReportFormat,
    /// Report directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "reports")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Immunize one PNG or PPM image and write a side-car JSON next to it.
    Immunize { input: PathBuf, output: PathBuf },
    /// Intra-/cross-model, imperceptibility and flatness evaluations.
    Evaluate,
    /// The lambda/h sweep.
    Ablate,
    /// Gradient-call and wall-time comparison against the sampling reference.
    Bench,
    /// Print the fully expanded configuration.
    Config,
}

fn load(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
        cfg.validate()?;
    }
    Ok(cfg)
}

fn report(written: &[PathBuf], checks: &[Check], assert: bool) -> Result<()> {
    for p in written {
        println!("wrote {}", p.display());
    }
    for c in checks {
        println!("{c}");
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    if assert && failed > 0 {
        return Err(CliError::Assertion { failed });
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load(cli.config.as_deref(), cli.seed)?;
    let out = Output {
        dir: cli.out,
        format: cli.format,
    };
    match cli.command {
        Command::Immunize { input, output } => {
            let rec = commands::immunize(&cfg, &input, &output)?;
            println!(
                "wrote {} ({} iterations, {} gradient calls, linf {} levels)",
                output.display(),
                rec.records.len(),
                rec.grad_calls,
                rec.final_linf_levels
            );
            Ok(())
        }
        Command::Evaluate => {
            let (written, checks) = commands::evaluate(&cfg, &out)?;
            report(&written, &checks, cli.assert_checks)
        }
        Command::Ablate => {
            let (written, checks) = commands::ablate(&cfg, &out)?;
            report(&written, &checks, cli.assert_checks)
        }
        Command::Bench => {
            let (written, checks) = commands::bench(&cfg, &out)?;
            report(&written, &checks, cli.assert_checks)
        }
        Command::Config => {
            print!("{}", cfg.canonical()?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tdae: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
