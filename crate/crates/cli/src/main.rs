use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use polmem_cli::{build_spec, run_experiment, validate_config, Mode, Overrides, ReportFormat};

/// Simulate single-photon storage in entangled atomic-ensemble pairs.
#[derive(Parser)]
#[command(name = "polmem", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its reports.
    Run(RunArgs),
    /// Check a configuration file and list its problems.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

/// Flags override the corresponding configuration-file values.
#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Defaults to `both`.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Defaults to `results`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated; defaults to `json`.
    #[arg(long, value_enum, value_delimiter = ',')]
    format: Option<Vec<ReportFormat>>,
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Validate { config } => {
            let diagnostics = validate_config(&config);
            for d in &diagnostics {
                eprintln!("{d}");
            }
            if diagnostics.is_empty() {
                println!("{}: ok", config.display());
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Command::Run(args) => {
            let overrides = Overrides {
                mode: args.mode,
                trials: args.trials,
                seed: args.seed,
                output_dir: args.out,
                report_formats: args.format,
            };
            let result = build_spec(&args.config, &overrides).and_then(|spec| {
                run_experiment(&spec)?;
                Ok(spec)
            });
            match result {
                Ok(spec) => {
                    println!("reports written to {}", spec.output_dir.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(e.exit_code())
                }
            }
        }
    }
}
