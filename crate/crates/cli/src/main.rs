use std::path::PathBuf;
use std::process::ExitCode;

use aftershock_cli::{execute, exit_code, resolve_config, Command, Invocation, ALL_CLASSES, SCHEMA};
use aftershock_core::ClassFilter;
use clap::{Parser, Subcommand, ValueEnum};

/// Extreme-event volatility analysis on minute bars.
#[derive(Parser)]
#[command(name = "aftershock", version)]
struct Cli {
    #[command(subcommand)]
    command: Option<Cmd>,
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// RNG seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Restrict to one event class.
    #[arg(long, global = true, value_enum)]
    class: Option<ClassArg>,
    /// Write `n/a` rows for empty event sets and exit 0.
    #[arg(long, global = true)]
    allow_empty: bool,
    /// Print the annotated configuration schema and exit.
    #[arg(long)]
    print_schema: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Detect and classify extreme events for every threshold.
    Detect,
    /// Fit the two-stage model to the event-aligned response curves.
    Fit,
    /// Run the unit-root, Granger and volume regressions on each stage.
    Test,
    /// Simulate response paths, ensemble statistics or a synthetic market.
    Simulate,
    /// Detect, fit, test and summarise.
    Report,
}

#[derive(ValueEnum, Clone, Copy)]
enum ClassArg {
    All,
    Endo,
    Exo,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.print_schema {
        print!("{SCHEMA}");
        return ExitCode::SUCCESS;
    }
    let Some(cmd) = cli.command else {
        eprintln!("error: a subcommand is required (see --help)");
        return ExitCode::from(2);
    };
    let command = match cmd {
        Cmd::Detect => Command::Detect,
        Cmd::Fit => Command::Fit,
        Cmd::Test => Command::Test,
        Cmd::Simulate => Command::Simulate,
        Cmd::Report => Command::Report,
    };
    let result = resolve_config(cli.config.as_deref(), cli.out.as_deref(), cli.seed).and_then(|config| {
        let classes = match cli.class {
            None => ALL_CLASSES.to_vec(),
            Some(ClassArg::All) => vec![ClassFilter::All],
            Some(ClassArg::Endo) => vec![ClassFilter::Endogenous],
            Some(ClassArg::Exo) => vec![ClassFilter::Exogenous],
        };
        execute(command, &Invocation { config, classes, allow_empty: cli.allow_empty })
    });
    match result {
        Ok(outcome) => {
            for f in outcome.files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
