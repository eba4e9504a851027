use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sla_ledger::{list_reports, replay, run_scenario, show_report, verify_export, Error};

#[derive(Parser)]
#[command(name = "sla-ledger", version, about = "Run and audit SLA ledger scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its log, chains, reports and metrics.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Stop before this tick.
        #[arg(long)]
        until: Option<u64>,
    },
    /// Recompute metrics from a saved event log.
    Replay { log: PathBuf },
    /// Inspect the reports of a run directory.
    Report {
        #[command(subcommand)]
        action: ReportCommand,
    },
    /// Check a chain export for tampering.
    Verify { export: PathBuf },
}

#[derive(Subcommand)]
enum ReportCommand {
    Ls { run_dir: PathBuf },
    Show { run_dir: PathBuf, name: String },
}

fn json(v: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(v).expect("serialisable")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            scenario,
            out,
            seed,
            until,
        } => run_scenario(&scenario, &out, seed, until).map(|o| println!("{}", json(&o.metrics))),
        Command::Replay { log } => replay(&log).map(|m| println!("{}", json(&m))),
        Command::Report { action } => match action {
            ReportCommand::Ls { run_dir } => list_reports(&run_dir).map(|names| {
                for n in names {
                    println!("{n}");
                }
            }),
            ReportCommand::Show { run_dir, name } => show_report(&run_dir, &name).map(|r| print!("{r}")),
        },
        Command::Verify { export } => std::fs::read_to_string(&export)
            .map_err(|source| Error::Io {
                path: export.display().to_string(),
                source,
            })
            .and_then(|text| verify_export(&text))
            .map(|n| println!("intact: {n} blocks")),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
