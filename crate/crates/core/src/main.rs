use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use glocal::harness::{builtin_names, check_scenario, emit_results, load_scenario_with, run_scenario};
use glocal::Error;

#[derive(Parser)]
#[command(name = "glocal", version, about = "Glocal stealthy-attack detection on switched consensus networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario file or built-in scenario and write the result files.
    Run {
        scenario: String,
        /// Output directory (default: out/<scenario name>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Keep scenarios that fail the load-time checks.
        #[arg(long)]
        force: bool,
    },
    /// Static analysis only: privacy, local detectability and switch verdicts.
    Check { scenario: String },
    /// Lists the built-in scenarios.
    ListBuiltin,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::LoadRejected(_) => 2,
        Error::DesignInfeasible(_) | Error::UioInfeasible { .. } => 3,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::ListBuiltin => {
            for n in builtin_names() {
                println!("{n}");
            }
            Ok(0)
        }
        Command::Check { scenario } => {
            let s = load_scenario_with(&scenario, true)?;
            let rep = check_scenario(&s)?;
            let json = serde_json::to_string_pretty(&rep).map_err(|e| Error::Numerical(e.to_string()))?;
            println!("{json}");
            Ok(if rep.all_pass { 0 } else { 2 })
        }
        Command::Run {
            scenario,
            out,
            seed,
            force,
        } => {
            let mut s = load_scenario_with(&scenario, force)?;
            if let Some(seed) = seed {
                s.seed = seed;
            }
            let result = run_scenario(&s)?;
            let dir = out.unwrap_or_else(|| PathBuf::from("out").join(&s.name));
            emit_results(&result, &dir)?;
            let r = &result.report;
            println!("scenario: {}", r.scenario);
            println!("status: {}", r.status);
            match &r.local_detection {
                Some(d) => println!("local detection: cluster {} node {} at t = {:.3}", d.cluster, d.node, d.time),
                None => println!("local detection: none"),
            }
            match &r.switch_event {
                Some(e) => println!("switch: mode {} at t = {:.3}", e.mode, e.time),
                None => println!("switch: none"),
            }
            match r.global_detection {
                Some(t) => println!("global detection: t = {t:.3}"),
                None => println!("global detection: none"),
            }
            println!("diverged: {}", r.diverged);
            println!("results: {}", dir.display());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error [{}]: {e}", e.kind());
            ExitCode::from(exit_code(&e))
        }
    }
}
