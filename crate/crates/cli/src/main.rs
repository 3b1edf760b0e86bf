use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rezone_core::cost::{compare, CostWeights, DeploymentConfig, Workload};
use rezone_core::scenario::{describe, run_scenario, RunError, RunOptions, ScenarioSpec};

const EXIT_VIOLATION: u8 = 1;
const EXIT_SPEC: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "rezone-sim", version, about = "Run zone-partitioning scenarios and check isolation properties")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario document and report whether every asserted property holds.
    Run {
        spec: PathBuf,
        /// Exploration depth in steps.
        #[arg(long)]
        depth: Option<usize>,
        /// Scheduler seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Deployment: norz, rz or rz-noirq.
        #[arg(long, value_parser = parse_config)]
        config: Option<DeploymentConfig>,
        /// Write the event log (one JSON record per line) here.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write the JSON property report here.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Explore every interleaving up to the depth instead of running one schedule.
        #[arg(long)]
        explore: bool,
    },
    /// Print the cost comparison of the bundled workloads as CSV.
    Compare {
        /// TOML file overriding individual cost weights.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
}

fn parse_config(s: &str) -> Result<DeploymentConfig, String> {
    s.parse()
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { spec, depth, seed, config, trace, report, explore } => {
            let opts = RunOptions { config, seed, depth, explore };
            run(&spec, &opts, trace, report)
        }
        Command::Compare { weights } => compare_cmd(weights.as_deref()),
    }
}

/// Paths named inside a scenario are relative to the scenario file.
fn spec_relative(spec_path: &Path, p: &Path) -> PathBuf {
    match spec_path.parent() {
        Some(dir) if p.is_relative() => dir.join(p),
        _ => p.to_path_buf(),
    }
}

fn run(path: &Path, opts: &RunOptions, trace: Option<PathBuf>, report: Option<PathBuf>) -> ExitCode {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", path.display());
            return ExitCode::from(EXIT_SPEC);
        }
    };
    let spec = match ScenarioSpec::from_toml(&text) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {}: {e}", path.display());
            return ExitCode::from(EXIT_SPEC);
        }
    };
    let outcome = match run_scenario(&spec, opts) {
        Ok(o) => o,
        Err(RunError::Spec(e)) => {
            eprintln!("error: {}: {e}", path.display());
            return ExitCode::from(EXIT_SPEC);
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    };
    let trace_path = trace.or_else(|| spec.output.trace.as_deref().map(|p| spec_relative(path, p)));
    let report_path = report.or_else(|| spec.output.report.as_deref().map(|p| spec_relative(path, p)));
    if let Some(p) = trace_path {
        if let Err(e) = fs::File::create(&p).and_then(|f| outcome.trace.write_ndjson(std::io::BufWriter::new(f))) {
            eprintln!("error: cannot write trace {}: {e}", p.display());
            return ExitCode::from(EXIT_RUNTIME);
        }
    }
    let r = &outcome.report;
    if let Some(p) = report_path {
        if let Err(e) = fs::write(&p, r.to_json()) {
            eprintln!("error: cannot write report {}: {e}", p.display());
            return ExitCode::from(EXIT_RUNTIME);
        }
    }

    println!("scenario {} ({}, {:?}, seed {})", r.name, r.config, r.mode, r.seed);
    if let Some(x) = &r.exploration {
        println!(
            "explored {} states, {} transitions, depth {}{}",
            x.states_visited,
            x.transitions,
            x.depth,
            if x.exhausted { ", exhausted" } else { "" }
        );
    }
    if let Some(a) = &r.attack {
        let outcome = match a.outcome {
            rezone_core::adversary::AttackOutcome::Blocked => "blocked",
            rezone_core::adversary::AttackOutcome::Succeeded => "succeeded",
        };
        println!("attack {}: {outcome} ({}/{} runs blocked, {} zone faults)", a.attack, a.blocked_runs, a.runs, a.zone_faults);
        if a.boot_refused {
            println!("  secure boot refused the tampered image");
        }
    }
    for p in &r.properties {
        println!("{:?}: {}", p.property, if p.holds { "holds" } else { "VIOLATED" });
    }
    for v in &r.violations {
        println!("  {}", describe(v));
    }
    println!("cost {:.1}", r.costs.total);
    if r.all_hold {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_VIOLATION)
    }
}

fn compare_cmd(weights: Option<&Path>) -> ExitCode {
    let w = match weights {
        None => CostWeights::default(),
        Some(p) => match fs::read_to_string(p).map_err(|e| e.to_string()).and_then(|t| {
            CostWeights::from_toml(&t).map_err(|e| e.to_string())
        }) {
            Ok(w) => w,
            Err(e) => {
                eprintln!("error: {}: {e}", p.display());
                return ExitCode::from(EXIT_SPEC);
            }
        },
    };
    match compare(&DeploymentConfig::ALL, &Workload::BUNDLED, &w) {
        Ok(table) => {
            print!("{}", table.to_csv());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
