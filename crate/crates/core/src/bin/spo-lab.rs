use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use spo_core::game::exact_minimax_winner;
use spo_core::harness::{registry, run_experiment, ExperimentConfig, ExperimentResult};
use spo_core::PreferenceMatrix;

#[derive(Parser)]
#[command(name = "spo-lab", version, about = "Self-play preference optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct Overrides {
    /// Master seed (per-run seeds are derived from it).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, env = "SPO_LAB_JOBS")]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// List registered scenarios and their acceptance checks.
    ListScenarios,
    /// Run a scenario with its defaults and apply its acceptance check.
    Verify {
        scenario: String,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Exact minimax winner of a matrix file (JSON or TOML: n, entries).
    Solve {
        #[arg(long)]
        matrix: PathBuf,
    },
}

fn apply(mut cfg: ExperimentConfig, o: &Overrides) -> ExperimentConfig {
    if o.seed.is_some() {
        cfg.master_seed = o.seed;
    }
    if o.out.is_some() {
        cfg.output = o.out.clone();
    }
    if o.jobs.is_some() {
        cfg.jobs = o.jobs;
    }
    cfg
}

fn report(res: &ExperimentResult) -> ExitCode {
    let s = &res.summary;
    println!(
        "{} ({}) — {} run(s) -> {}",
        s.scenario,
        s.algorithm.as_str(),
        s.runs.len(),
        res.config.output.display()
    );
    for (name, m) in &s.metrics {
        println!("  {name:<28} {:.6e} ± {:.2e}", m.mean, m.stderr);
    }
    let c = &s.check;
    println!(
        "{} {} {} — {}",
        if c.passed { "PASS" } else { "FAIL" },
        c.metric,
        c.threshold,
        c.detail
    );
    if c.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn load_matrix(path: &PathBuf) -> Result<PreferenceMatrix, String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| e.to_string())
    } else {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::ListScenarios => {
            for s in registry() {
                let algs: Vec<&str> = s.algorithms.iter().map(|a| a.as_str()).collect();
                println!("{:<22} [{}] {}", s.id, algs.join(", "), s.description);
                if !s.aliases.is_empty() {
                    println!("{:<22} aliases: {}", "", s.aliases.join(", "));
                }
                println!("{:<22} check: {}", "", s.check);
            }
            return ExitCode::SUCCESS;
        }
        Command::Run { config, overrides } => ExperimentConfig::load(&config)
            .map(|c| apply(c, &overrides))
            .and_then(|c| run_experiment(&c)),
        Command::Verify { scenario, overrides } => {
            run_experiment(&apply(ExperimentConfig::for_scenario(&scenario), &overrides))
        }
        Command::Solve { matrix } => {
            let m = match load_matrix(&matrix) {
                Ok(m) => m,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            return match exact_minimax_winner(&m).and_then(|s| Ok(serde_json::to_string_pretty(&s)?)) {
                Ok(s) => {
                    println!("{s}");
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
            };
        }
    };
    match outcome {
        Ok(res) => report(&res),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
