//! Command-line entry point: reproducible two-domain adaptation experiments.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use xprs::config::RunConfig;
use xprs::runner::{compare_runs, execute_run, inspect_snapshot, Variant};

#[derive(Parser)]
#[command(
    name = "xprs",
    about = "Continual-adaptation engine on a synthetic two-domain manipulation bench",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the scenario with the full method.
    Run {
        /// Path to the run configuration (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Master seed override.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory override (metrics.jsonl, summary.json,
        /// buffers.xprsbuf, policy.xprspol).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full method plus ablation variants on identical seeds.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Variant subset (repeatable): full, no_contrastive, no_retrieval,
        /// no_replay, naive. Default: all five.
        #[arg(long)]
        variant: Vec<String>,
    },
    /// Print statistics of a buffer snapshot as JSON.
    Inspect {
        /// Path to a buffers.xprsbuf file.
        snapshot: PathBuf,
        /// Seed for a random unit query; adds a similarity spectrum.
        #[arg(long)]
        query_seed: Option<u64>,
    },
}

fn load_config(path: &PathBuf, seed: Option<u64>, out: Option<PathBuf>) -> Result<RunConfig, String> {
    let mut cfg = RunConfig::from_file(path).map_err(|e| e.to_string())?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(out) = out {
        cfg.out_dir = out;
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::new().filter_or("XPRS_LOG_LEVEL", "info"),
    )
    .format_timestamp(None)
    .init();

    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, seed, out } => {
            let cfg = match load_config(&config, seed, out) {
                Ok(cfg) => cfg,
                Err(e) => {
                    eprintln!("config error: {e}");
                    return ExitCode::from(2);
                }
            };
            match execute_run(&cfg, Variant::Full, Some(&cfg.out_dir.clone())) {
                Ok(outcome) => {
                    let s = &outcome.summary;
                    println!(
                        "seed {}: target {:.1}% -> {:.1}%, source {:.1}% -> {:.1}% ({} cycles)",
                        s.seed,
                        s.pre_target_success * 100.0,
                        s.post_target_success * 100.0,
                        s.pre_source_success * 100.0,
                        s.post_source_success * 100.0,
                        s.cycles_used,
                    );
                    println!("outputs in {}", cfg.out_dir.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("run failed: {e}");
                    ExitCode::FAILURE
                }
            }
        }
        Command::Compare {
            config,
            seed,
            out,
            variant,
        } => {
            let cfg = match load_config(&config, seed, out) {
                Ok(cfg) => cfg,
                Err(e) => {
                    eprintln!("config error: {e}");
                    return ExitCode::from(2);
                }
            };
            let variants: Vec<Variant> = if variant.is_empty() {
                Variant::all().to_vec()
            } else {
                match variant.iter().map(|v| Variant::parse(v)).collect() {
                    Ok(v) => v,
                    Err(e) => {
                        eprintln!("config error: {e}");
                        return ExitCode::from(2);
                    }
                }
            };
            match compare_runs(&cfg, &variants, Some(&cfg.out_dir.clone())) {
                Ok(comparison) => {
                    print!("{}", comparison.render_table());
                    println!("outputs in {}", cfg.out_dir.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("compare failed: {e}");
                    ExitCode::FAILURE
                }
            }
        }
        Command::Inspect {
            snapshot,
            query_seed,
        } => match inspect_snapshot(&snapshot, query_seed) {
            Ok(stats) => {
                println!("{}", serde_json::to_string_pretty(&stats).unwrap());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("inspect failed: {e}");
                ExitCode::FAILURE
            }
        },
    }
}
