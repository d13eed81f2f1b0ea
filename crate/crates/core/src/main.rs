use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ideal::config::{ablation_variants, LoopConfig, Strategy};
use ideal::dataset::{generate_synthetic, load_dataset, SyntheticSpec};
use ideal::engine::Engine;
use ideal::report::{summarize, ReportWriter};
use ideal::{Error, Result};

#[derive(Parser)]
#[command(name = "ideal", version, about = "Pool-based active learning with inconsistency-driven selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the active-learning loop and write metrics, selections and a config snapshot.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        strategy: Option<Strategy>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Write a class-balanced Gaussian-mixture dataset.
    Synth {
        #[arg(long)]
        classes: usize,
        #[arg(long)]
        clusters: usize,
        #[arg(long = "per-class")]
        per_class: usize,
        #[arg(long)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every ablation variant into its own subdirectory of `--out`.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print learning curves and a final-accuracy comparison.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn run_to_dir(config: &LoopConfig, out: &Path) -> Result<()> {
    let path = config
        .dataset
        .as_ref()
        .ok_or_else(|| Error::config("dataset", "no dataset file configured"))?;
    let dataset = load_dataset(path)?;
    let mut engine = Engine::new(config, &dataset)?;
    let mut writer = ReportWriter::create(out, config)?;
    for _ in 0..config.cycles {
        match engine.run_cycle() {
            Ok(report) => {
                println!(
                    "{} cycle {} labeled {} accuracy {:.4}",
                    report.strategy, report.cycle, report.n_labeled, report.accuracy
                );
                writer.write(&report)?;
            }
            Err(Error::PoolExhausted { available, budget }) => {
                eprintln!("stopping early: {available} unlabeled samples left for budget {budget}");
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            seed,
            strategy,
            out,
        } => {
            let mut cfg = LoopConfig::from_file(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(s) = strategy {
                cfg.strategy = s;
            }
            run_to_dir(&cfg, &out)
        }
        Command::Synth {
            classes,
            clusters,
            per_class,
            noise,
            seed,
            dim,
            out,
        } => {
            let ds = generate_synthetic(&SyntheticSpec {
                classes,
                clusters_per_class: clusters,
                per_class,
                dim,
                noise,
                seed,
            })?;
            ds.write_csv(&out)
        }
        Command::Ablate { config, out } => {
            let cfg = LoopConfig::from_file(&config)?;
            for (name, variant) in ablation_variants(&cfg) {
                println!("== {name}");
                run_to_dir(&variant, &out.join(name))?;
            }
            print!("{}", summarize(&out)?);
            Ok(())
        }
        Command::Report { input } => {
            print!("{}", summarize(&input)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
