use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use funcbo::harness::{self, ExperimentConfig};
use funcbo::objectives::lemma1_intersection_estimate;
use funcbo::Result;

#[derive(Parser)]
#[command(name = "funcbo", version, about = "Bayesian optimisation over functions on a grid")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured algorithm and repeat; write trace and summary CSVs.
    Bench {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `bench.output`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the next function to evaluate and record it as pending.
    Suggest {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Config for a new session; only valid when the state file does not exist.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Record the measured value of the pending suggestion.
    Tell {
        #[arg(long)]
        state: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        y: f64,
    },
    /// Write the best function found so far.
    Export {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte-Carlo estimate of the chance that a random affine subspace passes
    /// near the origin of the unit ball.
    #[command(name = "verify-lemma1")]
    VerifyLemma1 {
        #[arg(long)]
        d: usize,
        #[arg(long)]
        de: usize,
        #[arg(long)]
        beta: f64,
        #[arg(long, default_value_t = 100_000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn bench(config: &Path, out: Option<PathBuf>) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let out = out.unwrap_or_else(|| PathBuf::from(&cfg.output));
    let outcome = harness::run_bench(&cfg, &out)?;
    for alg in &cfg.algorithms {
        if let Some(last) = outcome.summary.iter().filter(|r| r.algorithm == *alg).last() {
            println!(
                "{alg}: evals={} median={} min={} max={}",
                last.eval_index + 1,
                last.median,
                last.min,
                last.max
            );
        }
    }
    println!("wrote {} files to {}", outcome.files.len(), out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Bench { config, out } => bench(&config, out),
        Command::Suggest { state, out, config } => {
            let s = harness::suggest(&state, &out, config.as_deref())?;
            let lambda: Vec<String> = s.lambda.iter().map(f64::to_string).collect();
            println!("s={} t={} lambda={}", s.s, s.t, lambda.join(";"));
            Ok(())
        }
        Command::Tell { state, y } => {
            let r = harness::tell(&state, y)?;
            println!("eval_index={} y={} best_y={}", r.eval_index, r.y, r.best_y);
            Ok(())
        }
        Command::Export { state, out } => {
            let g = harness::export_function(&state, &out)?;
            println!("wrote {} values to {}", g.values().len(), out.display());
            Ok(())
        }
        Command::VerifyLemma1 {
            d,
            de,
            beta,
            trials,
            seed,
        } => {
            let est = lemma1_intersection_estimate(d, de, beta, trials, seed)?;
            println!(
                "probability={} stderr={} trials={}",
                est.probability, est.stderr, est.trials
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("funcbo: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
