//! `pxkd` command line interface.
//!
//! Exit codes: 0 success, 2 config error, 3 training divergence, 4 i/o error.

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Parser, Subcommand};

use pxkd_cli::config::Method;
use pxkd_cli::{parse_config, run_and_write, CliError};

#[derive(Parser)]
#[command(name = "pxkd", version, about = "Inherited-classifier distillation experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        /// Path to the sectioned key=value config file.
        config: PathBuf,
        /// Output directory for metrics, checkpoints and plot data.
        #[arg(long)]
        out: PathBuf,
        /// Replace the configured seed list with this single seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Replace the configured method list (comma separated:
        /// proxyless,l2kd,scratch).
        #[arg(long)]
        methods: Option<String>,
    },
}

fn run() -> Result<(), CliError> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            methods,
        } => {
            let mut cfg = parse_config(&config)?;
            if let Some(seed) = seed {
                cfg.values.run.seeds = vec![seed];
            }
            if let Some(methods) = methods {
                let parsed: Result<Vec<Method>, String> =
                    methods.split(',').map(Method::from_str).collect();
                cfg.values.distill.methods = parsed.map_err(CliError::Config)?;
                if cfg.values.distill.methods.is_empty() {
                    return Err(CliError::Config("--methods list is empty".into()));
                }
            }
            let doc = run_and_write(&cfg, &out)?;
            println!("wrote {} file(s) to {}", doc.manifest.len(), out.display());
            for seed_result in &doc.per_seed {
                for (key, result) in &seed_result.methods {
                    let ver = result
                        .eval_multiple
                        .as_ref()
                        .or(result.eval_single.as_ref())
                        .map(|r| r.verification_accuracy_pct)
                        .unwrap_or(f64::NAN);
                    println!(
                        "seed {} {:<18} verification {:6.2}%",
                        seed_result.seed, key, ver
                    );
                }
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
