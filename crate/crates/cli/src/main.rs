use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedtwin_cli::{run_experiment, validate, ConfigError, ExperimentConfig, RunOptions};

#[derive(Parser)]
#[command(name = "fedtwin", version, about = "Federated and centralized training of neural surrogates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        config: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads for client updates (1 gives a single-threaded run).
        #[arg(long)]
        threads: Option<usize>,
        /// Regenerate cached datasets.
        #[arg(long)]
        regen: bool,
    },
    /// Check a config file and report every problem found.
    Validate { config: PathBuf },
}

fn config_failure(e: &ConfigError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(2)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Validate { config } => {
            let cfg = match ExperimentConfig::load(&config) {
                Ok(c) => c,
                Err(e) => return config_failure(&e),
            };
            let v = validate(&cfg);
            for w in &v.warnings {
                eprintln!("warning: {w}");
            }
            match v.into_result() {
                Ok(_) => {
                    println!("{}: ok", config.display());
                    ExitCode::SUCCESS
                }
                Err(e) => config_failure(&e),
            }
        }
        Command::Run {
            config,
            seed,
            out,
            threads,
            regen,
        } => {
            let mut cfg = match ExperimentConfig::load(&config) {
                Ok(c) => c,
                Err(e) => return config_failure(&e),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            if let Some(t) = threads {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
                    eprintln!("error: cannot set up {t} threads: {e}");
                    return ExitCode::from(3);
                }
            }
            match run_experiment(&cfg, &RunOptions { regen }) {
                Ok(summary) => {
                    println!(
                        "wrote {} files to {}",
                        summary.manifest.files.len() + 1,
                        summary.dir.display()
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(e.exit_code() as u8)
                }
            }
        }
    }
}
