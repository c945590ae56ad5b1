use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use disp2d::run::{execute, Command, RunOptions};

/// Regularity, low-energy and dispersive-decay checks for 2D Schrödinger operators.
#[derive(Parser, Debug)]
#[command(name = "disp2d", version, after_help = commands_help())]
struct Cli {
    /// One of: classify, expand, evolve, decay, born, lemma2, born-chain
    command: String,

    /// JSON run configuration
    #[arg(long, env = "DISP2D_CONFIG")]
    config: PathBuf,

    /// Output directory; overrides `output_dir` in the config
    #[arg(long, env = "DISP2D_OUT")]
    out: Option<PathBuf>,

    /// Seed for randomized sweeps; overrides `seed` in the config
    #[arg(long, env = "DISP2D_SEED")]
    seed: Option<u64>,

    /// Worker threads (default: all cores)
    #[arg(long, env = "DISP2D_THREADS")]
    threads: Option<usize>,

    /// Log progress at debug level
    #[arg(long, short, env = "DISP2D_VERBOSE")]
    verbose: bool,
}

fn commands_help() -> String {
    let names: Vec<&str> = Command::ALL.iter().map(|c| c.name()).collect();
    format!("Commands: {}", names.join(", "))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "debug" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    if cli.command.parse::<Command>().is_err() {
        eprintln!("error: unknown command '{}'\n\n{}", cli.command, commands_help());
        eprintln!("usage: disp2d <COMMAND> --config <PATH> [--out DIR] [--seed N] [--threads N] [--verbose]");
    }
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }

    let opts = RunOptions { config: cli.config, out: cli.out, seed: cli.seed };
    let (code, manifest) = execute(&cli.command, &opts);
    match &manifest.error {
        Some(msg) => eprintln!("error: {msg}"),
        None => {
            for path in &manifest.outputs {
                println!("{path}");
            }
        }
    }
    log::info!("{} finished in {:.2} s", manifest.command, manifest.wall_time_s);
    ExitCode::from(code as u8)
}
