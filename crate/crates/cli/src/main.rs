use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use polyfrac_cli::{check, load_config, run, RunError, RunOptions};

#[derive(Parser)]
#[command(name = "polyfrac", version, about = "Polycrystal ductile fracture simulation")]
struct Cli {
    /// Log filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation.
    Run {
        config: PathBuf,
        #[arg(long, short, default_value = "output")]
        output_dir: PathBuf,
        /// Stop after this many accepted steps.
        #[arg(long)]
        max_steps: Option<usize>,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Validate a configuration and build the problem without solving.
    Check { config: PathBuf },
}

fn base_dir(config: &Path) -> PathBuf {
    config.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn execute(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::Run {
            config,
            output_dir,
            max_steps,
            resume,
        } => {
            let cfg = load_config(&config)?;
            let opts = RunOptions {
                output_dir,
                max_steps,
                resume,
            };
            let s = run(&cfg, &base_dir(&config), &opts)?;
            log::info!(
                "{} after {} steps at t = {:e}; {} frames written",
                if s.finished { "finished" } else { "stopped" },
                s.steps,
                s.time,
                s.frames
            );
        }
        Command::Check { config } => {
            let cfg = load_config(&config)?;
            println!("{}", check(&cfg, &base_dir(&config))?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log_level).init();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
