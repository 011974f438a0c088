use chainctl::{apply_seed_override, preset, run_and_write, CliError, ExperimentConfig};
use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "chainctl", version, about = "Spin-chain state-transfer experiments")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a JSON config.
    Run {
        config: PathBuf,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a built-in figure preset.
    Preset {
        /// fig2, fig3a, fig3b, fig4a, fig4b or fig5.
        name: String,
        /// Channel length.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the resolved config instead of running it.
        #[arg(long)]
        dry_run: bool,
    },
    /// Check a config without running it.
    Validate { config: PathBuf },
}

fn execute(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Run { config, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            apply_seed_override(&mut cfg)?;
            let manifest = run_and_write(&cfg, out.as_deref())?;
            println!("{}", manifest.display());
        }
        Command::Preset {
            name,
            n,
            seed,
            out,
            dry_run,
        } => {
            let mut cfg = preset(&name, n)?;
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            apply_seed_override(&mut cfg)?;
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            if dry_run {
                cfg.validate()?;
                println!("{}", serde_json::to_string_pretty(&cfg).expect("config serializes"));
            } else {
                let manifest = run_and_write(&cfg, None)?;
                println!("{}", manifest.display());
            }
        }
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            cfg.validate()?;
            println!("ok: {}", cfg.experiment.name());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("chainctl: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
