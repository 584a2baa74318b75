use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use modfun_cli::{
    effective_seed, read_summary, render_report, resolve, run_experiment, CliError, PRESETS,
    SEED_ENV,
};

#[derive(Debug, Parser)]
#[command(
    name = "modfun",
    version,
    about = "Modulating-function state and disturbance estimation experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an experiment from a JSON config file or a preset name.
    Run {
        config: String,
        /// Output directory (overrides the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads for parallel replicates.
        #[arg(long)]
        jobs: Option<usize>,
        /// Master seed (overrides MODFUN_SEED and the config).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Summarize the summary.csv in DIR.
    Report { dir: PathBuf },
    /// List the shipped presets.
    Presets,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run {
            config,
            out,
            jobs,
            seed,
        } => {
            let mut cfg = resolve(&config)?;
            let env = std::env::var(SEED_ENV).ok();
            cfg.noise.master_seed = effective_seed(seed, env.as_deref(), cfg.noise.master_seed)?;
            if let Some(dir) = out {
                cfg.output_dir = dir;
            }
            let dir = cfg.output_dir.clone();
            let results = match jobs {
                Some(0) => return Err(CliError::Config("--jobs must be at least 1".into())),
                Some(n) => rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .map_err(|e| CliError::Config(format!("--jobs: {e}")))?
                    .install(|| run_experiment(&cfg, &dir))?,
                None => run_experiment(&cfg, &dir)?,
            };
            let rows: Vec<_> = results.into_iter().map(|r| r.row).collect();
            println!(
                "{}: {} run(s) written to {}",
                cfg.name,
                rows.len(),
                dir.display()
            );
            print!("{}", render_report(&rows));
            Ok(())
        }
        Command::Report { dir } => {
            let rows = read_summary(&dir)?;
            print!("{}", render_report(&rows));
            Ok(())
        }
        Command::Presets => {
            for (name, about, _) in PRESETS {
                println!("{name:<20} {about}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("modfun: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
