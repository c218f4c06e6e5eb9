use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fkdiff::commands::{cmd_oracle, cmd_run, cmd_show_config, cmd_verify};
use fkdiff::config::ExperimentConfig;
use fkdiff::par::ExecMode;
use fkdiff::verify::Level;

#[derive(Parser)]
#[command(name = "fkdiff", version, about = "Feynman-Kac steered diffusion for test-time adaptation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Flat `section.key = value` config file; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `experiment.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the benchmark grid and write CSV/JSON metrics.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Overrides `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the per-step steering diagnostics.
        #[arg(long)]
        diagnostics: bool,
        /// Disable the rayon thread pool.
        #[arg(long)]
        sequential: bool,
    },
    /// Run the self-check suites.
    Verify {
        #[arg(long, default_value = "fast")]
        level: Level,
    },
    /// Compare steered samples against the rejection-sampling oracle.
    Oracle {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Print the fully materialized config.
    ShowConfig {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn load(args: &ConfigArgs) -> fkdiff::Result<ExperimentConfig> {
    let mut config = match &args.config {
        Some(p) => ExperimentConfig::parse_file(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn execute(cli: Cli) -> fkdiff::Result<bool> {
    let mut stdout = io::stdout().lock();
    match cli.command {
        Command::Run {
            cfg,
            out,
            diagnostics,
            sequential,
        } => {
            let mut config = load(&cfg)?;
            if let Some(out) = out {
                config.output_dir = out;
            }
            config.diagnostics |= diagnostics;
            let exec = if sequential { ExecMode::Sequential } else { ExecMode::Parallel };
            let outputs = cmd_run(&config, exec, &mut stdout)?;
            eprintln!("wrote {} and {}", outputs.csv.display(), outputs.json.display());
            if let Some(d) = outputs.diagnostics {
                eprintln!("wrote {}", d.display());
            }
            Ok(true)
        }
        Command::Verify { level } => cmd_verify(level, &mut stdout),
        Command::Oracle { cfg } => cmd_oracle(&load(&cfg)?, &mut stdout),
        Command::ShowConfig { cfg } => {
            print!("{}", cmd_show_config(&load(&cfg)?));
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
