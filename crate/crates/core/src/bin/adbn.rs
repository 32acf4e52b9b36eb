use adbn::harness::{oracle_csv, run_experiment, summary_csv, ExperimentConfig, HarnessError};
use adbn::model::load_domain;
use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Asynchronous DBN monitoring experiments.
#[derive(Debug, Parser)]
#[command(name = "adbn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an experiment config and write its CSV outputs.
    Run { config: PathBuf },
    /// Check a domain file against the schema and model invariants.
    Validate { domain: PathBuf },
    /// Write the generated traces of an experiment config.
    Trace {
        config: PathBuf,
        /// Only this seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: <output>/traces).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exact filtering NLL for a small experiment config.
    Oracle {
        config: PathBuf,
        /// Output file (default: <output>/oracle.csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn runtime(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::Runtime(format!("{}: {e}", path.display()))
}

fn execute(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Run { config } => {
            let (cfg, base) = ExperimentConfig::load(&config)?;
            let res = run_experiment(&cfg, &base)?;
            print!("{}", summary_csv(&res));
            eprintln!("wrote {}", base.join(&cfg.output).display());
        }
        Command::Validate { domain } => {
            let text = std::fs::read_to_string(&domain).map_err(runtime(&domain))?;
            let (spec, obs) = load_domain(&text).map_err(|e| Failure::Validation(e.to_string()))?;
            println!("valid: {} state variables, {} sensors", spec.len(), obs.sensors.len());
        }
        Command::Trace { config, seed, out } => {
            let (cfg, base) = ExperimentConfig::load(&config)?;
            cfg.validate()?;
            let dom = cfg.domain(&base)?;
            let dir = out.unwrap_or_else(|| base.join(&cfg.output).join("traces"));
            std::fs::create_dir_all(&dir).map_err(runtime(&dir))?;
            let seeds = seed.map(|s| vec![s]).unwrap_or_else(|| cfg.seeds.seeds());
            for s in seeds {
                let path = dir.join(format!("seed_{s}.trace"));
                cfg.trace(&dom, s)?
                    .save(&path)
                    .map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
                println!("{}", path.display());
            }
        }
        Command::Oracle { config, out } => {
            let (cfg, base) = ExperimentConfig::load(&config)?;
            let csv = oracle_csv(&cfg, &base)?;
            let path = out.unwrap_or_else(|| base.join(&cfg.output).join("oracle.csv"));
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir).map_err(runtime(dir))?;
            }
            std::fs::write(&path, csv).map_err(runtime(&path))?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
