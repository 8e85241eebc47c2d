use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use wgflow_harness::experiment::{oracle_check, run_experiment, write_csv};
use wgflow_harness::report::report_files;
use wgflow_harness::{load_config, ExperimentConfig, HarnessError, Result};

#[derive(Parser)]
#[command(name = "wgflow", version, about = "Langevin-type particle sampler experiments")]
struct Cli {
    /// Output directory (default: current directory).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Comma-separated seeds, replacing the config's list.
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured method and seed and write the metrics CSV.
    Run { config: PathBuf },
    /// Compare ensemble moments with the closed-form Gaussian laws.
    OracleCheck { config: PathBuf },
    /// Summarize metrics CSVs and write plot data.
    Report {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
    },
}

fn load(path: &Path, seeds: &Option<Vec<u64>>) -> Result<ExperimentConfig> {
    let mut cfg = load_config(path)?;
    if let Some(s) = seeds {
        if s.is_empty() {
            return Err(HarnessError::Validation("--seeds must not be empty".into()));
        }
        cfg.seeds = s.clone();
    }
    Ok(cfg)
}

/// Writes to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn execute(cli: &Cli) -> Result<bool> {
    let out_dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    match &cli.command {
        Command::Run { config } => {
            let cfg = load(config, &cli.seeds)?;
            let records = run_experiment(&cfg)?;
            let path = if cfg.output.is_absolute() { cfg.output.clone() } else { out_dir.join(&cfg.output) };
            write_csv(&path, &records)?;
            emit(&format!("wrote {} records to {}\n", records.len(), path.display()));
            Ok(true)
        }
        Command::OracleCheck { config } => {
            let cfg = load(config, &cli.seeds)?;
            let report = oracle_check(&cfg)?;
            emit(&format!("{report}\n"));
            Ok(report.passed())
        }
        Command::Report { csv } => {
            let report = report_files(csv)?;
            let files = report.write(&out_dir)?;
            let mut text = report.to_string();
            for f in files {
                text.push_str(&format!("wrote {}\n", f.display()));
            }
            emit(&text);
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(k) = cli.threads {
        if k == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
