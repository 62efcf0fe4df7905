use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cbo_harness::compare::{compare_runs, DEFAULT_THRESHOLD};
use cbo_harness::experiment::{condition_report, sweep_alpha};
use cbo_harness::plot::{render_overlay, render_plots};
use cbo_harness::{parse_config, run_experiment, ExperimentConfig, HarnessError};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "cbo",
    version,
    about = "Consensus-based optimization experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run { config: PathBuf },
    /// Render SVG figures for a finished run.
    Plot { run_dir: PathBuf },
    /// Tabulate time-to-threshold and decay rates of several runs.
    Compare {
        #[arg(required = true, num_args = 2..)]
        run_dirs: Vec<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
        /// Output table.
        #[arg(long, default_value = "comparison.csv")]
        out: PathBuf,
        /// Also write an overlay of the error curves here.
        #[arg(long)]
        overlay: Option<PathBuf>,
    },
    /// Print the concentration-condition report for the initial measure.
    CheckConditions { config: PathBuf },
    /// Run the experiment for each α and tabulate the consensus points.
    SweepAlpha {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        alphas: Vec<f64>,
    },
}

fn load(path: &Path) -> Result<ExperimentConfig, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(parse_config(&text)?)
}

fn execute(cmd: Command) -> Result<(), HarnessError> {
    match cmd {
        Command::Run { config } => {
            let cfg = load(&config)?;
            let m = run_experiment(&cfg)?;
            println!("wrote {} files to {}", m.files.len(), cfg.out_dir.display());
            if let Some(last) = m.rows.last() {
                println!(
                    "t={} w2_mean={:e} V_mean={:e}",
                    last.t, last.w2_mean, last.v_mean
                );
            }
        }
        Command::Plot { run_dir } => {
            for p in render_plots(&run_dir)? {
                println!("{}", p.display());
            }
        }
        Command::Compare {
            run_dirs,
            threshold,
            out,
            overlay,
        } => {
            for r in compare_runs(&run_dirs, threshold, &out)? {
                let ttt = r
                    .time_to_threshold
                    .map_or("not reached".to_string(), |t| format!("{t}"));
                println!("{}: {} time_to_threshold={ttt}", r.run.display(), r.label);
            }
            if let Some(path) = overlay {
                render_overlay(&run_dirs, &path)?;
            }
        }
        Command::CheckConditions { config } => {
            print!("{}", condition_report(&load(&config)?)?.to_kv());
        }
        Command::SweepAlpha { config, alphas } => {
            let cfg = load(&config)?;
            for row in sweep_alpha(&cfg, &alphas)? {
                println!(
                    "alpha={} error={:e} laplace_gap={:e}",
                    row.alpha, row.error, row.laplace_gap
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    // clap reports usage errors with code 2, which is reserved for solver failures
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
