//! Command-line front end: single runs, the full experiment grid, the two
//! tuning harnesses and the track export.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use srpt_sim::config::SimConfig;
use srpt_sim::estimation::tuning::{
    tune_process_covariance, write_q_file, LapLog, TuningConfig,
};
use srpt_sim::estimation::{MeasurementCovariance, ProcessCovariance};
use srpt_sim::harness::export::export_artifacts;
use srpt_sim::harness::{
    evaluate_driver_k1, run_experiment, run_grid, ExperimentSpec, Mode,
};
use srpt_sim::operator::tune_k1;
use srpt_sim::scenario::track::build_track;
use srpt_sim::scenario::NoiseSetId;
use srpt_sim::SimError;

#[derive(Parser)]
#[command(name = "srpt-sim", about = "Delayed-teleoperation driving simulator")]
struct Cli {
    /// Optional key=value config file with parameter overrides.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single experiment and export its trace and metrics.
    Run {
        #[arg(long)]
        mode: String,
        #[arg(long, default_value = "i")]
        noise_set: String,
        /// Network delay: on or off.
        #[arg(long, default_value = "off")]
        delay: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run the full 14-cell grid and export all artifacts.
    Grid {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Tune the process covariance on a recorded lap log.
    TuneQ {
        /// Lap log CSV (a run trace works directly).
        #[arg(long)]
        log: PathBuf,
        /// Output key=value file for the tuned Q.
        #[arg(long, default_value = "q_tuned.txt")]
        out: PathBuf,
    },
    /// Sweep the driver steer gain over regions A-C.
    TuneK1 {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Export the track centerline and environment map as CSV.
    Track {
        #[arg(long, default_value = "track.csv")]
        out: PathBuf,
    },
}

fn parse_delay(s: &str) -> Result<bool, SimError> {
    match s.to_ascii_lowercase().as_str() {
        "on" | "true" | "1" => Ok(true),
        "off" | "false" | "0" => Ok(false),
        other => Err(SimError::Config(format!("delay must be on or off, got `{other}`"))),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, SimError> {
    let cfg = match &cli.config {
        Some(path) => SimConfig::load(path)?,
        None => SimConfig::default(),
    };
    let track = build_track();

    match cli.command {
        Command::Run {
            mode,
            noise_set,
            delay,
            seed,
            out,
        } => {
            let spec = ExperimentSpec::new(
                mode.parse::<Mode>()?,
                noise_set.parse::<NoiseSetId>()?,
                parse_delay(&delay)?,
                seed,
            );
            let log = run_experiment(spec, &cfg, &track)?;
            let art = export_artifacts(&out, std::slice::from_ref(&log), &track)?;
            println!(
                "{}: {} in {:.1} s, artifacts in {}",
                spec.label(),
                if log.diverged { "DIVERGED" } else { "lap complete" },
                log.lap_time,
                out.display()
            );
            if log.diverged {
                return Ok(ExitCode::from(2));
            }
            let _ = art;
            Ok(ExitCode::SUCCESS)
        }
        Command::Grid { seed, out } => {
            let logs = run_grid(seed, &cfg)?;
            let art = export_artifacts(&out, &logs, &track)?;
            for log in &logs {
                println!(
                    "{}: {} in {:.1} s",
                    log.spec.label(),
                    if log.diverged { "DIVERGED" } else { "lap complete" },
                    log.lap_time
                );
            }
            println!("metrics: {}", art.metrics_path.display());
            if art.any_diverged {
                return Ok(ExitCode::from(2));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::TuneQ { log, out } => {
            let lap = LapLog::read_csv(&log)?;
            let q0 = ProcessCovariance::uniform(1e-4);
            let outcome = tune_process_covariance(
                &lap,
                &q0,
                &TuningConfig::default(),
                &MeasurementCovariance::default(),
                &cfg.vehicle,
            )?;
            write_q_file(&outcome.q, &out)?;
            println!(
                "cost {:.6e} -> {:.6e} in {} evaluations; Q written to {}",
                outcome.initial_cost,
                outcome.final_cost,
                outcome.evaluations,
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::TuneK1 { seed } => {
            let sel = tune_k1(|k1| match evaluate_driver_k1(k1, &cfg, &track, seed) {
                Ok(pair) => pair,
                Err(_) => (f64::INFINITY, f64::INFINITY),
            });
            println!(
                "k1 = {:.3} (RMS dY {:.4} m, max |dY| {:.4} m)",
                sel.k1, sel.rms_dy, sel.max_dy
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Track { out } => {
            track.export_csv(&out)?;
            println!("track written to {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}
