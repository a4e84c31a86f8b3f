use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Parser)]
#[command(name = "daaria", version, about = "Attention-aware hazard display pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Method {
    Kabsch,
    Icp,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write the replay log, truth sidecar and calibration.
    Simulate {
        /// Scenario file, or the name of a bundled scenario.
        #[arg(long)]
        scenario: String,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the display pipeline over a replay log.
    Replay {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        calib: PathBuf,
        /// Directory for per-frame bird and scene PPM images.
        #[arg(long)]
        render: Option<PathBuf>,
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Per-frame vane states (JSONL). Defaults to `<render>/vane.jsonl`.
        #[arg(long)]
        vane: Option<PathBuf>,
    },
    /// Estimate the eye-tracker to vehicle transform from gaze/laser samples.
    Calibrate {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long, value_enum, default_value = "kabsch")]
        method: Method,
        /// Starting transform for ICP (calibration file); identity if absent.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Reference calibration to report the error against.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte-Carlo accuracy study of the calibration procedure.
    CalibSynth {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0.5)]
        gaze_noise_deg: f64,
        #[arg(long, default_value_t = 0.01)]
        dist_noise_m: f64,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Also write one synthetic sample set (JSONL).
        #[arg(long)]
        write_samples: Option<PathBuf>,
        /// Also write the synthetic target description (JSON).
        #[arg(long)]
        write_target: Option<PathBuf>,
    },
    /// Serve live sessions on /session.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long)]
        scenario_dir: Option<PathBuf>,
        /// Scenario of the default session.
        #[arg(long, default_value = "crossing-pedestrian")]
        scenario: String,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::Ipv4Addr,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { scenario, seed, out } => commands::simulate(&scenario, seed, &out),
        Command::Replay { log, calib, render, metrics, vane } => {
            commands::replay(&log, &calib, render.as_deref(), metrics.as_deref(), vane.as_deref())
        }
        Command::Calibrate { samples, target, method, init, truth, out } => {
            commands::calibrate(&samples, &target, method, init.as_deref(), truth.as_deref(), out.as_deref())
        }
        Command::CalibSynth { truth, n, gaze_noise_deg, dist_noise_m, trials, seed, write_samples, write_target } => {
            commands::calib_synth(commands::SynthArgs {
                truth: &truth,
                n,
                gaze_noise_deg,
                dist_noise_m,
                trials,
                seed,
                write_samples: write_samples.as_deref(),
                write_target: write_target.as_deref(),
            })
        }
        Command::Serve { port, scenario_dir, scenario, host } => commands::serve(port, host, scenario_dir, scenario),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("daaria: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
