//! Command-line front end: fixtures, extraction, planning, closed-loop
//! simulation, prediction rollouts and reports.

mod commands;
mod config;
mod error;
mod output;
mod simulate;

use std::path::PathBuf;
use std::process::ExitCode;

use bevdrive::geometry::Vec2;
use bevdrive::planner::BoundsMode;
use bevdrive::policy::external::stub::Behavior;
use clap::{Args, Parser, Subcommand};

use config::{FileConfig, Overrides, RunSettings};
use error::{CliResult, Failure, EXIT_USAGE};

#[derive(Debug, Parser)]
#[command(
    name = "bevdrive",
    version,
    about = "Closed-loop evaluation of BEV decision policies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Source {
    /// Scenario directory, a single scenario file, or `builtin:<basic|paper-scenes|all>`.
    #[arg(long)]
    scenarios: String,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run policies in closed loop and write traces and a metric report.
    Simulate {
        #[command(flatten)]
        source: Source,
        /// TOML run configuration; flags take precedence.
        #[arg(long)]
        config: Option<PathBuf>,
        /// replay, cv or external.
        #[arg(long)]
        policy: Option<String>,
        /// Command line of an external policy process.
        #[arg(long)]
        cmd: Option<String>,
        /// Simulated seconds and largest reported horizon.
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Gaussian noise added to every waypoint, meters.
        #[arg(long)]
        noise: Option<f64>,
        /// How rasters reach an external policy: none, inline or files:<dir>.
        #[arg(long)]
        rasters: Option<String>,
        #[arg(long)]
        timeout_ms: Option<u64>,
        /// Write every frame's raster as PNG.
        #[arg(long)]
        png: bool,
        /// Report mean squared instead of mean Euclidean displacement.
        #[arg(long)]
        squared: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve a planning problem given as JSON.
    Plan {
        #[arg(long)]
        problem: PathBuf,
        #[arg(long, default_value = "report")]
        bounds_mode: BoundsMode,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Extract training records from logs.
    Extract {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        out: PathBuf,
        /// Also write the three rasters of every record.
        #[arg(long)]
        rasters: bool,
    },
    /// Score saved raster predictions against the log.
    ScorePrediction {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value_t = 0)]
        start_frame: usize,
        /// Directory holding pred_001.bin, pred_002.bin, ...
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write built-in scenario fixtures.
    MakeFixtures {
        /// basic, paper-scenes or all.
        #[arg(long, default_value = "basic")]
        set: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score open-loop decisions against the logged future.
    EvalDecisions {
        #[command(flatten)]
        source: Source,
        #[arg(long, conflicts_with = "decisions")]
        policy: Option<String>,
        /// JSONL of {scenario_id, frame, waypoints}.
        #[arg(long)]
        decisions: Option<PathBuf>,
        #[arg(long)]
        cmd: Option<String>,
        #[arg(long, default_value_t = 10)]
        stride: usize,
        #[arg(long)]
        squared: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Autoregressive raster prediction rollout.
    Rollout {
        #[command(flatten)]
        source: Source,
        /// identity, oracle or cv-shift.
        #[arg(long, default_value = "oracle")]
        predictor: String,
        #[arg(long, default_value_t = 0)]
        start_frame: usize,
        #[arg(long, default_value_t = bevdrive::sim::rollout::ROLLOUT_STEPS)]
        steps: usize,
        /// World velocity for cv-shift, `vx,vy` in m/s.
        #[arg(long, default_value = "0,0", value_parser = parse_vec2)]
        shift_velocity: Vec2,
        #[arg(long)]
        save_tensors: bool,
        #[arg(long)]
        png: bool,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Protocol test server on stdin/stdout.
    #[command(hide = true)]
    PolicyStub {
        #[arg(long, default_value = "cv")]
        behavior: Behavior,
    },
}

fn parse_vec2(s: &str) -> Result<Vec2, String> {
    let parts: Vec<&str> = s.split(',').collect();
    match parts.as_slice() {
        [x, y] => {
            let x: f64 = x.trim().parse().map_err(|e| format!("{e}"))?;
            let y: f64 = y.trim().parse().map_err(|e| format!("{e}"))?;
            Ok(Vec2::new(x, y))
        }
        _ => Err(format!("expected `vx,vy`, got `{s}`")),
    }
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn run(cli: Cli) -> CliResult<u8> {
    match cli.command {
        Command::Simulate {
            source,
            config,
            policy,
            cmd,
            horizon,
            jobs,
            seed,
            noise,
            rasters,
            timeout_ms,
            png,
            squared,
            out,
        } => {
            let file = config.as_deref().map(FileConfig::load).transpose()?;
            let flags = Overrides {
                policy,
                cmd,
                horizon,
                seed,
                noise,
                squared,
                png,
                rasters,
                timeout_ms,
                jobs,
            };
            let settings = RunSettings::resolve(file, flags)?;
            simulate::run(&source.scenarios, &out, &settings)
        }
        Command::Plan {
            problem,
            bounds_mode,
            out,
        } => commands::plan(&problem, bounds_mode, out.as_deref()),
        Command::Extract { source, out, rasters } => commands::extract(&source.scenarios, &out, rasters),
        Command::ScorePrediction {
            source,
            scenario,
            start_frame,
            pred,
            out,
        } => commands::score_prediction(&source.scenarios, &scenario, start_frame, &pred, out.as_deref()),
        Command::MakeFixtures { set, out } => commands::make_fixtures(&set, &out),
        Command::EvalDecisions {
            source,
            policy,
            decisions,
            cmd,
            stride,
            squared,
            seed,
            out,
        } => commands::eval_decisions(&commands::EvalArgs {
            source: &source.scenarios,
            policy: policy.as_deref(),
            decisions: decisions.as_deref(),
            cmd,
            stride,
            squared,
            seed,
            out: &out,
        }),
        Command::Rollout {
            source,
            predictor,
            start_frame,
            steps,
            shift_velocity,
            save_tensors,
            png,
            jobs,
            out,
        } => commands::rollout(&commands::RolloutArgs {
            source: &source.scenarios,
            predictor: &predictor,
            start_frame,
            steps,
            shift_velocity,
            save_tensors,
            png,
            jobs: jobs.unwrap_or_else(default_jobs).max(1),
            out: &out,
        }),
        Command::PolicyStub { behavior } => commands::policy_stub(behavior),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            output::stdout(&e.to_string());
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let first = e.to_string();
            let first = first.lines().next().unwrap_or("bad arguments");
            let msg = first.strip_prefix("error: ").unwrap_or(first);
            eprintln!("{} (see --help)", Failure::usage(msg));
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("{f}");
            ExitCode::from(f.exit)
        }
    }
}
