use std::path::Path;

use bevdrive::bev::io::write_png;
use bevdrive::metrics::{Displacement, MetricReport, OpenLoopCase, SceneOutcome};
use bevdrive::policy::PolicyRegistry;
use bevdrive::scenario::extract::future_in_ego_frame;
use bevdrive::scenario::Scenario;
use bevdrive::sim::{run_closed_loop, SimEvent, SimTrace};
use serde::Serialize;

use crate::config::RunSettings;
use crate::error::{CliResult, Failure, EXIT_RUN};
use crate::output::{self, Manifest};

#[derive(Debug, Serialize)]
pub struct SceneSummary {
    pub scenario_id: String,
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub frames: usize,
    pub final_displacement: Option<f64>,
    pub collision: bool,
    pub offroad: bool,
    pub first_collision_frame: Option<usize>,
    pub infeasible_plans: usize,
}

#[derive(Debug, Serialize)]
struct Report<'a> {
    policy: &'a str,
    metrics: &'a MetricReport,
    scenes: &'a [SceneSummary],
}

struct SceneRun {
    trace: Option<SimTrace>,
    open: Option<OpenLoopCase>,
    failure: Option<Failure>,
}

fn run_scene(index: usize, scenario: &Scenario, settings: &RunSettings, registry: &PolicyRegistry) -> SceneRun {
    let attempt = || -> CliResult<(SimTrace, Option<OpenLoopCase>)> {
        let opts = settings.policy_options(index, &scenario.id)?;
        let mut policy = registry.create(&settings.policy, &opts)?;
        let trace = run_closed_loop(scenario, policy.as_mut(), &settings.sim)?;
        let open = match &trace.initial_decision {
            Some(d) => Some(OpenLoopCase {
                pred: d.waypoints().to_vec(),
                reference: future_in_ego_frame(scenario, settings.sim.start_frame)?,
            }),
            None => None,
        };
        Ok((trace, open))
    };
    match attempt() {
        Ok((trace, open)) => {
            let failure = trace.events.iter().find_map(|e| match e {
                SimEvent::Aborted { frame, code, message } => Some(Failure {
                    code: code.clone(),
                    message: format!("scene `{}` aborted at frame {frame}: {message}", scenario.id),
                    exit: EXIT_RUN,
                }),
                _ => None,
            });
            SceneRun {
                trace: Some(trace),
                open,
                failure,
            }
        }
        Err(mut f) => {
            f.message = format!("scene `{}`: {}", scenario.id, f.message);
            f.exit = EXIT_RUN;
            SceneRun {
                trace: None,
                open: None,
                failure: Some(f),
            }
        }
    }
}

fn summarize(scenario: &Scenario, run: &SceneRun) -> SceneSummary {
    let status = match (&run.trace, &run.failure) {
        (Some(_), None) => "ok",
        (Some(_), Some(_)) => "aborted",
        (None, _) => "error",
    };
    let t = run.trace.as_ref();
    SceneSummary {
        scenario_id: scenario.id.clone(),
        status,
        error: run.failure.as_ref().map(|f| f.to_string()),
        frames: t.map_or(0, |t| t.frames.len()),
        final_displacement: t.map(SimTrace::final_displacement),
        collision: t.is_some_and(SimTrace::any_collision),
        offroad: t.is_some_and(SimTrace::any_offroad),
        first_collision_frame: t.and_then(SimTrace::first_collision_frame),
        infeasible_plans: t.map_or(0, |t| t.plans.iter().filter(|p| !p.feasible).count()),
    }
}

fn write_frames(dir: &Path, trace: &SimTrace) -> CliResult<()> {
    let scene_dir = dir.join(output::file_stem(&trace.scenario_id));
    output::create_dir(&scene_dir)?;
    for f in &trace.frames {
        if let Some(r) = &f.raster {
            write_png(r, &scene_dir.join(format!("{:04}.png", f.frame)))?;
        }
    }
    Ok(())
}

/// Returns the process exit status.
pub fn run(source: &str, out: &Path, settings: &RunSettings) -> CliResult<u8> {
    let registry = PolicyRegistry::with_builtins();
    if !registry.contains(&settings.policy) {
        return Err(Failure::usage(format!(
            "unknown policy `{}` (available: {})",
            settings.policy,
            registry.names().join(", ")
        )));
    }
    if settings.policy == "external" && settings.cmd.is_none() {
        return Err(Failure::usage("--policy external needs --cmd"));
    }
    let scenarios = output::load_source(source)?;
    let mut manifest = Manifest::new("simulate", source, &scenarios, Some(settings.seed), settings)
        .output("report.csv")
        .output("report.json")
        .output("traces/");
    if settings.png {
        manifest = manifest.output("frames/");
    }
    manifest.write(out)?;

    let runs = output::parallel_map(settings.jobs, &scenarios, |i, s| run_scene(i, s, settings, &registry))?;

    let traces_dir = out.join("traces");
    output::create_dir(&traces_dir)?;
    let frames_dir = out.join("frames");
    let mut open = Vec::new();
    let mut closed: Vec<SceneOutcome> = Vec::new();
    let mut summaries = Vec::new();
    let mut status = 0;
    for (scenario, run) in scenarios.iter().zip(&runs) {
        summaries.push(summarize(scenario, run));
        if let Some(trace) = &run.trace {
            let path = traces_dir.join(format!("{}.jsonl", output::file_stem(&scenario.id)));
            let mut w = output::buffered(&path)?;
            trace.write_jsonl(&mut w).map_err(|e| Failure::io(&path, e))?;
            output::finish(&path, w)?;
            if settings.png {
                write_frames(&frames_dir, trace)?;
            }
        }
        match (&run.failure, &run.trace) {
            (Some(f), _) => {
                eprintln!("{f}");
                status = EXIT_RUN;
            }
            (None, Some(trace)) => {
                closed.push(trace.outcome());
                open.extend(run.open.clone());
            }
            (None, None) => unreachable!("a scene without a trace has a failure"),
        }
    }

    let kind = if settings.squared {
        Displacement::Squared
    } else {
        Displacement::Euclidean
    };
    let metrics = MetricReport::build(&open, &closed, &settings.report_horizons(), kind)?;
    output::write_text(&out.join("report.csv"), &metrics.to_csv())?;
    output::write_json(
        &out.join("report.json"),
        &Report {
            policy: &settings.policy,
            metrics: &metrics,
            scenes: &summaries,
        },
    )?;
    Ok(status)
}
