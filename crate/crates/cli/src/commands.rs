use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use bevdrive::bev::io::{read_tensor, write_png, write_tensor};
use bevdrive::bev::RasterSpec;
use bevdrive::flat_vehicle::VehicleParams;
use bevdrive::geometry::Vec2;
use bevdrive::losses::prediction_loss;
use bevdrive::metrics::{Displacement, MetricReport, OpenLoopCase, HORIZONS_S};
use bevdrive::planner::{check_and_enforce_bounds, BoundsMode, MinJerkPlanner, PlanningProblem};
use bevdrive::policy::external::stub::{self, Behavior};
use bevdrive::policy::{Decision, HistoryFrame, Observation, OracleView, PolicyOptions, PolicyRegistry};
use bevdrive::scenario::extract::{filter_and_extract, future_in_ego_frame, RasterLayer, RasterRef};
use bevdrive::scenario::{fixtures, format, Scenario};
use bevdrive::sim::rollout::{run_prediction_rollout, PredictorOptions, PredictorRegistry, RolloutConfig};
use bevdrive::DECISION_HORIZON;
use serde::{Deserialize, Serialize};

use crate::error::{CliResult, Failure, EXIT_RUN};
use crate::output::{self, Manifest};

pub fn plan(problem: &Path, mode: BoundsMode, out: Option<&Path>) -> CliResult<u8> {
    let text = std::fs::read_to_string(problem).map_err(|e| Failure::io(problem, e))?;
    let problem: PlanningProblem = serde_json::from_str(&text)?;
    let planned = MinJerkPlanner::new().solve(&problem)?;
    let planned = check_and_enforce_bounds(planned, &problem.bounds, mode);
    let json = serde_json::to_string_pretty(&planned)? + "\n";
    match out {
        Some(path) => output::write_text(path, &json)?,
        None => output::stdout(&json),
    }
    Ok(0)
}

pub fn make_fixtures(set: &str, out: &Path) -> CliResult<u8> {
    let scenarios = fixtures::by_set(set).map_err(|e| Failure::usage(e.to_string()))?;
    output::create_dir(out)?;
    for s in &scenarios {
        format::write_scenario_file(s, &out.join(format!("{}.jsonl", output::file_stem(&s.id))))?;
    }
    output::stdout(&format!("wrote {} scenarios to {}\n", scenarios.len(), out.display()));
    Ok(0)
}

pub fn extract(source: &str, out: &Path, rasters: bool) -> CliResult<u8> {
    let scenarios = output::load_source(source)?;
    let mut manifest = Manifest::new("extract", source, &scenarios, None, ()).output("records.jsonl");
    if rasters {
        manifest = manifest.output("rasters/");
    }
    manifest.write(out)?;
    let records = filter_and_extract(&scenarios);
    let path = out.join("records.jsonl");
    let mut w = output::buffered(&path)?;
    for r in &records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Failure::io(&path, e))?;
    }
    output::finish(&path, w)?;
    if rasters {
        let (params, spec) = (VehicleParams::default(), RasterSpec::default());
        for r in &records {
            let scenario = scenarios
                .iter()
                .find(|s| s.id == r.scenario_id)
                .expect("records come from the loaded scenarios");
            let dir = out.join("rasters").join(output::file_stem(&r.scenario_id));
            output::create_dir(&dir)?;
            for (name, rref) in [("current", &r.current_bev), ("next", &r.next_bev), ("env", &r.next_env)] {
                let raster = rref.render(scenario, &params, &spec)?;
                write_tensor(&raster, &dir.join(format!("{:06}_{name}.bin", r.frame)))?;
            }
        }
    }
    let used = scenarios
        .iter()
        .filter(|s| records.iter().any(|r| r.scenario_id == s.id))
        .count();
    output::stdout(&format!(
        "{} records from {used} of {} scenarios\n",
        records.len(),
        scenarios.len()
    ));
    Ok(0)
}

#[derive(Debug, Serialize)]
struct RolloutSummary {
    scenario_id: String,
    predictor: String,
    start_frame: usize,
    steps_completed: usize,
    losses: Vec<f64>,
    mean_loss: Option<f64>,
    error: Option<String>,
}

pub struct RolloutArgs<'a> {
    pub source: &'a str,
    pub predictor: &'a str,
    pub start_frame: usize,
    pub steps: usize,
    pub shift_velocity: Vec2,
    pub save_tensors: bool,
    pub png: bool,
    pub jobs: usize,
    pub out: &'a Path,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

pub fn rollout(a: &RolloutArgs) -> CliResult<u8> {
    let registry = PredictorRegistry::with_builtins();
    let opts = PredictorOptions {
        shift_velocity: a.shift_velocity,
    };
    registry
        .create(a.predictor, &opts)
        .map_err(|e| Failure::usage(format!("{e} (available: {})", registry.names().join(", "))))?;
    let scenarios = output::load_source(a.source)?;
    #[derive(Serialize)]
    struct Cfg<'a> {
        predictor: &'a str,
        start_frame: usize,
        steps: usize,
        shift_velocity: [f64; 2],
    }
    let cfg = Cfg {
        predictor: a.predictor,
        start_frame: a.start_frame,
        steps: a.steps,
        shift_velocity: [a.shift_velocity.x, a.shift_velocity.y],
    };
    Manifest::new("rollout", a.source, &scenarios, None, cfg)
        .output("rollout.json")
        .write(a.out)?;
    let config = RolloutConfig {
        start_frame: a.start_frame,
        steps: a.steps,
        ..Default::default()
    };
    let results = output::parallel_map(a.jobs, &scenarios, |_, s| {
        let mut predictor = registry.create(a.predictor, &opts).expect("checked above");
        run_prediction_rollout(s, predictor.as_mut(), &config)
    })?;
    let mut summaries = Vec::new();
    let mut status = 0;
    for (s, result) in scenarios.iter().zip(results) {
        let r = match result {
            Ok(r) => r,
            Err(e) => {
                eprintln!("{}", Failure::from(e).with_scene(&s.id));
                status = EXIT_RUN;
                continue;
            }
        };
        let losses = r.losses()?;
        if let Some(e) = &r.error {
            eprintln!("error[E_PREDICTOR]: scene `{}`: {e}", s.id);
            status = EXIT_RUN;
        }
        if a.save_tensors || a.png {
            let dir = a.out.join(output::file_stem(&s.id));
            output::create_dir(&dir)?;
            for (k, p) in r.predicted.iter().enumerate() {
                if a.save_tensors {
                    write_tensor(p, &dir.join(format!("pred_{:03}.bin", k + 1)))?;
                }
                if a.png {
                    write_png(p, &dir.join(format!("pred_{:03}.png", k + 1)))?;
                    write_png(&r.ground_truth[k + 1], &dir.join(format!("gt_{:03}.png", k + 1)))?;
                }
            }
        }
        summaries.push(RolloutSummary {
            scenario_id: s.id.clone(),
            predictor: r.predictor.clone(),
            start_frame: r.start_frame,
            steps_completed: r.predicted.len(),
            mean_loss: mean(&losses),
            losses,
            error: r.error.clone(),
        });
    }
    output::write_json(&a.out.join("rollout.json"), &summaries)?;
    Ok(status)
}

#[derive(Debug, Serialize)]
struct PredictionScore {
    scenario_id: String,
    start_frame: usize,
    steps: usize,
    prediction_loss: Vec<f64>,
    mean_prediction_loss: Option<f64>,
}

/// Score `pred_001.bin, pred_002.bin, ...` in `pred_dir` against the log,
/// with the same view and ground truth as a rollout from `start_frame`.
pub fn score_prediction(
    source: &str,
    id: &str,
    start_frame: usize,
    pred_dir: &Path,
    out: Option<&Path>,
) -> CliResult<u8> {
    let scenarios = output::load_source(source)?;
    let scenario = scenarios
        .iter()
        .find(|s| s.id == id)
        .ok_or_else(|| Failure::usage(format!("no scenario `{id}` in {source}")))?;
    let (params, spec) = (VehicleParams::default(), RasterSpec::default());
    let env = RasterRef {
        scenario_id: id.to_string(),
        frame: start_frame,
        view_frame: start_frame,
        layer: RasterLayer::Env,
    }
    .render(scenario, &params, &spec)?;
    let mut losses = Vec::new();
    for k in 1.. {
        let path = pred_dir.join(format!("pred_{k:03}.bin"));
        if !path.exists() {
            break;
        }
        if start_frame + k >= scenario.len() {
            return Err(bevdrive::Error::Horizon {
                frame: start_frame,
                needed: k,
                len: scenario.len(),
            }
            .into());
        }
        let pred = read_tensor(&path, &spec)?;
        let gt = RasterRef {
            scenario_id: id.to_string(),
            frame: start_frame + k,
            view_frame: start_frame,
            layer: RasterLayer::Composed,
        }
        .render(scenario, &params, &spec)?;
        losses.push(prediction_loss(&env, &pred.dynamic_part(), &gt)?);
    }
    if losses.is_empty() {
        return Err(Failure::usage(format!("no pred_001.bin in {}", pred_dir.display())));
    }
    let score = PredictionScore {
        scenario_id: id.to_string(),
        start_frame,
        steps: losses.len(),
        mean_prediction_loss: mean(&losses),
        prediction_loss: losses,
    };
    match out {
        Some(p) => output::write_json(p, &score)?,
        None => output::stdout(&(serde_json::to_string_pretty(&score)? + "\n")),
    }
    Ok(0)
}

#[derive(Debug, Deserialize)]
struct DecisionLine {
    scenario_id: String,
    frame: usize,
    waypoints: Decision,
}

pub struct EvalArgs<'a> {
    pub source: &'a str,
    pub policy: Option<&'a str>,
    pub decisions: Option<&'a Path>,
    pub cmd: Option<String>,
    pub stride: usize,
    pub squared: bool,
    pub seed: u64,
    pub out: &'a Path,
}

fn read_decisions(path: &Path) -> CliResult<Vec<DecisionLine>> {
    let file = std::fs::File::open(path).map_err(|e| Failure::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Failure::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let d: DecisionLine = serde_json::from_str(&line).map_err(|e| bevdrive::Error::Parse {
            file: path.to_path_buf(),
            line: i + 1,
            field: "decision".into(),
            message: e.to_string(),
        })?;
        out.push(d);
    }
    Ok(out)
}

fn policy_decisions(scenarios: &[Scenario], name: &str, a: &EvalArgs) -> CliResult<Vec<DecisionLine>> {
    let registry = PolicyRegistry::with_builtins();
    if !registry.contains(name) {
        return Err(Failure::usage(format!(
            "unknown policy `{name}` (available: {})",
            registry.names().join(", ")
        )));
    }
    let opts = PolicyOptions {
        cmd: a.cmd.clone(),
        seed: a.seed,
        ..Default::default()
    };
    let mut policy = registry.create(name, &opts)?;
    let (params, spec) = (VehicleParams::default(), RasterSpec::default());
    let mut out = Vec::new();
    for s in scenarios {
        for frame in (0..s.len().saturating_sub(DECISION_HORIZON)).step_by(a.stride) {
            let raster = if policy.needs_rasters() {
                let r = RasterRef {
                    scenario_id: s.id.clone(),
                    frame,
                    view_frame: frame,
                    layer: RasterLayer::Composed,
                };
                Some(Arc::new(r.render(s, &params, &spec)?))
            } else {
                None
            };
            let obs = Observation::new(vec![HistoryFrame {
                frame,
                ego: s.ego_log[frame],
                raster,
            }])?;
            let oracle = policy.uses_oracle().then_some(OracleView { scenario: s, frame });
            out.push(DecisionLine {
                scenario_id: s.id.clone(),
                frame,
                waypoints: policy.decide(&obs, oracle)?,
            });
        }
    }
    Ok(out)
}

/// Open-loop scoring of decisions against the logged future.
pub fn eval_decisions(a: &EvalArgs) -> CliResult<u8> {
    if a.stride == 0 {
        return Err(Failure::usage("--stride must be at least 1"));
    }
    let scenarios = output::load_source(a.source)?;
    #[derive(Serialize)]
    struct Cfg<'a> {
        policy: Option<&'a str>,
        decisions: Option<PathBuf>,
        stride: usize,
        squared: bool,
    }
    let cfg = Cfg {
        policy: a.policy,
        decisions: a.decisions.map(Path::to_path_buf),
        stride: a.stride,
        squared: a.squared,
    };
    Manifest::new("eval-decisions", a.source, &scenarios, Some(a.seed), cfg)
        .output("report.csv")
        .output("report.json")
        .write(a.out)?;
    let lines = match (a.decisions, a.policy) {
        (Some(path), None) => read_decisions(path)?,
        (None, Some(name)) => policy_decisions(&scenarios, name, a)?,
        _ => return Err(Failure::usage("give exactly one of --policy or --decisions")),
    };
    let mut cases = Vec::with_capacity(lines.len());
    for d in &lines {
        let s = scenarios
            .iter()
            .find(|s| s.id == d.scenario_id)
            .ok_or_else(|| Failure::usage(format!("decision for unknown scenario `{}`", d.scenario_id)))?;
        cases.push(OpenLoopCase {
            pred: d.waypoints.waypoints().to_vec(),
            reference: future_in_ego_frame(s, d.frame)?,
        });
    }
    let kind = if a.squared {
        Displacement::Squared
    } else {
        Displacement::Euclidean
    };
    let report = MetricReport::build(&cases, &[], &HORIZONS_S, kind)?;
    output::write_text(&a.out.join("report.csv"), &report.to_csv())?;
    output::write_json(&a.out.join("report.json"), &report)?;
    output::stdout(&format!("scored {} decisions\n", cases.len()));
    Ok(0)
}

pub fn policy_stub(behavior: Behavior) -> CliResult<u8> {
    let stdin = std::io::stdin();
    let mut stdout = std::io::stdout().lock();
    let lines = stdin.lock().lines().map_while(Result::ok);
    stub::serve(lines, behavior, |reply| {
        writeln!(stdout, "{reply}").and_then(|_| stdout.flush()).is_ok()
    });
    Ok(0)
}
