//! Closed-loop simulation: policy, minimum-jerk planner, then execution of
//! the planned flat trajectory on the bicycle model. Agents replay their logs.

pub mod rollout;

use std::collections::VecDeque;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bev::{render_scene, BevRaster, RasterSpec};
use crate::error::{Error, Result};
use crate::flat_vehicle::{flat_to_state_held, integrate, VehicleParams, VehicleState, MAX_SUBSTEP};
use crate::geometry::{local_to_world, point_polyline_distance, OrientedBox, Vec2};
use crate::metrics::SceneOutcome;
use crate::planner::{check_and_enforce_bounds, BoundaryState, BoundsMode, MinJerkPlanner, PlanningProblem};
use crate::policy::{Decision, HistoryFrame, Observation, OracleView, Policy};
use crate::scenario::Scenario;
use crate::{CONTEXT_LENGTH, DECISION_HORIZON, FRAME_DT};

pub use rollout::{
    run_prediction_rollout, CvShiftPredictor, IdentityPredictor, OraclePredictor, PredictionContext, Predictor,
    PredictorOptions, PredictorRegistry, Rollout, RolloutConfig, ROLLOUT_STEPS,
};

/// How the planner's terminal velocity is chosen from a decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndVelocity {
    /// Backward difference of the last two waypoints.
    #[default]
    FiniteDifference,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Simulated time in seconds.
    pub duration: f64,
    pub replan_period: f64,
    pub dt_sim: f64,
    /// Log frame the simulation starts from.
    pub start_frame: usize,
    pub bounds: VehicleParams,
    pub bounds_mode: BoundsMode,
    pub collision: bool,
    pub offroad_threshold: f64,
    pub end_velocity: EndVelocity,
    /// Number of past frames handed to the policy.
    pub history_len: usize,
    /// Keep the composed raster of every frame in the trace.
    pub keep_rasters: bool,
    pub raster: RasterSpec,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            duration: 4.0,
            replan_period: FRAME_DT,
            dt_sim: FRAME_DT,
            start_frame: 0,
            bounds: VehicleParams::default(),
            bounds_mode: BoundsMode::Report,
            collision: true,
            offroad_threshold: 2.0,
            end_velocity: EndVelocity::FiniteDifference,
            history_len: CONTEXT_LENGTH,
            keep_rasters: false,
            raster: RasterSpec::default(),
        }
    }
}

fn whole_steps(x: f64, step: f64, what: &str) -> Result<usize> {
    let n = x / step;
    let r = n.round();
    if !(x > 0.0) || r < 1.0 || (n - r).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "{what} {x} s is not a positive multiple of {step} s"
        )));
    }
    Ok(r as usize)
}

impl SimConfig {
    /// Number of simulated steps after the initial frame.
    pub fn num_steps(&self) -> Result<usize> {
        whole_steps(self.duration, self.dt_sim, "duration")
    }

    pub fn validate(&self) -> Result<()> {
        if (self.dt_sim - FRAME_DT).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "dt_sim must equal the log frame period {FRAME_DT} s, got {}",
                self.dt_sim
            )));
        }
        self.num_steps()?;
        let per_plan = whole_steps(self.replan_period, self.dt_sim, "replan_period")?;
        if per_plan > DECISION_HORIZON {
            return Err(Error::invalid("replan_period exceeds the decision horizon"));
        }
        if !(self.offroad_threshold.is_finite() && self.offroad_threshold >= 0.0) {
            return Err(Error::invalid("offroad_threshold must be non-negative"));
        }
        if self.history_len == 0 || self.history_len > CONTEXT_LENGTH {
            return Err(Error::invalid(format!("history_len must lie in 1..={CONTEXT_LENGTH}")));
        }
        self.bounds.validate()?;
        self.raster.validate()
    }
}

/// True iff any agent box intersects the ego box.
pub fn detect_collision(ego: &OrientedBox, agents: &[OrientedBox]) -> bool {
    agents.iter().any(|a| a.intersects(ego))
}

/// True iff `pos` is strictly farther than `threshold` from the reference polyline.
pub fn detect_offroad(pos: Vec2, reference: &[Vec2], threshold: f64) -> Result<bool> {
    let d =
        point_polyline_distance(pos, reference).ok_or_else(|| Error::Domain("empty reference trajectory".into()))?;
    Ok(d > threshold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SimEvent {
    Collision {
        frame: usize,
        agents: Vec<u32>,
    },
    Offroad {
        frame: usize,
        distance: f64,
    },
    Infeasible {
        frame: usize,
        plan_id: usize,
        peak_speed: f64,
        peak_accel: f64,
    },
    Aborted {
        frame: usize,
        code: String,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub id: usize,
    pub frame: usize,
    pub jerk_cost: f64,
    pub feasible: bool,
    pub peak_speed: f64,
    pub peak_accel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimFrame {
    /// Log frame index.
    pub frame: usize,
    /// Seconds since the start of the simulation.
    pub t: f64,
    pub ego: VehicleState,
    /// Logged ego position at this frame.
    pub reference: Vec2,
    /// Plan being executed when this frame was reached; none for the first frame.
    pub plan_id: Option<usize>,
    pub collision: bool,
    pub offroad: bool,
    #[serde(skip)]
    pub raster: Option<Arc<BevRaster>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub scenario_id: String,
    pub policy: String,
    pub config: SimConfig,
    pub frames: Vec<SimFrame>,
    pub events: Vec<SimEvent>,
    pub plans: Vec<PlanRecord>,
    /// The decision taken at the first frame, from the logged state.
    pub initial_decision: Option<Decision>,
    pub aborted: bool,
}

impl SimTrace {
    pub fn first_collision_frame(&self) -> Option<usize> {
        self.frames.iter().find(|f| f.collision).map(|f| f.frame)
    }

    pub fn any_collision(&self) -> bool {
        self.frames.iter().any(|f| f.collision)
    }

    pub fn any_offroad(&self) -> bool {
        self.frames.iter().any(|f| f.offroad)
    }

    pub fn final_displacement(&self) -> f64 {
        let f = self.frames.last().expect("trace has the initial frame");
        (f.ego.position() - f.reference).norm()
    }

    pub fn outcome(&self) -> SceneOutcome {
        SceneOutcome {
            executed: self.frames.iter().map(|f| f.ego.position()).collect(),
            reference: self.frames.iter().map(|f| f.reference).collect(),
            collision: self.frames.iter().map(|f| f.collision).collect(),
            offroad: self.frames.iter().map(|f| f.offroad).collect(),
        }
    }

    /// A header line, then one line per frame, plan and event.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let header = serde_json::json!({
            "type": "trace",
            "scenario_id": self.scenario_id,
            "policy": self.policy,
            "config": self.config,
            "aborted": self.aborted,
            "initial_decision": self.initial_decision,
        });
        writeln!(out, "{header}")?;
        let tagged = |tag: &str, v: serde_json::Value| {
            let mut v = v;
            v.as_object_mut()
                .expect("records serialize as objects")
                .insert("type".into(), tag.into());
            v
        };
        for f in &self.frames {
            writeln!(out, "{}", tagged("frame", serde_json::to_value(f)?))?;
        }
        for p in &self.plans {
            writeln!(out, "{}", tagged("plan", serde_json::to_value(p)?))?;
        }
        for e in &self.events {
            writeln!(out, "{}", tagged("event", serde_json::to_value(e)?))?;
        }
        Ok(())
    }
}

struct Stepper<'a> {
    scenario: &'a Scenario,
    config: &'a SimConfig,
    reference_path: Vec<Vec2>,
    render: bool,
}

impl Stepper<'_> {
    fn raster(&self, frame: usize, ego: &VehicleState) -> Result<Option<Arc<BevRaster>>> {
        if !(self.render || self.config.keep_rasters) {
            return Ok(None);
        }
        let agents = self.scenario.agent_boxes(frame);
        let r = render_scene(
            &self.scenario.map,
            &agents,
            ego,
            ego,
            &self.config.bounds,
            &self.config.raster,
        )?;
        Ok(Some(Arc::new(r)))
    }

    /// Frame record and the history entry for the policy.
    fn record(
        &self,
        k: usize,
        ego: VehicleState,
        plan_id: Option<usize>,
        events: &mut Vec<SimEvent>,
    ) -> Result<(SimFrame, HistoryFrame)> {
        let frame = self.config.start_frame + k;
        let raster = self.raster(frame, &ego)?;
        let mut collision = false;
        if self.config.collision {
            let footprint = self.config.bounds.footprint(&ego);
            let hits: Vec<u32> = self
                .scenario
                .agents
                .iter()
                .filter(|a| a.footprint(frame).is_some_and(|b| b.intersects(&footprint)))
                .map(|a| a.id)
                .collect();
            if !hits.is_empty() {
                collision = true;
                events.push(SimEvent::Collision { frame, agents: hits });
            }
        }
        let distance = point_polyline_distance(ego.position(), &self.reference_path).expect("reference is non-empty");
        let offroad = distance > self.config.offroad_threshold;
        if offroad {
            events.push(SimEvent::Offroad { frame, distance });
        }
        let record = SimFrame {
            frame,
            t: k as f64 * self.config.dt_sim,
            ego,
            reference: self.scenario.ego_log[frame].position(),
            plan_id,
            collision,
            offroad,
            raster: if self.config.keep_rasters { raster.clone() } else { None },
        };
        let seen = HistoryFrame {
            frame,
            ego,
            raster: if self.render { raster } else { None },
        };
        Ok((record, seen))
    }
}

fn plan_from_decision(
    planner: &mut MinJerkPlanner,
    ego: &VehicleState,
    decision: &Decision,
    config: &SimConfig,
) -> Result<crate::planner::PlannedTrajectory> {
    let origin = ego.position();
    let mut knots = Vec::with_capacity(DECISION_HORIZON + 1);
    knots.push(origin);
    knots.extend(
        decision
            .waypoints()
            .iter()
            .map(|w| local_to_world(*w, origin, ego.theta)),
    );
    let end_velocity = match config.end_velocity {
        EndVelocity::FiniteDifference => (knots[DECISION_HORIZON] - knots[DECISION_HORIZON - 1]) / FRAME_DT,
        EndVelocity::Zero => Vec2::zeros(),
    };
    let start = BoundaryState::new(origin, ego.velocity());
    let problem = PlanningProblem::from_knots(start, end_velocity, &knots, FRAME_DT, config.bounds)?;
    let planned = planner.solve(&problem)?;
    Ok(match config.bounds_mode {
        BoundsMode::Report => planned,
        BoundsMode::Rescale => check_and_enforce_bounds(planned, &config.bounds, BoundsMode::Rescale),
    })
}

/// Run one scene. Configuration and scenario problems are errors; policy or
/// planner failures mid-run end the trace early with an `Aborted` event.
pub fn run_closed_loop(scenario: &Scenario, policy: &mut dyn Policy, config: &SimConfig) -> Result<SimTrace> {
    config.validate()?;
    scenario.validate()?;
    let steps = config.num_steps()?;
    let per_plan = whole_steps(config.replan_period, config.dt_sim, "replan_period")?;
    if config.start_frame + steps >= scenario.len() {
        return Err(Error::Horizon {
            frame: config.start_frame,
            needed: steps,
            len: scenario.len(),
        });
    }
    let stepper = Stepper {
        scenario,
        config,
        reference_path: scenario.ego_log[config.start_frame..]
            .iter()
            .map(|s| s.position())
            .collect(),
        render: policy.needs_rasters(),
    };

    let mut trace = SimTrace {
        scenario_id: scenario.id.clone(),
        policy: policy.name().to_string(),
        config: config.clone(),
        frames: Vec::with_capacity(steps + 1),
        events: Vec::new(),
        plans: Vec::new(),
        initial_decision: None,
        aborted: false,
    };
    let mut ego = scenario.ego_log[config.start_frame];
    let (first, seen) = stepper.record(0, ego, None, &mut trace.events)?;
    trace.frames.push(first);
    let mut history = VecDeque::with_capacity(config.history_len);
    history.push_back(seen);

    let oracle = policy.uses_oracle();
    let mut planner = MinJerkPlanner::new();
    let mut active = None;
    let mut plan_t = 0.0;
    for k in 0..steps {
        let frame = config.start_frame + k;
        if k % per_plan == 0 {
            let decided = Observation::new(history.iter().cloned().collect())
                .and_then(|obs| policy.decide(&obs, oracle.then_some(OracleView { scenario, frame })))
                .map_err(Error::from)
                .and_then(|d| {
                    let planned = plan_from_decision(&mut planner, &ego, &d, config)?;
                    Ok((d, planned))
                });
            let (decision, planned) = match decided {
                Ok(x) => x,
                Err(e) => {
                    log::warn!("scene `{}` aborted at frame {frame}: {e}", scenario.id);
                    trace.events.push(SimEvent::Aborted {
                        frame,
                        code: e.code().to_string(),
                        message: e.to_string(),
                    });
                    trace.aborted = true;
                    return Ok(trace);
                }
            };
            if k == 0 {
                trace.initial_decision = Some(decision);
            }
            let id = trace.plans.len();
            if !planned.feasible {
                trace.events.push(SimEvent::Infeasible {
                    frame,
                    plan_id: id,
                    peak_speed: planned.peak_speed,
                    peak_accel: planned.peak_accel,
                });
            }
            trace.plans.push(PlanRecord {
                id,
                frame,
                jerk_cost: planned.jerk_cost,
                feasible: planned.feasible,
                peak_speed: planned.peak_speed,
                peak_accel: planned.peak_accel,
            });
            active = Some((id, planned.traj));
            plan_t = 0.0;
        }
        let (id, traj) = active.as_ref().expect("a plan is made on the first step");
        let mut flat_err = None;
        let next = integrate(&ego, &config.bounds, config.dt_sim, MAX_SUBSTEP, |t, st| {
            let t = (plan_t + t).min(traj.t_end());
            match traj
                .to_flat_signal(t)
                .map_err(|e| e.to_string())
                .and_then(|sig| flat_to_state_held(&sig, &config.bounds, st.theta).map_err(|e| e.to_string()))
            {
                Ok((_, u)) => u,
                Err(e) => {
                    flat_err.get_or_insert(e);
                    Default::default()
                }
            }
        });
        let next = match (next, flat_err) {
            (Ok(s), None) => s,
            (Err(e), _) => return Err(e),
            (Ok(_), Some(msg)) => {
                trace.events.push(SimEvent::Aborted {
                    frame,
                    code: "E_FLAT".into(),
                    message: msg,
                });
                trace.aborted = true;
                return Ok(trace);
            }
        };
        ego = next;
        plan_t += config.dt_sim;
        let (record, seen) = stepper.record(k + 1, ego, Some(*id), &mut trace.events)?;
        trace.frames.push(record);
        if history.len() == config.history_len {
            history.pop_front();
        }
        history.push_back(seen);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{ConstantVelocityPolicy, PolicyError, ReplayPolicy};
    use crate::scenario::fixtures;

    #[test]
    fn collision_examples() {
        let a = OrientedBox::new(Vec2::new(0.0, 0.0), 0.3, 4.0, 2.0);
        assert!(detect_collision(&a, &[a]));
        let far = OrientedBox::new(Vec2::new(100.0, 0.0), 0.0, 4.0, 2.0);
        assert!(!detect_collision(&a, &[far]));
        let unit = |x| OrientedBox::new(Vec2::new(x, 0.0), 0.0, 1.0, 1.0);
        assert!(detect_collision(&unit(0.0), &[unit(0.99)]));
        assert!(!detect_collision(&unit(0.0), &[unit(1.01)]));
        assert!(!detect_collision(&a, &[]));
    }

    #[test]
    fn offroad_examples() {
        let reference = vec![Vec2::new(0.0, 0.0), Vec2::new(100.0, 0.0)];
        assert!(!detect_offroad(Vec2::new(30.0, 0.0), &reference, 2.0).unwrap());
        assert!(detect_offroad(Vec2::new(30.0, 2.5), &reference, 2.0).unwrap());
        assert!(!detect_offroad(Vec2::new(30.0, 2.0), &reference, 2.0).unwrap());
        assert!(detect_offroad(Vec2::zeros(), &[], 2.0).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig::default().validate().is_ok());
        let bad = |f: fn(&mut SimConfig)| {
            let mut c = SimConfig::default();
            f(&mut c);
            c.validate().is_err()
        };
        assert!(bad(|c| c.duration = 0.0));
        assert!(bad(|c| c.duration = 0.25));
        assert!(bad(|c| c.replan_period = 0.15));
        assert!(bad(|c| c.dt_sim = 0.05));
        assert!(bad(|c| c.history_len = 61));
        assert!(bad(|c| c.replan_period = 4.1));
    }

    #[test]
    fn replay_tracks_constant_velocity_log() {
        let s = fixtures::constant_velocity(100, 6.0);
        let trace = run_closed_loop(&s, &mut ReplayPolicy, &SimConfig::default()).unwrap();
        assert_eq!(trace.frames.len(), 41);
        assert!(!trace.aborted);
        assert!(trace.final_displacement() < 1e-6);
        assert_eq!(trace.plans.len(), 40);
    }

    #[test]
    fn cv_on_straight_road_is_clean() {
        let s = fixtures::straight_road();
        let trace = run_closed_loop(&s, &mut ConstantVelocityPolicy, &SimConfig::default()).unwrap();
        assert!(!trace.any_collision());
        assert!(!trace.any_offroad());
        assert!(trace.events.is_empty());
    }

    #[test]
    fn stalled_agent_collides_at_known_frame() {
        let s = fixtures::stalled_agent();
        let config = SimConfig {
            duration: 7.0,
            ..SimConfig::default()
        };
        let trace = run_closed_loop(&s, &mut ReplayPolicy, &config).unwrap();
        assert_eq!(
            trace.first_collision_frame(),
            Some(fixtures::STALLED_AGENT_OVERLAP_FRAME)
        );
        assert!(trace.any_collision());
        assert!(matches!(&trace.events[0], SimEvent::Collision { frame, agents } if *frame == 52 && agents == &[1]));
    }

    struct Failing;

    impl Policy for Failing {
        fn name(&self) -> &str {
            "failing"
        }

        fn needs_rasters(&self) -> bool {
            false
        }

        fn decide(&mut self, _: &Observation, _: Option<OracleView<'_>>) -> std::result::Result<Decision, PolicyError> {
            Err(PolicyError::MalformedDecision("39 rows".into()))
        }
    }

    #[test]
    fn policy_error_aborts_with_diagnostic() {
        let s = fixtures::straight_road();
        let trace = run_closed_loop(&s, &mut Failing, &SimConfig::default()).unwrap();
        assert!(trace.aborted);
        assert_eq!(trace.frames.len(), 1);
        assert!(matches!(&trace.events[0], SimEvent::Aborted { code, .. } if code == "E_POLICY"));
    }

    #[test]
    fn horizon_checked_up_front() {
        let s = fixtures::constant_velocity(30, 5.0);
        assert!(matches!(
            run_closed_loop(&s, &mut ConstantVelocityPolicy, &SimConfig::default()),
            Err(Error::Horizon { .. })
        ));
    }

    #[test]
    fn trace_jsonl_lines() {
        let s = fixtures::constant_velocity(100, 6.0);
        let config = SimConfig {
            duration: 1.0,
            replan_period: 0.5,
            ..SimConfig::default()
        };
        let trace = run_closed_loop(&s, &mut ConstantVelocityPolicy, &config).unwrap();
        assert_eq!(trace.plans.len(), 2);
        let mut buf = Vec::new();
        trace.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let types: Vec<String> = text
            .lines()
            .map(|l| {
                serde_json::from_str::<serde_json::Value>(l).unwrap()["type"]
                    .as_str()
                    .unwrap()
                    .to_string()
            })
            .collect();
        assert_eq!(types[0], "trace");
        assert_eq!(types.iter().filter(|t| *t == "frame").count(), 11);
        assert_eq!(types.iter().filter(|t| *t == "plan").count(), 2);
    }
}
