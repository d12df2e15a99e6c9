//! Minimum-jerk motion planning over piecewise quintics.
//!
//! The problem fixes start and end position and velocity, the position of
//! every interior knot, and C2 continuity between pieces. Endpoint
//! accelerations are free unless a boundary pins one. Dynamic bounds are not part of the solve: they are
//! checked afterwards by sampling and optionally enforced by uniform time
//! dilation (see [`check_and_enforce_bounds`]).

pub mod kkt;

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Dyn, LU};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flat_vehicle::VehicleParams;
use crate::geometry::Vec2;
use crate::trajectory::{PiecewiseQuintic, QuinticPiece};
use crate::FRAME_DT;

/// Tolerance for a caller-supplied leading waypoint to coincide with the start.
pub const LEADING_WAYPOINT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryState {
    pub position: Vec2,
    pub velocity: Vec2,
    /// Pinned acceleration; free when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acceleration: Option<Vec2>,
}

impl BoundaryState {
    pub fn new(position: Vec2, velocity: Vec2) -> Self {
        Self {
            position,
            velocity,
            acceleration: None,
        }
    }

    fn axis(&self, axis: usize) -> kkt::AxisBoundary {
        kkt::AxisBoundary {
            pos: self.position[axis],
            vel: self.velocity[axis],
            acc: self.acceleration.map(|a| a[axis]),
        }
    }
}

fn default_dt_piece() -> f64 {
    FRAME_DT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanningProblem {
    pub start: BoundaryState,
    pub end: BoundaryState,
    /// Interior knot positions `p_1 .. p_{M-1}`.
    #[serde(default)]
    pub waypoints: Vec<Vec2>,
    #[serde(default = "default_dt_piece")]
    pub dt_piece: f64,
    #[serde(default)]
    pub bounds: VehicleParams,
}

impl PlanningProblem {
    /// Build a problem from the full knot sequence `p_0 .. p_M`.
    ///
    /// `p_0` must coincide with `start.position` and is dropped; `p_M` becomes
    /// the end position.
    pub fn from_knots(
        start: BoundaryState,
        end_velocity: Vec2,
        knots: &[Vec2],
        dt_piece: f64,
        bounds: VehicleParams,
    ) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::invalid("need at least two knots"));
        }
        let gap = (knots[0] - start.position).norm();
        if gap > LEADING_WAYPOINT_TOL {
            return Err(Error::invalid(format!(
                "first knot differs from start position by {gap} m"
            )));
        }
        let problem = Self {
            start,
            end: BoundaryState::new(knots[knots.len() - 1], end_velocity),
            waypoints: knots[1..knots.len() - 1].to_vec(),
            dt_piece,
            bounds,
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn num_pieces(&self) -> usize {
        self.waypoints.len() + 1
    }

    pub fn validate(&self) -> Result<()> {
        let vecs = [
            self.start.position,
            self.start.velocity,
            self.end.position,
            self.end.velocity,
        ];
        let finite = vecs
            .iter()
            .chain(self.start.acceleration.iter())
            .chain(self.end.acceleration.iter())
            .chain(self.waypoints.iter())
            .all(|v| v.x.is_finite() && v.y.is_finite());
        if !finite {
            return Err(Error::invalid("planning problem contains non-finite values"));
        }
        if !(self.dt_piece.is_finite() && self.dt_piece > 0.0) {
            return Err(Error::invalid(format!(
                "dt_piece must be positive, got {}",
                self.dt_piece
            )));
        }
        self.bounds.validate()
    }

    fn axis_rhs(&self, axis: usize) -> DVector<f64> {
        let wp: Vec<f64> = self.waypoints.iter().map(|w| w[axis]).collect();
        kkt::constraint_rhs(&self.start.axis(axis), &self.end.axis(axis), &wp, self.dt_piece)
    }

    pub fn layout(&self) -> kkt::Layout {
        kkt::Layout {
            pieces: self.num_pieces(),
            start_accel: self.start.acceleration.is_some(),
            end_accel: self.end.acceleration.is_some(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedTrajectory {
    pub traj: PiecewiseQuintic,
    /// Attained jerk integral, (m/s^3)^2 s.
    pub jerk_cost: f64,
    pub feasible: bool,
    pub peak_speed: f64,
    pub peak_accel: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundsMode {
    /// Annotate peaks and feasibility only.
    #[default]
    Report,
    /// Slow the trajectory down uniformly until both bounds hold.
    Rescale,
}

impl std::str::FromStr for BoundsMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "report" => Ok(BoundsMode::Report),
            "rescale" => Ok(BoundsMode::Rescale),
            other => Err(Error::invalid(format!("unknown bounds mode `{other}`"))),
        }
    }
}

struct Factored {
    matrix: DMatrix<f64>,
    lu: LU<f64, Dyn, Dyn>,
}

/// Minimum-jerk solver with a cache of KKT factorizations keyed by system layout.
#[derive(Default, Clone)]
pub struct MinJerkPlanner {
    factors: HashMap<kkt::Layout, Arc<Factored>>,
}

impl std::fmt::Debug for MinJerkPlanner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MinJerkPlanner")
            .field("cached_layouts", &self.factors.len())
            .finish()
    }
}

impl MinJerkPlanner {
    pub fn new() -> Self {
        Self::default()
    }

    fn factor(&mut self, layout: kkt::Layout) -> Result<Arc<Factored>> {
        if let Some(f) = self.factors.get(&layout) {
            return Ok(f.clone());
        }
        let matrix = kkt::kkt_matrix(&layout);
        let lu = matrix.clone().lu();
        if !lu.is_invertible() {
            return Err(Error::Solver(format!("singular KKT system for {layout:?}")));
        }
        let f = Arc::new(Factored { matrix, lu });
        self.factors.insert(layout, f.clone());
        Ok(f)
    }

    /// Solve the equality-constrained minimum-jerk problem, then annotate the
    /// result against `problem.bounds` in report mode.
    pub fn solve(&mut self, problem: &PlanningProblem) -> Result<PlannedTrajectory> {
        problem.validate()?;
        let layout = problem.layout();
        let m = layout.pieces;
        let factored = self.factor(layout)?;
        let lu = &factored.lu;
        let nv = layout.num_vars();
        let nc = layout.num_constraints();
        let dt = problem.dt_piece;

        let mut axes: Vec<DVector<f64>> = Vec::with_capacity(2);
        for axis in 0..2 {
            let b = problem.axis_rhs(axis);
            let mut rhs = DVector::zeros(nv + nc);
            rhs.rows_mut(nv, nc).copy_from(&b);
            let mut sol = lu
                .solve(&rhs)
                .ok_or_else(|| Error::Solver("KKT back-substitution failed".into()))?;
            // one step of iterative refinement against the assembled system
            let resid = &rhs - &factored.matrix * &sol;
            if let Some(corr) = lu.solve(&resid) {
                sol += corr;
            }
            if sol.iter().any(|x| !x.is_finite()) {
                return Err(Error::Solver("non-finite KKT solution".into()));
            }
            axes.push(sol.rows(0, nv).into_owned());
        }

        let pieces = (0..m)
            .map(|n| {
                let mut piece = QuinticPiece {
                    x: [0.0; 6],
                    y: [0.0; 6],
                };
                for k in 0..6 {
                    let scale = dt.powi(k as i32);
                    piece.x[k] = axes[0][6 * n + k] / scale;
                    piece.y[k] = axes[1][6 * n + k] / scale;
                }
                piece
            })
            .collect();
        let traj = PiecewiseQuintic::new(pieces, dt, 0.0)?;
        let planned = PlannedTrajectory {
            jerk_cost: traj.jerk_cost(),
            traj,
            feasible: true,
            peak_speed: 0.0,
            peak_accel: 0.0,
        };
        Ok(check_and_enforce_bounds(planned, &problem.bounds, BoundsMode::Report))
    }
}

/// One-shot solve without factorization reuse.
pub fn solve(problem: &PlanningProblem) -> Result<PlannedTrajectory> {
    MinJerkPlanner::new().solve(problem)
}

/// Relative slack on the bound comparison.
const BOUND_TOL: f64 = 1e-9;

fn peaks(traj: &PiecewiseQuintic) -> (f64, f64) {
    let samples = traj.sample(traj.dt_piece / 10.0).expect("positive sampling step");
    samples.iter().fold((0.0f64, 0.0f64), |(v, a), s| {
        (v.max(s.velocity.norm()), a.max(s.acceleration.norm()))
    })
}

fn within(peak: f64, bound: f64) -> bool {
    peak <= bound * (1.0 + BOUND_TOL) + 1e-12
}

/// Sample speed and acceleration at a tenth of the piece duration and compare
/// against `bounds`. In [`BoundsMode::Rescale`] an infeasible trajectory is
/// dilated by the smallest `kappa >= 1` that satisfies both bounds.
pub fn check_and_enforce_bounds(
    mut pt: PlannedTrajectory,
    bounds: &VehicleParams,
    mode: BoundsMode,
) -> PlannedTrajectory {
    let (ps, pa) = peaks(&pt.traj);
    pt.peak_speed = ps;
    pt.peak_accel = pa;
    pt.feasible = within(ps, bounds.v_max) && within(pa, bounds.a_max);
    if pt.feasible || mode == BoundsMode::Report {
        return pt;
    }
    let kappa = 1f64.max(ps / bounds.v_max).max((pa / bounds.a_max).sqrt());
    let traj = pt.traj.time_scaled(kappa).expect("kappa >= 1 is a valid time scale");
    let (ps, pa) = peaks(&traj);
    PlannedTrajectory {
        jerk_cost: traj.jerk_cost(),
        traj,
        feasible: within(ps, bounds.v_max) && within(pa, bounds.a_max),
        peak_speed: ps,
        peak_accel: pa,
    }
}

/// Largest absolute violation of the boundary, waypoint and continuity
/// constraints, evaluated directly on the trajectory.
pub fn constraint_residual(problem: &PlanningProblem, traj: &PiecewiseQuintic) -> f64 {
    let m = traj.num_pieces();
    let dt = traj.dt_piece;
    let first = &traj.pieces[0];
    let last = &traj.pieces[m - 1];
    let mut worst: f64 = 0.0;
    let mut track = |v: Vec2| worst = worst.max(v.x.abs()).max(v.y.abs());
    track(first.eval(0.0, 0) - problem.start.position);
    track(first.eval(0.0, 1) - problem.start.velocity);
    track(last.eval(dt, 0) - problem.end.position);
    track(last.eval(dt, 1) - problem.end.velocity);
    if let Some(a) = problem.start.acceleration {
        track(first.eval(0.0, 2) - a);
    }
    if let Some(a) = problem.end.acceleration {
        track(last.eval(dt, 2) - a);
    }
    for n in 1..m {
        if let Some(w) = problem.waypoints.get(n - 1) {
            track(traj.pieces[n].eval(0.0, 0) - w);
        }
        for order in 0..3 {
            track(traj.pieces[n - 1].eval(dt, order) - traj.pieces[n].eval(0.0, order));
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(x: f64, y: f64) -> Vec2 {
        Vec2::new(x, y)
    }

    fn uniform_motion(bounds: VehicleParams) -> PlanningProblem {
        PlanningProblem {
            start: BoundaryState::new(v(0.0, 0.0), v(1.0, 0.0)),
            end: BoundaryState::new(v(4.0, 0.0), v(1.0, 0.0)),
            waypoints: vec![v(1.0, 0.0), v(2.0, 0.0), v(3.0, 0.0)],
            dt_piece: 1.0,
            bounds,
        }
    }

    fn bounds(v_max: f64, a_max: f64) -> VehicleParams {
        VehicleParams {
            v_max,
            a_max,
            ..VehicleParams::default()
        }
    }

    fn rest_to_rest(pinned: bool) -> PlanningProblem {
        let acc = pinned.then(Vec2::zeros);
        PlanningProblem {
            start: BoundaryState {
                acceleration: acc,
                ..BoundaryState::new(v(0.0, 0.0), v(0.0, 0.0))
            },
            end: BoundaryState {
                acceleration: acc,
                ..BoundaryState::new(v(1.0, 0.0), v(0.0, 0.0))
            },
            waypoints: vec![],
            dt_piece: 1.0,
            bounds: VehicleParams::default(),
        }
    }

    #[test]
    fn uniform_motion_is_jerk_free() {
        let pt = solve(&uniform_motion(bounds(2.0, 1.0))).unwrap();
        assert!(pt.jerk_cost.abs() < 1e-12);
        assert!(pt.feasible);
        assert!((pt.peak_speed - 1.0).abs() < 1e-9);
        for k in 0..=40 {
            let t = 0.1 * k as f64;
            assert!((pt.traj.eval(t, 0).unwrap() - v(t, 0.0)).norm() < 1e-9);
        }
    }

    #[test]
    fn rescale_halves_speed() {
        let pt = solve(&uniform_motion(bounds(0.5, 1.0))).unwrap();
        assert!(!pt.feasible);
        let scaled = check_and_enforce_bounds(pt.clone(), &bounds(0.5, 1.0), BoundsMode::Rescale);
        assert!(scaled.feasible);
        assert!((scaled.traj.dt_piece - 2.0).abs() < 1e-12);
        assert!((scaled.peak_speed - 0.5).abs() < 1e-9);
        for k in 0..=20 {
            let t = 0.2 * k as f64;
            let old = pt.traj.eval(t, 0).unwrap();
            let new = scaled.traj.eval(2.0 * t, 0).unwrap();
            assert!((old - new).norm() < 1e-12);
        }
        let reported = check_and_enforce_bounds(pt.clone(), &bounds(0.5, 1.0), BoundsMode::Report);
        assert_eq!(reported.traj, pt.traj);
    }

    #[test]
    fn rest_to_rest_with_free_endpoint_acceleration() {
        // natural boundary conditions: zero jerk at both ends
        let pt = solve(&rest_to_rest(false)).unwrap();
        let expected = [0.0, 0.0, 2.5, 0.0, -2.5, 1.0];
        for (c, e) in pt.traj.pieces[0].x.iter().zip(expected) {
            assert!((c - e).abs() < 1e-9, "{:?}", pt.traj.pieces[0].x);
        }
        assert!((pt.jerk_cost - 120.0).abs() < 1e-9);
        assert!(pt.traj.pieces[0].y.iter().all(|c| c.abs() < 1e-12));
    }

    #[test]
    fn rest_to_rest_with_pinned_zero_acceleration() {
        let pt = solve(&rest_to_rest(true)).unwrap();
        let expected = [0.0, 0.0, 0.0, 10.0, -15.0, 6.0];
        for (c, e) in pt.traj.pieces[0].x.iter().zip(expected) {
            assert!((c - e).abs() < 1e-9, "{:?}", pt.traj.pieces[0].x);
        }
        assert!((pt.jerk_cost - 720.0).abs() < 1e-9);
        // the pinned problem is a restriction of the free one
        assert!(solve(&rest_to_rest(false)).unwrap().jerk_cost < pt.jerk_cost);
    }

    #[test]
    fn rest_to_rest_peak_acceleration() {
        let peak = 10.0 / 3f64.sqrt();
        let pt = solve(&rest_to_rest(true)).unwrap();
        let dense = (0..=10_000)
            .map(|i| pt.traj.eval(i as f64 * 1e-4, 2).unwrap().norm())
            .fold(0.0, f64::max);
        assert!((dense - peak).abs() < 1e-6);
        // ten samples per piece resolve the peak to within half a percent
        assert!((pt.peak_accel - peak).abs() / peak < 5e-3, "{}", pt.peak_accel);
        let tight = check_and_enforce_bounds(pt.clone(), &bounds(20.0, 0.9 * peak), BoundsMode::Report);
        assert!(!tight.feasible);
        let loose = check_and_enforce_bounds(pt, &bounds(20.0, 1.01 * peak), BoundsMode::Report);
        assert!(loose.feasible);
    }

    #[test]
    fn from_knots_drops_leading_duplicate() {
        let knots = [v(0.0, 0.0), v(1.0, 0.0), v(2.0, 0.0)];
        let start = BoundaryState::new(v(0.0, 0.0), v(1.0, 0.0));
        let p = PlanningProblem::from_knots(start, v(1.0, 0.0), &knots, 1.0, VehicleParams::default()).unwrap();
        assert_eq!(p.waypoints, vec![v(1.0, 0.0)]);
        assert_eq!(p.end.position, v(2.0, 0.0));
        let off = BoundaryState::new(v(1e-3, 0.0), v(1.0, 0.0));
        assert!(PlanningProblem::from_knots(off, v(1.0, 0.0), &knots, 1.0, VehicleParams::default()).is_err());
    }

    #[test]
    fn invalid_problems_rejected() {
        let mut p = uniform_motion(VehicleParams::default());
        p.waypoints[1].x = f64::NAN;
        assert!(matches!(solve(&p), Err(Error::InvalidInput(_))));
        let mut p = uniform_motion(VehicleParams::default());
        p.dt_piece = 0.0;
        assert!(solve(&p).is_err());
    }

    #[test]
    fn factorizations_are_reused() {
        let mut planner = MinJerkPlanner::new();
        let a = planner.solve(&uniform_motion(VehicleParams::default())).unwrap();
        let b = planner.solve(&uniform_motion(VehicleParams::default())).unwrap();
        assert_eq!(a, b);
        assert_eq!(planner.factors.len(), 1);
        planner.solve(&rest_to_rest(true)).unwrap();
        assert_eq!(planner.factors.len(), 2);
    }

    fn arb_problem() -> impl Strategy<Value = PlanningProblem> {
        let pt = || (-10.0f64..10.0, -10.0f64..10.0).prop_map(|(x, y)| Vec2::new(x, y));
        (pt(), pt(), pt(), pt(), prop::collection::vec(pt(), 0..8), 0.05f64..1.5).prop_map(
            |(p0, v0, p1, v1, waypoints, dt)| PlanningProblem {
                start: BoundaryState::new(p0, v0),
                end: BoundaryState::new(p1, v1),
                waypoints,
                dt_piece: dt,
                bounds: VehicleParams::default(),
            },
        )
    }

    proptest! {
        #[test]
        fn constraints_hold(p in arb_problem()) {
            let pt = solve(&p).unwrap();
            let scale = 1.0 + p.waypoints.iter().chain([&p.start.velocity, &p.end.velocity]).map(|w| w.norm()).fold(0.0, f64::max);
            prop_assert!(constraint_residual(&p, &pt.traj) <= 1e-8 * scale);
            prop_assert!(pt.jerk_cost >= 0.0);
        }

        #[test]
        fn y_free_problem_has_zero_y(p in arb_problem()) {
            let mut p = p;
            for w in p.waypoints.iter_mut().chain([&mut p.start.position, &mut p.start.velocity, &mut p.end.position, &mut p.end.velocity]) {
                w.y = 0.0;
            }
            let pt = solve(&p).unwrap();
            prop_assert!(pt.traj.pieces.iter().all(|q| q.y.iter().all(|c| c.abs() < 1e-10)));
        }

        #[test]
        fn translation_equivariance(p in arb_problem(), dx in -50.0f64..50.0, dy in -50.0f64..50.0) {
            let d = Vec2::new(dx, dy);
            let mut q = p.clone();
            q.start.position += d;
            q.end.position += d;
            for w in q.waypoints.iter_mut() {
                *w += d;
            }
            let a = solve(&p).unwrap();
            let b = solve(&q).unwrap();
            prop_assert!((a.jerk_cost - b.jerk_cost).abs() <= 1e-9 * a.jerk_cost.max(1.0));
            for k in 0..=20 {
                let t = a.traj.duration() * k as f64 / 20.0;
                let pa = a.traj.eval(t, 0).unwrap() + d;
                let pb = b.traj.eval(t, 0).unwrap();
                prop_assert!((pa - pb).norm() < 1e-8 * (1.0 + pa.norm()));
            }
        }
    }
}
