mod support;

use std::time::Instant;

use bevdrive::geometry::Vec2;
use bevdrive::planner::{self, constraint_residual, BoundaryState, PlanningProblem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::oracle::{self, Coeffs};

fn max_position_gap(a: &Coeffs, b: &Coeffs) -> f64 {
    let n = 400;
    (0..=n)
        .map(|i| {
            let t = a.duration() * i as f64 / n as f64;
            (a.eval(t, 0) - b.eval(t, 0)).norm()
        })
        .fold(0.0, f64::max)
}

#[test]
fn matches_penalty_oracle_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let started = Instant::now();
    for _ in 0..10 {
        let m = rng.random_range(2..=8);
        let dt = rng.random_range(0.5..1.5);
        let problem = oracle::random_problem(&mut rng, m, dt);
        let planned = planner::solve(&problem).unwrap();
        let reference = oracle::penalty_solve(&problem);
        let ours = oracle::from_planner(&planned.traj);

        let (j, j_ref) = (ours.jerk_cost(), reference.jerk_cost());
        assert!(
            (j - j_ref).abs() <= 1e-5 * j_ref.max(1.0),
            "m={m} dt={dt}: cost {j} vs oracle {j_ref}"
        );
        assert!((planned.jerk_cost - j).abs() <= 1e-8 * j.max(1.0));
        let gap = max_position_gap(&ours, &reference);
        assert!(gap <= 1e-4, "m={m}: position gap {gap}");
        assert!(constraint_residual(&problem, &planned.traj) <= 1e-8 * 10.0);
    }
    assert!(started.elapsed().as_secs_f64() < 1.0, "{:?}", started.elapsed());
}

#[test]
fn no_feasible_hermite_spline_beats_the_solution() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let m = rng.random_range(1..=8);
        let dt = rng.random_range(0.5..1.5);
        let problem = oracle::random_problem(&mut rng, m, dt);
        let planned = planner::solve(&problem).unwrap();
        let j_star = oracle::from_planner(&planned.traj).jerk_cost();
        let candidate = oracle::random_hermite(&problem, &mut rng, 5.0);
        let j = candidate.jerk_cost();
        assert!(j >= j_star * (1.0 - 1e-9) - 1e-9, "hermite {j} < optimum {j_star}");
    }
}

#[test]
fn cost_is_convex_and_stationary_along_feasible_directions() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..20 {
        let m = rng.random_range(2..=8);
        let problem = oracle::random_problem(&mut rng, m, 1.0);
        let opt = oracle::from_planner(&planner::solve(&problem).unwrap().traj);
        let j_star = opt.jerk_cost();
        // Difference of two feasible splines lies in the constraint nullspace.
        let d = oracle::random_hermite(&problem, &mut rng, 3.0).minus(&opt);
        for eps in [0.01, 0.1, 1.0] {
            let plus = opt.axpy(eps, &d).jerk_cost();
            let minus = opt.axpy(-eps, &d).jerk_cost();
            assert!(plus > j_star && minus > j_star);
            let curvature = (plus + minus - 2.0 * j_star) / 2.0;
            let slope = (plus - minus) / 2.0;
            assert!(
                slope.abs() <= 1e-6 * curvature.max(1.0),
                "first-order change {slope} at eps={eps}"
            );
        }
    }
}

#[test]
fn constraint_residuals_are_small() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..50 {
        let m = rng.random_range(1..=40);
        let problem = oracle::random_problem(&mut rng, m, 0.1);
        let planned = planner::solve(&problem).unwrap();
        assert!(constraint_residual(&problem, &planned.traj) <= 1e-8 * 10.0);
    }
}

#[test]
fn rest_to_rest_matches_oracle_in_both_boundary_forms() {
    let rest = |x: f64| BoundaryState::new(Vec2::new(x, 0.0), Vec2::zeros());
    let mut problem = PlanningProblem {
        start: rest(0.0),
        end: rest(1.0),
        waypoints: vec![],
        dt_piece: 1.0,
        bounds: Default::default(),
    };
    let free = planner::solve(&problem).unwrap();
    let free_ref = oracle::penalty_solve(&problem);
    assert!(max_position_gap(&oracle::from_planner(&free.traj), &free_ref) <= 1e-6);
    assert!((free.jerk_cost - 120.0).abs() <= 1e-6);

    problem.start.acceleration = Some(Vec2::zeros());
    problem.end.acceleration = Some(Vec2::zeros());
    let pinned = planner::solve(&problem).unwrap();
    let pinned_ref = oracle::penalty_solve(&problem);
    assert!(max_position_gap(&oracle::from_planner(&pinned.traj), &pinned_ref) <= 1e-6);
    assert!((pinned.jerk_cost - 720.0).abs() <= 1e-6);
    for (k, want) in [0.0, 0.0, 0.0, 10.0, -15.0, 6.0].iter().enumerate() {
        assert!((pinned.traj.pieces[0].x[k] - want).abs() <= 1e-8);
    }
}
