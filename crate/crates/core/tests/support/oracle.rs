//! Independent reference implementations for planner tests.
//!
//! Nothing here calls into the planner: the jerk Gram matrix comes from
//! Gauss-Legendre quadrature, constraints are written from the monomial basis,
//! and the minimizer is an augmented-Lagrangian penalty method solved by
//! Cholesky.

#![allow(dead_code)]

use bevdrive::geometry::Vec2;
use bevdrive::planner::{BoundaryState, PlanningProblem};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Raw (local-time) coefficients of one piecewise quintic, per axis.
#[derive(Debug, Clone)]
pub struct Coeffs {
    pub dt: f64,
    /// `x[n][k]`, `y[n][k]`.
    pub x: Vec<[f64; 6]>,
    pub y: Vec<[f64; 6]>,
}

impl Coeffs {
    pub fn eval(&self, t: f64, order: usize) -> Vec2 {
        let m = self.x.len();
        let n = ((t / self.dt).floor() as usize).min(m - 1);
        let tau = t - n as f64 * self.dt;
        let row = deriv_row(tau, order);
        let dot = |c: &[f64; 6]| c.iter().zip(&row).map(|(a, b)| a * b).sum::<f64>();
        Vec2::new(dot(&self.x[n]), dot(&self.y[n]))
    }

    pub fn duration(&self) -> f64 {
        self.dt * self.x.len() as f64
    }

    pub fn jerk_cost(&self) -> f64 {
        let q = jerk_gram(self.dt);
        let quad = |c: &[f64; 6]| {
            let mut s = 0.0;
            for i in 0..6 {
                for j in 0..6 {
                    s += c[i] * q[(i, j)] * c[j];
                }
            }
            s
        };
        self.x.iter().chain(&self.y).map(quad).sum()
    }

    /// `self + eps * other`.
    pub fn axpy(&self, eps: f64, other: &Coeffs) -> Coeffs {
        let mix = |a: &Vec<[f64; 6]>, b: &Vec<[f64; 6]>| {
            a.iter()
                .zip(b)
                .map(|(p, q)| std::array::from_fn(|k| p[k] + eps * q[k]))
                .collect()
        };
        Coeffs {
            dt: self.dt,
            x: mix(&self.x, &other.x),
            y: mix(&self.y, &other.y),
        }
    }

    /// `self - other`.
    pub fn minus(&self, other: &Coeffs) -> Coeffs {
        self.axpy(-1.0, other)
    }
}

/// `d^s/dtau^s tau^k` for k = 0..6.
fn deriv_row(tau: f64, s: usize) -> [f64; 6] {
    std::array::from_fn(|k| {
        if k < s {
            0.0
        } else {
            let falling: f64 = ((k - s + 1)..=k).map(|i| i as f64).product();
            falling * tau.powi((k - s) as i32)
        }
    })
}

/// Gram matrix of the third-derivative basis on [0, dt] by 3-point
/// Gauss-Legendre, exact for the degree-4 integrands.
pub fn jerk_gram(dt: f64) -> DMatrix<f64> {
    let r = (3.0f64 / 5.0).sqrt();
    let nodes = [-r, 0.0, r];
    let weights = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];
    let mut q = DMatrix::zeros(6, 6);
    for (x, w) in nodes.iter().zip(weights) {
        let tau = 0.5 * dt * (x + 1.0);
        let b = deriv_row(tau, 3);
        for i in 0..6 {
            for j in 0..6 {
                q[(i, j)] += 0.5 * dt * w * b[i] * b[j];
            }
        }
    }
    q
}

fn add_row(rows: &mut Vec<(Vec<(usize, f64)>, f64)>, entries: Vec<(usize, f64)>, rhs: f64) {
    rows.push((entries, rhs));
}

/// Equality constraints on one axis's raw coefficients as sparse rows.
fn axis_constraints(p: &PlanningProblem, axis: usize) -> Vec<(Vec<(usize, f64)>, f64)> {
    let m = p.waypoints.len() + 1;
    let dt = p.dt_piece;
    let mut rows = Vec::new();
    let at = |n: usize, tau: f64, s: usize, sign: f64| -> Vec<(usize, f64)> {
        deriv_row(tau, s)
            .iter()
            .enumerate()
            .map(|(k, v)| (6 * n + k, sign * v))
            .collect()
    };
    add_row(&mut rows, at(0, 0.0, 0, 1.0), p.start.position[axis]);
    add_row(&mut rows, at(0, 0.0, 1, 1.0), p.start.velocity[axis]);
    add_row(&mut rows, at(m - 1, dt, 0, 1.0), p.end.position[axis]);
    add_row(&mut rows, at(m - 1, dt, 1, 1.0), p.end.velocity[axis]);
    if let Some(a) = p.start.acceleration {
        add_row(&mut rows, at(0, 0.0, 2, 1.0), a[axis]);
    }
    if let Some(a) = p.end.acceleration {
        add_row(&mut rows, at(m - 1, dt, 2, 1.0), a[axis]);
    }
    for n in 1..m {
        add_row(&mut rows, at(n, 0.0, 0, 1.0), p.waypoints[n - 1][axis]);
        for s in 0..3 {
            let mut e = at(n - 1, dt, s, 1.0);
            e.extend(at(n, 0.0, s, -1.0));
            add_row(&mut rows, e, 0.0);
        }
    }
    rows
}

/// Augmented-Lagrangian penalty minimizer over all 12M coefficients. The
/// penalty weight is ramped by decades up to `1e8`, then held while the
/// multipliers are updated until the constraint violation stalls.
pub fn penalty_solve(p: &PlanningProblem) -> Coeffs {
    let m = p.waypoints.len() + 1;
    let nv = 12 * m;
    let q = jerk_gram(p.dt_piece);
    let mut h = DMatrix::zeros(nv, nv);
    for blk in 0..2 * m {
        h.view_mut((6 * blk, 6 * blk), (6, 6)).copy_from(&q);
    }
    let mut rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    for axis in 0..2 {
        for (entries, rhs) in axis_constraints(p, axis) {
            let shifted = entries.into_iter().map(|(i, v)| (i + axis * 6 * m, v)).collect();
            rows.push((shifted, rhs));
        }
    }
    let mut a = DMatrix::zeros(rows.len(), nv);
    let mut b = DVector::zeros(rows.len());
    for (r, (entries, rhs)) in rows.iter().enumerate() {
        for &(i, v) in entries {
            a[(r, i)] += v;
        }
        b[r] = *rhs;
    }
    let ata = a.transpose() * &a;
    let mut lambda = DVector::zeros(rows.len());
    let mut sol = DVector::zeros(nv);
    let mut w = 1e2;
    let mut best = f64::INFINITY;
    for _ in 0..200 {
        let chol = (&h + &ata * w)
            .cholesky()
            .expect("penalized Hessian is positive definite");
        sol = chol.solve(&(a.transpose() * (&b * w - &lambda)));
        let violation = &a * &sol - &b;
        lambda += &violation * w;
        let v = violation.amax();
        if w < 1e8 {
            w *= 10.0;
        } else if v >= best * 0.5 {
            break;
        }
        best = best.min(v);
    }
    let piece =
        |off: usize| -> Vec<[f64; 6]> { (0..m).map(|n| std::array::from_fn(|k| sol[off + 6 * n + k])).collect() };
    Coeffs {
        dt: p.dt_piece,
        x: piece(0),
        y: piece(6 * m),
    }
}

/// Quintic through (p0, v0, a0) at 0 and (p1, v1, a1) at h, raw coefficients.
pub fn hermite_quintic(p0: f64, v0: f64, a0: f64, p1: f64, v1: f64, a1: f64, h: f64) -> [f64; 6] {
    let dp = p1 - p0;
    let norm = [
        p0,
        v0 * h,
        a0 * h * h / 2.0,
        10.0 * dp - (6.0 * v0 + 4.0 * v1) * h - (3.0 * a0 - a1) * h * h / 2.0,
        -15.0 * dp + (8.0 * v0 + 7.0 * v1) * h + (3.0 * a0 - 2.0 * a1) * h * h / 2.0,
        6.0 * dp - 3.0 * (v0 + v1) * h - (a0 - a1) * h * h / 2.0,
    ];
    std::array::from_fn(|k| norm[k] / h.powi(k as i32))
}

/// C2 Hermite spline through the problem's knots with random interior
/// velocities and random accelerations at every knot. Boundary positions and
/// velocities are the problem's, so every equality constraint holds exactly.
pub fn random_hermite<R: Rng>(p: &PlanningProblem, rng: &mut R, spread: f64) -> Coeffs {
    let m = p.waypoints.len() + 1;
    let mut knots = vec![p.start.position];
    knots.extend(p.waypoints.iter().copied());
    knots.push(p.end.position);
    let mut vel: Vec<Vec2> = (0..=m)
        .map(|_| Vec2::new(rng.random_range(-spread..spread), rng.random_range(-spread..spread)))
        .collect();
    vel[0] = p.start.velocity;
    vel[m] = p.end.velocity;
    let mut acc: Vec<Vec2> = (0..=m)
        .map(|_| Vec2::new(rng.random_range(-spread..spread), rng.random_range(-spread..spread)))
        .collect();
    if let Some(a) = p.start.acceleration {
        acc[0] = a;
    }
    if let Some(a) = p.end.acceleration {
        acc[m] = a;
    }
    let h = p.dt_piece;
    let axis = |i: usize| -> Vec<[f64; 6]> {
        (0..m)
            .map(|n| {
                hermite_quintic(
                    knots[n][i],
                    vel[n][i],
                    acc[n][i],
                    knots[n + 1][i],
                    vel[n + 1][i],
                    acc[n + 1][i],
                    h,
                )
            })
            .collect()
    };
    Coeffs {
        dt: h,
        x: axis(0),
        y: axis(1),
    }
}

/// Random problem with M pieces, waypoints in [-10, 10]^2.
pub fn random_problem<R: Rng>(rng: &mut R, m: usize, dt: f64) -> PlanningProblem {
    let mut pt = || Vec2::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0));
    let (p0, p1) = (pt(), pt());
    let waypoints = (1..m).map(|_| pt()).collect();
    let (v0, v1) = (pt() * 0.5, pt() * 0.5);
    PlanningProblem {
        start: BoundaryState::new(p0, v0),
        end: BoundaryState::new(p1, v1),
        waypoints,
        dt_piece: dt,
        bounds: Default::default(),
    }
}

/// Raw coefficients of a planner trajectory, for evaluation with this module.
pub fn from_planner(traj: &bevdrive::trajectory::PiecewiseQuintic) -> Coeffs {
    Coeffs {
        dt: traj.dt_piece,
        x: traj.pieces.iter().map(|p| p.x).collect(),
        y: traj.pieces.iter().map(|p| p.y).collect(),
    }
}
