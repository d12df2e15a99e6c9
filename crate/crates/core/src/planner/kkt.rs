//! Per-axis KKT system of the minimum-jerk problem.
//!
//! Unknowns are the normalized coefficients `a[n][k] = c[n][k] * dt^k`, i.e.
//! each piece is parameterized over `s = tau / dt` in `[0, 1]`. The jerk
//! objective then only differs from the physical one by the constant factor
//! `dt^-5`, and the system matrix depends on the piece count alone.

use nalgebra::{DMatrix, DVector};

use crate::trajectory::jerk_hessian;

/// Shape of one axis system: piece count and which endpoint accelerations
/// are pinned. The default problem leaves both free.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Layout {
    pub pieces: usize,
    pub start_accel: bool,
    pub end_accel: bool,
}

impl Layout {
    pub fn free(pieces: usize) -> Self {
        Self {
            pieces,
            start_accel: false,
            end_accel: false,
        }
    }

    pub fn num_vars(&self) -> usize {
        6 * self.pieces
    }

    pub fn num_constraints(&self) -> usize {
        4 * self.pieces + self.start_accel as usize + self.end_accel as usize
    }
}

/// Position, velocity and optional acceleration of one axis at an endpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisBoundary {
    pub pos: f64,
    pub vel: f64,
    pub acc: Option<f64>,
}

/// Number of equality constraints per axis for `m` pieces with free endpoint accelerations.
pub fn num_constraints(m: usize) -> usize {
    Layout::free(m).num_constraints()
}

/// Block-diagonal jerk Hessian over `6m` normalized coefficients.
pub fn hessian(m: usize) -> DMatrix<f64> {
    let block = jerk_hessian(1.0);
    let mut h = DMatrix::zeros(6 * m, 6 * m);
    for n in 0..m {
        for i in 0..6 {
            for j in 0..6 {
                h[(6 * n + i, 6 * n + j)] = block[i][j];
            }
        }
    }
    h
}

/// Row of d^s/ds^s p(1) over the six coefficients.
fn end_row(order: usize) -> [f64; 6] {
    let mut row = [0.0; 6];
    for (k, r) in row.iter_mut().enumerate().skip(order) {
        *r = ((k - order + 1)..=k).map(|i| i as f64).product();
    }
    row
}

/// Equality constraint matrix in normalized coordinates.
///
/// Row order: start position, start velocity, end position, end velocity,
/// then per interior knot `n = 1..m`: waypoint position and C0/C1/C2 continuity
/// between pieces `n - 1` and `n`; finally the pinned start and end
/// accelerations, if any.
pub fn constraint_matrix(layout: &Layout) -> DMatrix<f64> {
    let m = layout.pieces;
    let mut a = DMatrix::zeros(layout.num_constraints(), layout.num_vars());
    let last = 6 * (m - 1);
    a[(0, 0)] = 1.0;
    a[(1, 1)] = 1.0;
    for (k, v) in end_row(0).iter().enumerate() {
        a[(2, last + k)] = *v;
    }
    for (k, v) in end_row(1).iter().enumerate() {
        a[(3, last + k)] = *v;
    }
    for n in 1..m {
        let row = 4 + 4 * (n - 1);
        let (prev, cur) = (6 * (n - 1), 6 * n);
        a[(row, cur)] = 1.0;
        for s in 0..3 {
            let r = row + 1 + s;
            for (k, v) in end_row(s).iter().enumerate() {
                a[(r, prev + k)] = *v;
            }
            // s! * a[n][s]
            a[(r, cur + s)] = -[1.0, 1.0, 2.0][s];
        }
    }
    let mut row = 4 * m;
    if layout.start_accel {
        a[(row, 2)] = 2.0;
        row += 1;
    }
    if layout.end_accel {
        for (k, v) in end_row(2).iter().enumerate() {
            a[(row, last + k)] = *v;
        }
    }
    a
}

/// Right-hand side matching [`constraint_matrix`] for one axis.
///
/// Derivatives are passed in physical units and scaled by powers of `dt` here.
pub fn constraint_rhs(start: &AxisBoundary, end: &AxisBoundary, waypoints: &[f64], dt: f64) -> DVector<f64> {
    let layout = Layout {
        pieces: waypoints.len() + 1,
        start_accel: start.acc.is_some(),
        end_accel: end.acc.is_some(),
    };
    let mut b = DVector::zeros(layout.num_constraints());
    b[0] = start.pos;
    b[1] = start.vel * dt;
    b[2] = end.pos;
    b[3] = end.vel * dt;
    for (i, w) in waypoints.iter().enumerate() {
        b[4 + 4 * i] = *w;
    }
    let pinned = [start.acc, end.acc].into_iter().flatten();
    for (row, acc) in (4 * layout.pieces..).zip(pinned) {
        b[row] = acc * dt * dt;
    }
    b
}

/// Full symmetric indefinite KKT matrix `[H A^T; A 0]`.
pub fn kkt_matrix(layout: &Layout) -> DMatrix<f64> {
    let h = hessian(layout.pieces);
    let a = constraint_matrix(layout);
    let nv = layout.num_vars();
    let nc = layout.num_constraints();
    let mut k = DMatrix::zeros(nv + nc, nv + nc);
    k.view_mut((0, 0), (nv, nv)).copy_from(&h);
    k.view_mut((nv, 0), (nc, nv)).copy_from(&a);
    k.view_mut((0, nv), (nv, nc)).copy_from(&a.transpose());
    k
}
