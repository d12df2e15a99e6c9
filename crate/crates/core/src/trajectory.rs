//! Piecewise quintic trajectories with uniform piece duration.
//!
//! Coefficients are stored per piece in local time `tau = t - T_n`, so piece
//! `n` is `sum_k c[k] * tau^k` for `tau` in `[0, dt_piece]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flat_vehicle::FlatSignal;
use crate::geometry::Vec2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuinticPiece {
    pub x: [f64; 6],
    pub y: [f64; 6],
}

impl QuinticPiece {
    pub fn eval(&self, tau: f64, order: usize) -> Vec2 {
        Vec2::new(poly_eval(&self.x, tau, order), poly_eval(&self.y, tau, order))
    }

    pub fn axis(&self, axis: usize) -> &[f64; 6] {
        if axis == 0 {
            &self.x
        } else {
            &self.y
        }
    }
}

/// Value of the `order`-th derivative of `sum_k c[k] tau^k` by Horner's rule.
pub fn poly_eval(c: &[f64; 6], tau: f64, order: usize) -> f64 {
    if order > 5 {
        return 0.0;
    }
    let mut acc = 0.0;
    for k in (order..6).rev() {
        // k! / (k - order)!
        let falling: f64 = ((k - order + 1)..=k).map(|i| i as f64).product();
        acc = acc * tau + falling * c[k];
    }
    acc
}

/// Hessian of `integral_0^dt (d^3/dtau^3 p)^2 dtau` over the six coefficients.
///
/// Only the (3..=5, 3..=5) block is non-zero.
pub fn jerk_hessian(dt: f64) -> [[f64; 6]; 6] {
    let falling3 = |i: usize| (i * (i - 1) * (i - 2)) as f64;
    let mut h = [[0.0; 6]; 6];
    for i in 3..6 {
        for j in 3..6 {
            let p = (i + j - 5) as i32;
            h[i][j] = falling3(i) * falling3(j) * dt.powi(p) / p as f64;
        }
    }
    h
}

/// Jerk integral of one axis of one piece.
pub fn piece_jerk_cost(c: &[f64; 6], dt: f64) -> f64 {
    let h = jerk_hessian(dt);
    let mut acc = 0.0;
    for i in 3..6 {
        for j in 3..6 {
            acc += c[i] * h[i][j] * c[j];
        }
    }
    acc
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub position: Vec2,
    pub velocity: Vec2,
    pub acceleration: Vec2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseQuintic {
    pub dt_piece: f64,
    pub t0: f64,
    pub pieces: Vec<QuinticPiece>,
}

impl PiecewiseQuintic {
    pub fn new(pieces: Vec<QuinticPiece>, dt_piece: f64, t0: f64) -> Result<Self> {
        let traj = Self { dt_piece, t0, pieces };
        traj.validate()?;
        Ok(traj)
    }

    pub fn validate(&self) -> Result<()> {
        if self.pieces.is_empty() {
            return Err(Error::invalid("trajectory needs at least one piece"));
        }
        if !(self.dt_piece.is_finite() && self.dt_piece > 0.0) {
            return Err(Error::invalid(format!(
                "dt_piece must be positive, got {}",
                self.dt_piece
            )));
        }
        if !self.t0.is_finite() {
            return Err(Error::invalid("t0 must be finite"));
        }
        let finite = self
            .pieces
            .iter()
            .all(|p| p.x.iter().chain(p.y.iter()).all(|c| c.is_finite()));
        if !finite {
            return Err(Error::invalid("non-finite coefficient"));
        }
        Ok(())
    }

    pub fn num_pieces(&self) -> usize {
        self.pieces.len()
    }

    pub fn duration(&self) -> f64 {
        self.pieces.len() as f64 * self.dt_piece
    }

    pub fn t_end(&self) -> f64 {
        self.t0 + self.duration()
    }

    /// Knot time `T_n` in global time.
    pub fn knot_time(&self, n: usize) -> f64 {
        self.t0 + n as f64 * self.dt_piece
    }

    /// Piece index and local time for a global time.
    ///
    /// A knot belongs to the piece that starts there, except the final knot.
    pub fn locate(&self, t: f64) -> Result<(usize, f64)> {
        let end = self.t_end();
        let tol = 1e-9 * end.abs().max(self.t0.abs()).max(1.0);
        if !t.is_finite() || t < self.t0 - tol || t > end + tol {
            return Err(Error::Domain(format!(
                "t = {t} outside trajectory domain [{}, {end}]",
                self.t0
            )));
        }
        let rel = (t - self.t0).clamp(0.0, self.duration());
        let m = self.pieces.len();
        let n = ((rel / self.dt_piece).floor() as usize).min(m - 1);
        let tau = (rel - n as f64 * self.dt_piece).clamp(0.0, self.dt_piece);
        Ok((n, tau))
    }

    /// Position (order 0) through jerk (order 3) at global time `t`.
    pub fn eval(&self, t: f64, order: usize) -> Result<Vec2> {
        if order > 3 {
            return Err(Error::invalid(format!("derivative order {order} not in 0..=3")));
        }
        let (n, tau) = self.locate(t)?;
        Ok(self.pieces[n].eval(tau, order))
    }

    pub fn to_flat_signal(&self, t: f64) -> Result<FlatSignal> {
        Ok(FlatSignal {
            sigma: self.eval(t, 0)?,
            d_sigma: self.eval(t, 1)?,
            dd_sigma: self.eval(t, 2)?,
        })
    }

    /// Inclusive sampling from `t0`; the last sample sits exactly at the end time.
    pub fn sample(&self, dt_sample: f64) -> Result<Vec<TrajectorySample>> {
        if !(dt_sample.is_finite() && dt_sample > 0.0) {
            return Err(Error::invalid(format!("dt_sample must be positive, got {dt_sample}")));
        }
        let ratio = self.duration() / dt_sample;
        let rounded = ratio.round();
        let integral = (ratio - rounded).abs() < 1e-9 * ratio.max(1.0);
        let steps = if integral {
            rounded as usize
        } else {
            ratio.floor() as usize
        };
        let mut times: Vec<f64> = (0..steps).map(|i| self.t0 + i as f64 * dt_sample).collect();
        if !integral && self.t0 + steps as f64 * dt_sample < self.t_end() {
            times.push(self.t0 + steps as f64 * dt_sample);
        }
        times.push(self.t_end());
        times
            .into_iter()
            .map(|t| {
                let (n, tau) = self.locate(t)?;
                let piece = &self.pieces[n];
                Ok(TrajectorySample {
                    t,
                    position: piece.eval(tau, 0),
                    velocity: piece.eval(tau, 1),
                    acceleration: piece.eval(tau, 2),
                })
            })
            .collect()
    }

    /// Uniform time dilation by `kappa`: the new trajectory visits the same
    /// positions at `t0 + kappa * (t - t0)`.
    pub fn time_scaled(&self, kappa: f64) -> Result<Self> {
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(Error::invalid(format!("time scale must be positive, got {kappa}")));
        }
        let scale = |c: &[f64; 6]| {
            let mut out = *c;
            for (k, v) in out.iter_mut().enumerate() {
                *v /= kappa.powi(k as i32);
            }
            out
        };
        let pieces = self
            .pieces
            .iter()
            .map(|p| QuinticPiece {
                x: scale(&p.x),
                y: scale(&p.y),
            })
            .collect();
        Self::new(pieces, self.dt_piece * kappa, self.t0)
    }

    /// Total jerk integral over both axes.
    pub fn jerk_cost(&self) -> f64 {
        self.pieces
            .iter()
            .map(|p| piece_jerk_cost(&p.x, self.dt_piece) + piece_jerk_cost(&p.y, self.dt_piece))
            .sum()
    }
}
