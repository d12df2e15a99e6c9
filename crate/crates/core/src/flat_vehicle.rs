//! Kinematic bicycle model and its differential-flatness maps.
//!
//! The flat output is the rear-axle position. Given the position and its
//! first two time derivatives, heading, speed, acceleration and steering
//! angle follow algebraically; [`flat_to_state`] implements that map and
//! [`step_dynamics`] integrates the forward model with fixed-step RK4.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, OrientedBox, Vec2};

/// Below this speed (m/s) heading and steering are not recoverable from the flat output.
pub const EPS_V: f64 = 1e-3;

/// Largest RK4 substep used inside [`step_dynamics`].
pub const MAX_SUBSTEP: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub px: f64,
    pub py: f64,
    /// Heading in (-pi, pi].
    pub theta: f64,
    pub v: f64,
}

impl VehicleState {
    /// Validates finiteness and non-negative speed; wraps the heading.
    pub fn new(px: f64, py: f64, theta: f64, v: f64) -> Result<Self> {
        if !(px.is_finite() && py.is_finite() && theta.is_finite() && v.is_finite()) {
            return Err(Error::invalid("vehicle state must be finite"));
        }
        if v < 0.0 {
            return Err(Error::invalid(format!("negative speed {v}")));
        }
        Ok(Self {
            px,
            py,
            theta: wrap_angle(theta),
            v,
        })
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.px, self.py)
    }

    pub fn velocity(&self) -> Vec2 {
        let (s, c) = self.theta.sin_cos();
        Vec2::new(self.v * c, self.v * s)
    }

    fn is_finite(&self) -> bool {
        self.px.is_finite() && self.py.is_finite() && self.theta.is_finite() && self.v.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleControl {
    /// Longitudinal acceleration, m/s^2.
    pub a: f64,
    /// Front steering angle, rad, |phi| < pi/2.
    pub phi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    pub wheelbase: f64,
    pub v_max: f64,
    pub a_max: f64,
    pub length: f64,
    pub width: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            wheelbase: 2.7,
            v_max: 20.0,
            a_max: 4.0,
            length: 4.5,
            width: 1.9,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.wheelbase, self.v_max, self.a_max, self.length, self.width];
        if all.iter().all(|x| x.is_finite() && *x > 0.0) {
            Ok(())
        } else {
            Err(Error::invalid(format!("vehicle params must be positive: {self:?}")))
        }
    }

    /// Vehicle footprint; the box is centered on the reference point.
    pub fn footprint(&self, state: &VehicleState) -> OrientedBox {
        OrientedBox::new(state.position(), state.theta, self.length, self.width)
    }
}

/// Flat output and its first two derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlatSignal {
    pub sigma: Vec2,
    pub d_sigma: Vec2,
    pub dd_sigma: Vec2,
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum FlatError {
    /// Speed below [`EPS_V`]; position and speed are still valid.
    #[error("flat output speed {v} below threshold at ({px}, {py})")]
    LowSpeed { px: f64, py: f64, v: f64 },
    #[error("flat output is not finite")]
    NonFinite,
}

fn derivative(x: &[f64; 4], u: &VehicleControl, wheelbase: f64) -> [f64; 4] {
    let (s, c) = x[2].sin_cos();
    [x[3] * c, x[3] * s, x[3] / wheelbase * u.phi.tan(), u.a]
}

/// Fixed-step RK4 over `dt`, split into equal substeps no longer than `max_substep`.
///
/// `control` is evaluated at every RK4 stage with the elapsed time since the
/// start of the step and the stage state, which lets callers track a
/// time-varying reference with fourth-order accuracy.
pub fn integrate<F>(
    state: &VehicleState,
    params: &VehicleParams,
    dt: f64,
    max_substep: f64,
    mut control: F,
) -> Result<VehicleState>
where
    F: FnMut(f64, &VehicleState) -> VehicleControl,
{
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::invalid(format!("dt must be positive, got {dt}")));
    }
    if !state.is_finite() {
        return Err(Error::invalid("non-finite vehicle state"));
    }
    let steps = (dt / max_substep).ceil().max(1.0) as usize;
    let h = dt / steps as f64;
    let l = params.wheelbase;
    let as_state = |x: &[f64; 4]| VehicleState {
        px: x[0],
        py: x[1],
        theta: x[2],
        v: x[3],
    };
    let axpy =
        |x: &[f64; 4], k: &[f64; 4], s: f64| [x[0] + s * k[0], x[1] + s * k[1], x[2] + s * k[2], x[3] + s * k[3]];

    let mut x = [state.px, state.py, state.theta, state.v];
    for i in 0..steps {
        let t = i as f64 * h;
        let u1 = control(t, &as_state(&x));
        let k1 = derivative(&x, &u1, l);
        let x2 = axpy(&x, &k1, 0.5 * h);
        let u2 = control(t + 0.5 * h, &as_state(&x2));
        let k2 = derivative(&x2, &u2, l);
        let x3 = axpy(&x, &k2, 0.5 * h);
        let u3 = control(t + 0.5 * h, &as_state(&x3));
        let k3 = derivative(&x3, &u3, l);
        let x4 = axpy(&x, &k3, h);
        let u4 = control(t + h, &as_state(&x4));
        let k4 = derivative(&x4, &u4, l);
        for j in 0..4 {
            x[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
    }
    let out = VehicleState {
        px: x[0],
        py: x[1],
        theta: wrap_angle(x[2]),
        // no reversing: braking past standstill stops the vehicle
        v: x[3].max(0.0),
    };
    if !out.is_finite() {
        return Err(Error::invalid("integration produced non-finite state"));
    }
    Ok(out)
}

/// Advance the bicycle model by `dt` under a constant control.
pub fn step_dynamics(
    state: &VehicleState,
    ctrl: &VehicleControl,
    params: &VehicleParams,
    dt: f64,
) -> Result<VehicleState> {
    if !(ctrl.a.is_finite() && ctrl.phi.is_finite()) {
        return Err(Error::invalid("non-finite control"));
    }
    integrate(state, params, dt, MAX_SUBSTEP, |_, _| *ctrl)
}

/// Recover state and control from the flat output.
pub fn flat_to_state(
    sig: &FlatSignal,
    params: &VehicleParams,
) -> std::result::Result<(VehicleState, VehicleControl), FlatError> {
    let finite = sig
        .sigma
        .iter()
        .chain(sig.d_sigma.iter())
        .chain(sig.dd_sigma.iter())
        .all(|x| x.is_finite());
    if !finite {
        return Err(FlatError::NonFinite);
    }
    let (px, py) = (sig.sigma.x, sig.sigma.y);
    let (dx, dy) = (sig.d_sigma.x, sig.d_sigma.y);
    let (ddx, ddy) = (sig.dd_sigma.x, sig.dd_sigma.y);
    let v2 = dx * dx + dy * dy;
    let v = v2.sqrt();
    if v < EPS_V {
        return Err(FlatError::LowSpeed { px, py, v });
    }
    let theta = dy.atan2(dx);
    let a = (dx * ddx + dy * ddy) / v;
    let phi = ((dx * ddy - dy * ddx) * params.wheelbase / (v2 * v)).atan();
    Ok((
        VehicleState {
            px,
            py,
            theta: wrap_angle(theta),
            v,
        },
        VehicleControl { a, phi },
    ))
}

/// [`flat_to_state`] with the low-speed branch resolved: heading is held at
/// `prev_heading`, steering is zero and acceleration is the flat acceleration
/// projected on the held heading.
pub fn flat_to_state_held(
    sig: &FlatSignal,
    params: &VehicleParams,
    prev_heading: f64,
) -> std::result::Result<(VehicleState, VehicleControl), FlatError> {
    match flat_to_state(sig, params) {
        Err(FlatError::LowSpeed { px, py, v }) => {
            let theta = wrap_angle(prev_heading);
            let (s, c) = theta.sin_cos();
            let a = sig.dd_sigma.x * c + sig.dd_sigma.y * s;
            Ok((VehicleState { px, py, theta, v }, VehicleControl { a, phi: 0.0 }))
        }
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn params() -> VehicleParams {
        VehicleParams::default()
    }

    #[test]
    fn straight_line_zero_steering() {
        let s = VehicleState::new(0.0, 0.0, 0.0, 1.0).unwrap();
        let out = step_dynamics(&s, &VehicleControl::default(), &params(), 1.0).unwrap();
        assert_abs_diff_eq!(out.px, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out.py, 0.0, epsilon = 1e-12);
        assert_eq!(out.theta, 0.0);
        assert_abs_diff_eq!(out.v, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_acceleration_from_rest() {
        let s = VehicleState::new(0.0, 0.0, 0.0, 0.0).unwrap();
        let u = VehicleControl { a: 1.0, phi: 0.0 };
        let out = step_dynamics(&s, &u, &params(), 1.0).unwrap();
        assert_abs_diff_eq!(out.px, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(out.v, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn half_circle_closed_form() {
        // radius R = L / tan(phi); half a revolution takes pi * R / v.
        let r = 10.0;
        let p = params();
        let s = VehicleState::new(0.0, 0.0, 0.0, 1.0).unwrap();
        let u = VehicleControl {
            a: 0.0,
            phi: (p.wheelbase / r).atan(),
        };
        let out = step_dynamics(&s, &u, &p, PI * r).unwrap();
        assert_abs_diff_eq!(out.px, 0.0, epsilon = 1e-7);
        assert_abs_diff_eq!(out.py, 2.0 * r, epsilon = 1e-7);
        assert_abs_diff_eq!(angle_abs(out.theta - PI), 0.0, epsilon = 1e-9);

        // independent check: fine forward Euler
        let mut x = [0.0f64, 0.0, 0.0];
        let h = 1e-5;
        let n = (PI * r / h).round() as usize;
        for _ in 0..n {
            x[0] += h * x[2].cos();
            x[1] += h * x[2].sin();
            x[2] += h / r;
        }
        assert!((out.px - x[0]).abs() < 1e-3 && (out.py - x[1]).abs() < 1e-3);

        // a full circle does return to the start
        let full = step_dynamics(&s, &u, &p, 2.0 * PI * r).unwrap();
        assert_abs_diff_eq!(full.px, 0.0, epsilon = 1e-7);
        assert_abs_diff_eq!(full.py, 0.0, epsilon = 1e-7);
    }

    fn angle_abs(x: f64) -> f64 {
        wrap_angle(x).abs()
    }

    #[test]
    fn zero_steering_keeps_heading_exactly() {
        let s = VehicleState::new(3.0, -1.0, 1.234, 2.0).unwrap();
        let u = VehicleControl { a: -0.3, phi: 0.0 };
        let out = step_dynamics(&s, &u, &params(), 2.5).unwrap();
        assert_eq!(out.theta, s.theta);
    }

    #[test]
    fn rejects_bad_inputs() {
        let s = VehicleState::new(0.0, 0.0, 0.0, 1.0).unwrap();
        assert!(step_dynamics(&s, &VehicleControl::default(), &params(), 0.0).is_err());
        let u = VehicleControl { a: f64::NAN, phi: 0.0 };
        assert!(step_dynamics(&s, &u, &params(), 0.1).is_err());
        assert!(VehicleState::new(0.0, 0.0, 0.0, -1.0).is_err());
        assert!(VehicleState::new(f64::INFINITY, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn braking_never_reverses() {
        let s = VehicleState::new(0.0, 0.0, 0.0, 1.0).unwrap();
        let u = VehicleControl { a: -2.0, phi: 0.0 };
        let out = step_dynamics(&s, &u, &params(), 1.0).unwrap();
        assert_eq!(out.v, 0.0);
    }

    #[test]
    fn uniform_straight_flat_signal() {
        let sig = FlatSignal {
            sigma: Vec2::new(5.0, 3.0),
            d_sigma: Vec2::new(1.0, 0.0),
            dd_sigma: Vec2::zeros(),
        };
        let (s, u) = flat_to_state(&sig, &params()).unwrap();
        assert_eq!((s.px, s.py, s.theta, s.v), (5.0, 3.0, 0.0, 1.0));
        assert_eq!((u.a, u.phi), (0.0, 0.0));
    }

    #[test]
    fn circular_flat_signal() {
        // sigma = (R cos wt, R sin wt) at t = 0
        let (r, w) = (10.0, 0.1);
        let p = params();
        let sig = FlatSignal {
            sigma: Vec2::new(r, 0.0),
            d_sigma: Vec2::new(0.0, r * w),
            dd_sigma: Vec2::new(-r * w * w, 0.0),
        };
        let (s, u) = flat_to_state(&sig, &p).unwrap();
        assert_abs_diff_eq!(s.v, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.theta, PI / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(u.a, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(u.phi, (p.wheelbase / r).atan(), epsilon = 1e-12);
        assert_abs_diff_eq!(u.phi, 0.2637, epsilon = 1e-4);
    }

    #[test]
    fn zero_velocity_is_degenerate() {
        let sig = FlatSignal {
            sigma: Vec2::new(1.0, 2.0),
            d_sigma: Vec2::zeros(),
            dd_sigma: Vec2::new(1.0, 0.0),
        };
        match flat_to_state(&sig, &params()) {
            Err(FlatError::LowSpeed { px, py, v }) => {
                assert_eq!((px, py, v), (1.0, 2.0, 0.0));
            }
            other => panic!("expected low-speed error, got {other:?}"),
        }
        let (s, u) = flat_to_state_held(&sig, &params(), 0.0).unwrap();
        assert_eq!(s.theta, 0.0);
        assert_eq!(u.phi, 0.0);
        assert_eq!(u.a, 1.0);
    }
}
