//! Extended nonholonomic double integrator (ENDI) and fixed-step integrators.
//!
//! The plant is a three-wheel robot driven by a pushing force and a steering
//! torque:
//!
//! ```text
//! x' = v cos(alpha)    y' = v sin(alpha)    alpha' = omega
//! v' = F / m           omega' = M / I
//! ```
//!
//! The heading is carried unwrapped through integration. Use
//! [`RobotState::wrapped_alpha`] wherever a cost or a success test needs it.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STATE_DIM: usize = 5;
pub const ACTION_DIM: usize = 2;

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let a = angle.rem_euclid(2.0 * PI);
    if a > PI {
        a - 2.0 * PI
    } else {
        a
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RobotState {
    pub x: f64,
    pub y: f64,
    pub alpha: f64,
    pub v: f64,
    pub omega: f64,
}

impl RobotState {
    pub const fn new(x: f64, y: f64, alpha: f64, v: f64, omega: f64) -> Self {
        Self {
            x,
            y,
            alpha,
            v,
            omega,
        }
    }

    pub fn to_array(self) -> [f64; STATE_DIM] {
        [self.x, self.y, self.alpha, self.v, self.omega]
    }

    pub fn from_array(a: [f64; STATE_DIM]) -> Self {
        Self::new(a[0], a[1], a[2], a[3], a[4])
    }

    pub fn wrapped_alpha(&self) -> f64 {
        wrap_angle(self.alpha)
    }

    /// Same state with the heading wrapped into `(-pi, pi]`.
    pub fn wrapped(self) -> Self {
        Self {
            alpha: self.wrapped_alpha(),
            ..self
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|c| c.is_finite())
    }

    pub fn distance_to_origin(&self) -> f64 {
        self.x.hypot(self.y)
    }

    /// `self + h * d`
    pub fn advanced(self, h: f64, d: &StateDerivative) -> Self {
        let mut a = self.to_array();
        for (ai, di) in a.iter_mut().zip(d.0.iter()) {
            *ai += h * di;
        }
        Self::from_array(a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Action {
    pub force: f64,
    pub torque: f64,
}

impl Action {
    pub const ZERO: Action = Action {
        force: 0.0,
        torque: 0.0,
    };

    pub const fn new(force: f64, torque: f64) -> Self {
        Self { force, torque }
    }

    pub fn to_array(self) -> [f64; ACTION_DIM] {
        [self.force, self.torque]
    }

    pub fn is_finite(&self) -> bool {
        self.force.is_finite() && self.torque.is_finite()
    }
}

/// Time derivative of a [`RobotState`], in field order `(x, y, alpha, v, omega)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StateDerivative(pub [f64; STATE_DIM]);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotParams {
    pub mass: f64,
    pub inertia: f64,
}

impl Default for RobotParams {
    fn default() -> Self {
        Self {
            mass: 10.0,
            inertia: 1.0,
        }
    }
}

impl RobotParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mass.is_finite() && self.mass > 0.0) {
            return Err(Error::param("mass", format!("must be > 0, got {}", self.mass)));
        }
        if !(self.inertia.is_finite() && self.inertia > 0.0) {
            return Err(Error::param(
                "inertia",
                format!("must be > 0, got {}", self.inertia),
            ));
        }
        Ok(())
    }
}

/// Symmetric saturation box for the actuators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuatorBounds {
    pub force_max: f64,
    pub torque_max: f64,
}

impl Default for ActuatorBounds {
    fn default() -> Self {
        Self {
            force_max: 300.0,
            torque_max: 100.0,
        }
    }
}

impl ActuatorBounds {
    pub fn validate(&self) -> Result<()> {
        if !(self.force_max.is_finite() && self.force_max > 0.0) {
            return Err(Error::param("force_max", "must be finite and > 0"));
        }
        if !(self.torque_max.is_finite() && self.torque_max > 0.0) {
            return Err(Error::param("torque_max", "must be finite and > 0"));
        }
        Ok(())
    }

    pub fn saturate(&self, a: Action) -> Action {
        Action {
            force: a.force.clamp(-self.force_max, self.force_max),
            torque: a.torque.clamp(-self.torque_max, self.torque_max),
        }
    }

    pub fn contains(&self, a: &Action) -> bool {
        a.force.abs() <= self.force_max && a.torque.abs() <= self.torque_max
    }

    /// Per-component upper bound, `(force_max, torque_max)`.
    pub fn upper(&self) -> [f64; ACTION_DIM] {
        [self.force_max, self.torque_max]
    }
}

/// A controlled ODE `x' = f(x, u)` over the robot state space.
pub trait ControlledOde {
    /// Evaluates `f` without validating the inputs.
    fn derivative(&self, state: &RobotState, action: &Action) -> StateDerivative;
}

impl ControlledOde for RobotParams {
    #[inline]
    fn derivative(&self, s: &RobotState, a: &Action) -> StateDerivative {
        let (sin, cos) = s.alpha.sin_cos();
        StateDerivative([
            s.v * cos,
            s.v * sin,
            s.omega,
            a.force / self.mass,
            a.torque / self.inertia,
        ])
    }
}

fn check_inputs(state: &RobotState, action: &Action) -> Result<()> {
    if !state.is_finite() {
        return Err(Error::NonFinite("state"));
    }
    if !action.is_finite() {
        return Err(Error::NonFinite("action"));
    }
    Ok(())
}

fn check_step(h: f64) -> Result<()> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::param("h", format!("step must be > 0, got {h}")));
    }
    Ok(())
}

/// Right-hand side of the ENDI model.
pub fn rhs(state: &RobotState, action: &Action, params: &RobotParams) -> Result<StateDerivative> {
    params.validate()?;
    check_inputs(state, action)?;
    Ok(params.derivative(state, action))
}

/// Explicit Euler update without input validation. Used in the hot prediction loop.
#[inline]
pub fn euler_update<P: ControlledOde>(h: f64, state: RobotState, action: &Action, plant: &P) -> RobotState {
    let d = plant.derivative(&state, action);
    state.advanced(h, &d)
}

/// Classical RK4 update with the action held constant, without validation.
pub fn rk4_update<P: ControlledOde>(h: f64, state: RobotState, action: &Action, plant: &P) -> RobotState {
    let k1 = plant.derivative(&state, action);
    let k2 = plant.derivative(&state.advanced(0.5 * h, &k1), action);
    let k3 = plant.derivative(&state.advanced(0.5 * h, &k2), action);
    let k4 = plant.derivative(&state.advanced(h, &k3), action);
    let mut d = [0.0; STATE_DIM];
    for (i, di) in d.iter_mut().enumerate() {
        *di = (k1.0[i] + 2.0 * k2.0[i] + 2.0 * k3.0[i] + k4.0[i]) / 6.0;
    }
    state.advanced(h, &StateDerivative(d))
}

/// One explicit Euler step of length `h`.
pub fn euler_step<P: ControlledOde>(
    h: f64,
    state: &RobotState,
    action: &Action,
    plant: &P,
) -> Result<RobotState> {
    check_step(h)?;
    check_inputs(state, action)?;
    Ok(euler_update(h, *state, action, plant))
}

/// One classical fourth-order Runge-Kutta step of length `h`.
pub fn rk4_step<P: ControlledOde>(
    h: f64,
    state: &RobotState,
    action: &Action,
    plant: &P,
) -> Result<RobotState> {
    check_step(h)?;
    check_inputs(state, action)?;
    Ok(rk4_update(h, *state, action, plant))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    const P: RobotParams = RobotParams {
        mass: 10.0,
        inertia: 1.0,
    };

    fn arr(d: StateDerivative) -> [f64; 5] {
        d.0
    }

    #[test]
    fn rhs_at_rest_is_zero() {
        let d = rhs(&RobotState::default(), &Action::ZERO, &P).unwrap();
        assert_eq!(arr(d), [0.0; 5]);
    }

    #[test]
    fn rhs_hand_evaluation() {
        let d = rhs(&RobotState::new(0., 0., 0., 1., 0.), &Action::new(10., 1.), &P).unwrap();
        assert_eq!(arr(d), [1.0, 0.0, 0.0, 1.0, 1.0]);

        let d = rhs(
            &RobotState::new(0., 0., PI / 2.0, 2., 0.),
            &Action::ZERO,
            &P,
        )
        .unwrap();
        assert_abs_diff_eq!(d.0[0], 0.0, epsilon = 1e-15);
        assert_eq!(d.0[1], 2.0);
        assert_eq!(&d.0[2..], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn rhs_rejects_non_finite() {
        let s = RobotState::new(f64::NAN, 0., 0., 0., 0.);
        assert_eq!(rhs(&s, &Action::ZERO, &P), Err(Error::NonFinite("state")));
        let a = Action::new(f64::INFINITY, 0.0);
        assert_eq!(
            rhs(&RobotState::default(), &a, &P),
            Err(Error::NonFinite("action"))
        );
        let bad = RobotParams {
            mass: 0.0,
            inertia: 1.0,
        };
        assert!(rhs(&RobotState::default(), &Action::ZERO, &bad).is_err());
    }

    #[test]
    fn euler_single_update() {
        let s = euler_step(0.1, &RobotState::new(0., 0., 0., 1., 0.), &Action::new(10., 1.), &P)
            .unwrap();
        assert_abs_diff_eq!(s.x, 0.1, epsilon = 1e-15);
        assert_eq!(s.y, 0.0);
        assert_eq!(s.alpha, 0.0);
        assert_abs_diff_eq!(s.v, 1.1, epsilon = 1e-15);
        assert_abs_diff_eq!(s.omega, 0.1, epsilon = 1e-15);
    }

    #[test]
    fn integrators_keep_rest_at_rest() {
        let s = RobotState::new(1.0, -2.0, 0.3, 0.0, 0.0);
        assert_eq!(euler_step(0.1, &s, &Action::ZERO, &P).unwrap(), s);
        assert_eq!(rk4_step(0.1, &s, &Action::ZERO, &P).unwrap(), s);
    }

    #[test]
    fn rk4_straight_line() {
        let s = rk4_step(1.0, &RobotState::new(0., 0., 0., 1., 0.), &Action::ZERO, &P).unwrap();
        assert_eq!(s.x, 1.0);
        assert_eq!(s.y, 0.0);
    }

    #[test]
    fn non_positive_step_is_rejected() {
        let s = RobotState::default();
        for h in [0.0, -0.1, f64::NAN] {
            assert!(matches!(
                euler_step(h, &s, &Action::ZERO, &P),
                Err(Error::Parameter { name: "h", .. })
            ));
            assert!(rk4_step(h, &s, &Action::ZERO, &P).is_err());
        }
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert_abs_diff_eq!(wrap_angle(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_angle(0.25 + 4.0 * PI), 0.25, epsilon = 1e-12);
    }

    #[test]
    fn saturation() {
        let b = ActuatorBounds::default();
        let a = b.saturate(Action::new(1e6, -1e6));
        assert_eq!(a, Action::new(300.0, -100.0));
        assert!(b.contains(&a));
    }

    proptest! {
        #[test]
        fn rhs_matches_hand_coded_duplicate(
            x in -10.0..10.0f64, y in -10.0..10.0f64, al in -20.0..20.0f64,
            v in -5.0..5.0f64, w in -5.0..5.0f64,
            f in -300.0..300.0f64, m in -100.0..100.0f64,
            mass in 0.1..50.0f64, inertia in 0.1..10.0f64,
        ) {
            let p = RobotParams { mass, inertia };
            let d = rhs(&RobotState::new(x, y, al, v, w), &Action::new(f, m), &p).unwrap();
            let expected = [v * al.cos(), v * al.sin(), w, f / mass, m / inertia];
            prop_assert_eq!(d.0, expected);
        }

        #[test]
        fn wrapped_in_half_open_interval(a in -1e3..1e3f64) {
            let w = wrap_angle(a);
            prop_assert!(w > -PI && w <= PI);
            prop_assert!((w.sin() - a.sin()).abs() < 1e-9);
            prop_assert!((w.cos() - a.cos()).abs() < 1e-9);
        }

        #[test]
        fn pure_rotation_conserves_speed(
            v in -3.0..3.0f64, w in -3.0..3.0f64, m in -100.0..100.0f64, al in -3.0..3.0f64,
        ) {
            let s0 = RobotState::new(0.5, -0.5, al, v, w);
            let a = Action::new(0.0, m);
            let e = euler_step(0.05, &s0, &a, &P).unwrap();
            let r = rk4_step(0.05, &s0, &a, &P).unwrap();
            prop_assert_eq!(e.v, v);
            prop_assert_eq!(r.v, v);
        }

        #[test]
        fn pure_thrust_conserves_heading(v in -3.0..3.0f64, f in -300.0..300.0f64, al in -3.0..3.0f64) {
            let s0 = RobotState::new(0.0, 0.0, al, v, 0.0);
            let a = Action::new(f, 0.0);
            prop_assert_eq!(euler_step(0.05, &s0, &a, &P).unwrap().alpha, al);
            prop_assert_eq!(rk4_step(0.05, &s0, &a, &P).unwrap().alpha, al);
        }
    }
}
