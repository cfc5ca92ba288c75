//! Quadratic Q-function critic trained by least-squares temporal differences
//! over an experience-replay buffer.
//!
//! The feature vector is the upper triangle of `z zᵀ` with `z = [state | action]`
//! and off-diagonal entries doubled, so a weight vector packing a symmetric
//! matrix `S` evaluates exactly to `zᵀ S z`.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{Action, RobotState, ACTION_DIM, STATE_DIM};
use crate::error::{Error, Result};

/// Length of `z = [state | action]`.
pub const Z_DIM: usize = STATE_DIM + ACTION_DIM;
/// Number of critic weights, `Z_DIM * (Z_DIM + 1) / 2`.
pub const N_WEIGHTS: usize = Z_DIM * (Z_DIM + 1) / 2;

pub type FeatureVector = [f64; N_WEIGHTS];

/// Stacks the (heading-wrapped) state and the action.
pub fn stack(state: &RobotState, action: &Action) -> [f64; Z_DIM] {
    [
        state.x,
        state.y,
        state.wrapped_alpha(),
        state.v,
        state.omega,
        action.force,
        action.torque,
    ]
}

/// Index of the `(i, j)` entry, `i <= j`, in the row-major upper triangle.
pub const fn triangle_index(i: usize, j: usize) -> usize {
    i * Z_DIM - i * (i + 1) / 2 + j
}

pub fn features(state: &RobotState, action: &Action) -> FeatureVector {
    let z = stack(state, action);
    let mut phi = [0.0; N_WEIGHTS];
    let mut k = 0;
    for i in 0..Z_DIM {
        phi[k] = z[i] * z[i];
        k += 1;
        for j in (i + 1)..Z_DIM {
            phi[k] = 2.0 * z[i] * z[j];
            k += 1;
        }
    }
    phi
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-entry closed interval for the critic weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightBounds {
    pub lower: f64,
    pub upper: f64,
}

impl Default for WeightBounds {
    fn default() -> Self {
        Self {
            lower: -1e3,
            upper: 1e3,
        }
    }
}

impl WeightBounds {
    pub fn validate(&self) -> Result<()> {
        if !(self.lower.is_finite() && self.upper.is_finite() && self.lower <= self.upper) {
            return Err(Error::param(
                "weight_bounds",
                format!("need finite lower <= upper, got [{}, {}]", self.lower, self.upper),
            ));
        }
        Ok(())
    }

    pub fn contains(&self, w: f64) -> bool {
        self.lower <= w && w <= self.upper
    }

    pub fn clip(&self, w: f64) -> f64 {
        w.clamp(self.lower, self.upper)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticWeights {
    theta: Vec<f64>,
    bounds: WeightBounds,
}

impl CriticWeights {
    pub fn zeros(bounds: WeightBounds) -> Self {
        Self {
            theta: vec![0.0; N_WEIGHTS],
            bounds,
        }
    }

    /// Builds weights from a raw vector, clipping every entry into `bounds`.
    pub fn new(theta: Vec<f64>, bounds: WeightBounds) -> Result<Self> {
        if theta.len() != N_WEIGHTS {
            return Err(Error::Dimension {
                expected: N_WEIGHTS,
                got: theta.len(),
            });
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("critic weights"));
        }
        let theta = theta.into_iter().map(|t| bounds.clip(t)).collect();
        Ok(Self { theta, bounds })
    }

    /// Packs a diagonal quadratic form `Σ d_i z_i²` so that `q_hat` reproduces it.
    pub fn from_diagonal(diag: &[f64; Z_DIM], bounds: WeightBounds) -> Self {
        let mut theta = vec![0.0; N_WEIGHTS];
        for (i, d) in diag.iter().enumerate() {
            theta[triangle_index(i, i)] = bounds.clip(*d);
        }
        Self { theta, bounds }
    }

    /// Packs the upper triangle of a symmetric matrix.
    pub fn from_symmetric(s: &[[f64; Z_DIM]; Z_DIM], bounds: WeightBounds) -> Self {
        let mut theta = Vec::with_capacity(N_WEIGHTS);
        for i in 0..Z_DIM {
            for j in i..Z_DIM {
                theta.push(bounds.clip(s[i][j]));
            }
        }
        Self { theta, bounds }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.theta
    }

    pub fn bounds(&self) -> WeightBounds {
        self.bounds
    }

    pub fn within_bounds(&self) -> bool {
        self.theta.iter().all(|t| self.bounds.contains(*t))
    }
}

pub fn q_hat(theta: &CriticWeights, state: &RobotState, action: &Action) -> f64 {
    dot(&theta.theta, &features(state, action))
}

/// Evaluates `θ·φ` for a raw weight slice, checking its length.
pub fn q_hat_raw(theta: &[f64], state: &RobotState, action: &Action) -> Result<f64> {
    if theta.len() != N_WEIGHTS {
        return Err(Error::Dimension {
            expected: N_WEIGHTS,
            got: theta.len(),
        });
    }
    Ok(dot(theta, &features(state, action)))
}

/// One replay record `(x_{k-1}, u_{k-1}, x_k, u_k, ρ(x_{k-1}, u_{k-1}))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub prev_state: RobotState,
    pub prev_action: Action,
    pub state: RobotState,
    pub action: Action,
    pub prev_stage_cost: f64,
}

impl Transition {
    pub fn new(
        prev_state: RobotState,
        prev_action: Action,
        state: RobotState,
        action: Action,
        prev_stage_cost: f64,
    ) -> Result<Self> {
        if !(prev_stage_cost.is_finite() && prev_stage_cost >= 0.0) {
            return Err(Error::param(
                "prev_stage_cost",
                format!("must be finite and >= 0, got {prev_stage_cost}"),
            ));
        }
        Ok(Self {
            prev_state,
            prev_action,
            state,
            action,
            prev_stage_cost,
        })
    }
}

/// Fixed-capacity FIFO of transitions; the oldest record is evicted first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    records: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::param("buffer_size", "must be >= 1"));
        }
        Ok(Self {
            capacity,
            records: VecDeque::with_capacity(capacity),
        })
    }

    pub fn push(&mut self, t: Transition) {
        if self.records.len() == self.capacity {
            self.records.pop_front();
        }
        self.records.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.records.iter()
    }
}

/// `e(θ) = θ·φ(x_{k-1}, u_{k-1}) − γ θ⁻·φ(x_k, u_k) − ρ(x_{k-1}, u_{k-1})`
pub fn td_error(theta: &CriticWeights, theta_minus: &CriticWeights, t: &Transition, gamma: f64) -> f64 {
    td_error_raw(&theta.theta, &theta_minus.theta, t, gamma)
}

fn td_error_raw(theta: &[f64], theta_minus: &[f64], t: &Transition, gamma: f64) -> f64 {
    dot(theta, &features(&t.prev_state, &t.prev_action))
        - gamma * dot(theta_minus, &features(&t.state, &t.action))
        - t.prev_stage_cost
}

/// Half the sum of squared TD errors over the buffer; `None` when the buffer is empty.
pub fn critic_loss(
    theta: &CriticWeights,
    buffer: &ReplayBuffer,
    theta_minus: &CriticWeights,
    gamma: f64,
) -> Option<f64> {
    critic_loss_raw(&theta.theta, buffer, &theta_minus.theta, gamma)
}

pub fn critic_loss_raw(
    theta: &[f64],
    buffer: &ReplayBuffer,
    theta_minus: &[f64],
    gamma: f64,
) -> Option<f64> {
    if buffer.is_empty() {
        return None;
    }
    Some(
        0.5 * buffer
            .iter()
            .map(|t| td_error_raw(theta, theta_minus, t, gamma).powi(2))
            .sum::<f64>(),
    )
}

/// Analytic gradient `Σ e_i φ(x_{i-1}, u_{i-1})` of [`critic_loss`] with respect to θ.
pub fn critic_loss_gradient(
    theta: &CriticWeights,
    buffer: &ReplayBuffer,
    theta_minus: &CriticWeights,
    gamma: f64,
) -> Vec<f64> {
    let mut g = vec![0.0; N_WEIGHTS];
    for t in buffer.iter() {
        let e = td_error(theta, theta_minus, t, gamma);
        let phi = features(&t.prev_state, &t.prev_action);
        for (gi, p) in g.iter_mut().zip(phi.iter()) {
            *gi += e * p;
        }
    }
    g
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticSettings {
    pub buffer_size: usize,
    pub gamma: f64,
    pub ridge: f64,
    pub weight_bounds: WeightBounds,
    /// Sweeps of projected coordinate descent used when the unconstrained
    /// least-squares solution leaves the weight box.
    pub max_box_sweeps: usize,
}

impl Default for CriticSettings {
    fn default() -> Self {
        Self {
            buffer_size: 20,
            gamma: 1.0,
            ridge: 1e-8,
            weight_bounds: WeightBounds::default(),
            max_box_sweeps: 200,
        }
    }
}

impl CriticSettings {
    pub fn validate(&self) -> Result<()> {
        if self.buffer_size == 0 {
            return Err(Error::param("buffer_size", "must be >= 1"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::param("gamma", format!("must lie in (0, 1], got {}", self.gamma)));
        }
        if !(self.ridge.is_finite() && self.ridge > 0.0) {
            return Err(Error::param("ridge", "must be finite and > 0"));
        }
        self.weight_bounds.validate()
    }
}

/// Outcome of a critic fit.
#[derive(Debug, Clone)]
pub struct CriticUpdate {
    pub weights: CriticWeights,
    /// Whether the box constraint was active at the solution.
    pub clipped: bool,
}

/// Minimizes the replay-buffer TD loss over the weight box.
///
/// The loss is linear least squares in θ with targets `γ θ⁻·φ(x_k, u_k) + ρ`.
/// The normal equations carry a proximal ridge `ε ‖θ − θ⁻‖²`, which makes the
/// system uniquely solvable for any buffer and leaves directions the buffer
/// does not excite at their previous values. If the unconstrained solution
/// leaves the box, projected coordinate descent on the same quadratic is run
/// from the feasible point θ⁻, so the loss never exceeds the loss at θ⁻.
pub fn update_critic(
    buffer: &ReplayBuffer,
    theta_minus: &CriticWeights,
    settings: &CriticSettings,
) -> Option<CriticUpdate> {
    if buffer.is_empty() {
        return None;
    }
    let gamma = settings.gamma;
    let eps = settings.ridge;
    let bounds = settings.weight_bounds;
    let prev = DVector::from_column_slice(&theta_minus.theta);

    let mut gram = DMatrix::<f64>::zeros(N_WEIGHTS, N_WEIGHTS);
    let mut rhs = DVector::<f64>::zeros(N_WEIGHTS);
    for t in buffer.iter() {
        let phi = DVector::from_column_slice(&features(&t.prev_state, &t.prev_action));
        let target = gamma * dot(&theta_minus.theta, &features(&t.state, &t.action)) + t.prev_stage_cost;
        gram.ger(1.0, &phi, &phi, 1.0);
        rhs.axpy(target, &phi, 1.0);
    }
    for i in 0..N_WEIGHTS {
        gram[(i, i)] += eps;
    }
    rhs.axpy(eps, &prev, 1.0);

    if log::log_enabled!(log::Level::Debug) {
        let eig = gram.clone().symmetric_eigenvalues();
        let (lo, hi) = eig
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), e| (lo.min(*e), hi.max(*e)));
        log::debug!("critic normal equations: condition number {:.3e}", hi / lo);
    }

    let solution = gram
        .clone()
        .cholesky()
        .map(|c| c.solve(&rhs))
        .filter(|s| s.iter().all(|v| v.is_finite()));

    if let Some(sol) = &solution {
        if sol.iter().all(|w| bounds.contains(*w)) {
            return Some(CriticUpdate {
                weights: CriticWeights {
                    theta: sol.iter().copied().collect(),
                    bounds,
                },
                clipped: false,
            });
        }
    }

    // Box-constrained: minimize ½θᵀGθ − bᵀθ by projected coordinate descent.
    let mut theta: Vec<f64> = theta_minus.theta.iter().map(|t| bounds.clip(*t)).collect();
    let mut grad: Vec<f64> = (0..N_WEIGHTS)
        .map(|i| (0..N_WEIGHTS).map(|j| gram[(i, j)] * theta[j]).sum::<f64>() - rhs[i])
        .collect();
    for _ in 0..settings.max_box_sweeps {
        let mut moved = 0.0f64;
        for i in 0..N_WEIGHTS {
            let gii = gram[(i, i)];
            let new = bounds.clip(theta[i] - grad[i] / gii);
            let step = new - theta[i];
            if step != 0.0 {
                for j in 0..N_WEIGHTS {
                    grad[j] += gram[(j, i)] * step;
                }
                theta[i] = new;
                moved = moved.max(step.abs());
            }
        }
        if moved <= 1e-12 * (1.0 + bounds.upper.abs().max(bounds.lower.abs())) {
            break;
        }
    }
    Some(CriticUpdate {
        weights: CriticWeights { theta, bounds },
        clipped: true,
    })
}
