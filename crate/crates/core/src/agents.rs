//! Predictive agents: finite-horizon MPC, roll-out Q-learning and stacked
//! Q-learning.
//!
//! All three share the Euler predictor
//! `x̂_{i+1|k} = x̂_{i|k} + sδ f(x̂_{i|k}, u_{i|k})` with `x̂_{1|k} = x_k` and a
//! bounded direct-search optimizer over the flattened action sequence. They
//! differ only in what is summed along the prediction:
//!
//! | agent | objective |
//! |-------|-----------|
//! | MPC   | `Σ_{i=1}^{N} γ^{i-1} ρ(x̂_i, u_i)` |
//! | RQL   | `Σ_{i=1}^{N-1} γ^{i-1} ρ(x̂_i, u_i) + Q̂(x̂_N, u_N)` |
//! | SQL   | `Σ_{i=1}^{N} Q̂(x̂_i, u_i)` |

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::critic::{
    self, stack, CriticSettings, CriticWeights, ReplayBuffer, Transition, Z_DIM,
};
use crate::dynamics::{euler_update, Action, ActuatorBounds, ControlledOde, RobotParams, RobotState};
use crate::error::{Error, Result};
use crate::optimize::{BoxMinimizer, NelderMead};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonConfig {
    /// Sampling time δ in seconds.
    pub delta: f64,
    /// Prediction step multiplier `s`; each predictor step advances `sδ`.
    pub step_multiplier: u32,
    /// Number of action slots `N`.
    pub horizon: usize,
    pub gamma: f64,
}

impl Default for HorizonConfig {
    fn default() -> Self {
        Self {
            delta: 0.1,
            step_multiplier: 1,
            horizon: 3,
            gamma: 1.0,
        }
    }
}

impl HorizonConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(Error::param("delta", format!("must be > 0, got {}", self.delta)));
        }
        if self.step_multiplier == 0 {
            return Err(Error::param("s", "must be >= 1"));
        }
        if self.horizon == 0 {
            return Err(Error::param("N", "must be >= 1"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::param("gamma", format!("must lie in (0, 1], got {}", self.gamma)));
        }
        Ok(())
    }

    pub fn prediction_step(&self) -> f64 {
        self.step_multiplier as f64 * self.delta
    }
}

/// Diagonal weights of `ρ = χᵀRχ` over `χ = (x, y, α, v, ω, F, M)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageCostConfig {
    pub weights: [f64; Z_DIM],
}

impl Default for StageCostConfig {
    fn default() -> Self {
        Self {
            weights: [1.0, 1.0, 0.01, 0.1, 0.1, 1e-4, 1e-4],
        }
    }
}

impl StageCostConfig {
    pub fn new(weights: [f64; Z_DIM]) -> Result<Self> {
        let c = Self { weights };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some((i, w)) = self
            .weights
            .iter()
            .enumerate()
            .find(|(_, w)| !(w.is_finite() && **w > 0.0))
        {
            return Err(Error::Config(format!(
                "stage cost weight R[{i}] must be > 0, got {w}"
            )));
        }
        Ok(())
    }
}

/// `χᵀRχ`, evaluated with the heading wrapped into `(-π, π]`.
pub fn stage_cost(state: &RobotState, action: &Action, cfg: &StageCostConfig) -> f64 {
    stack(state, action)
        .iter()
        .zip(cfg.weights.iter())
        .map(|(z, r)| r * z * z)
        .sum()
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ActionSequence {
    pub actions: Vec<Action>,
}

impl ActionSequence {
    pub fn zeros(horizon: usize) -> Self {
        Self {
            actions: vec![Action::ZERO; horizon],
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// `[F_1, M_1, F_2, M_2, ...]`
    pub fn flatten(&self) -> Vec<f64> {
        self.actions.iter().flat_map(|a| a.to_array()).collect()
    }

    pub fn from_flat(flat: &[f64]) -> Self {
        Self {
            actions: flat.chunks_exact(2).map(|c| Action::new(c[0], c[1])).collect(),
        }
    }

    /// Drops the first slot and repeats the last one.
    pub fn shifted(&self) -> Self {
        let mut actions: Vec<Action> = self.actions.iter().skip(1).copied().collect();
        if let Some(last) = self.actions.last() {
            actions.push(*last);
        }
        Self { actions }
    }

    pub fn within(&self, bounds: &ActuatorBounds) -> bool {
        self.actions.iter().all(|a| bounds.contains(a))
    }
}

/// Predicted states `x̂_{1|k}, ..., x̂_{N|k}` under the sequence, one Euler step of `sδ` per slot.
pub fn predict_sequence<P: ControlledOde>(
    x_k: &RobotState,
    seq: &[Action],
    cfg: &HorizonConfig,
    plant: &P,
) -> Vec<RobotState> {
    let mut out = Vec::with_capacity(seq.len());
    roll(x_k, seq, cfg.prediction_step(), plant, |_, x, _| out.push(*x));
    out
}

/// Walks the prediction, calling `visit(i, x̂_i, u_i)` with a zero-based slot index.
#[inline]
fn roll<P: ControlledOde>(
    x_k: &RobotState,
    seq: &[Action],
    h: f64,
    plant: &P,
    mut visit: impl FnMut(usize, &RobotState, &Action),
) {
    let mut x = *x_k;
    for (i, u) in seq.iter().enumerate() {
        visit(i, &x, u);
        if i + 1 < seq.len() {
            x = euler_update(h, x, u, plant);
        }
    }
}

pub fn mpc_objective<P: ControlledOde>(
    x_k: &RobotState,
    seq: &[Action],
    cfg: &HorizonConfig,
    cost: &StageCostConfig,
    plant: &P,
) -> f64 {
    let mut total = 0.0;
    let mut discount = 1.0;
    roll(x_k, seq, cfg.prediction_step(), plant, |_, x, u| {
        total += discount * stage_cost(x, u, cost);
        discount *= cfg.gamma;
    });
    total
}

pub fn rql_objective<P: ControlledOde>(
    x_k: &RobotState,
    seq: &[Action],
    theta: &CriticWeights,
    cfg: &HorizonConfig,
    cost: &StageCostConfig,
    plant: &P,
) -> f64 {
    let last = seq.len().saturating_sub(1);
    let mut total = 0.0;
    let mut discount = 1.0;
    roll(x_k, seq, cfg.prediction_step(), plant, |i, x, u| {
        if i < last {
            total += discount * stage_cost(x, u, cost);
            discount *= cfg.gamma;
        } else {
            total += critic::q_hat(theta, x, u);
        }
    });
    total
}

/// Undiscounted sum of critic values along the prediction; `discounted`
/// inserts `γ^{i-1}` for ablations.
pub fn sql_objective<P: ControlledOde>(
    x_k: &RobotState,
    seq: &[Action],
    theta: &CriticWeights,
    cfg: &HorizonConfig,
    plant: &P,
    discounted: bool,
) -> f64 {
    let mut total = 0.0;
    let mut discount = 1.0;
    roll(x_k, seq, cfg.prediction_step(), plant, |_, x, u| {
        total += discount * critic::q_hat(theta, x, u);
        if discounted {
            discount *= cfg.gamma;
        }
    });
    total
}

/// Minimizes `objective` over action sequences inside the actuator box.
pub fn optimize_actions<O: BoxMinimizer + ?Sized>(
    optimizer: &O,
    objective: &mut dyn FnMut(&[Action]) -> f64,
    initial_guess: &ActionSequence,
    bounds: &ActuatorBounds,
    max_evaluations: usize,
) -> (ActionSequence, crate::optimize::OptimizeResult) {
    let n = initial_guess.len();
    let upper: Vec<f64> = (0..n).flat_map(|_| bounds.upper()).collect();
    let lower: Vec<f64> = upper.iter().map(|u| -u).collect();
    let x0 = initial_guess.flatten();
    let mut scratch: Vec<Action> = Vec::with_capacity(n);
    let mut flat_objective = |flat: &[f64]| {
        scratch.clear();
        scratch.extend(flat.chunks_exact(2).map(|c| Action::new(c[0], c[1])));
        objective(&scratch)
    };
    let result = optimizer.minimize(&mut flat_objective, &x0, &lower, &upper, max_evaluations);
    let mut seq = ActionSequence::from_flat(&result.x);
    for a in seq.actions.iter_mut() {
        *a = bounds.saturate(*a);
    }
    (seq, result)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AgentKind {
    Mpc,
    Rql,
    Sql,
}

impl AgentKind {
    pub const ALL: [AgentKind; 3] = [AgentKind::Mpc, AgentKind::Rql, AgentKind::Sql];

    pub fn as_str(&self) -> &'static str {
        match self {
            AgentKind::Mpc => "MPC",
            AgentKind::Rql => "RQL",
            AgentKind::Sql => "SQL",
        }
    }

    pub fn learns(&self) -> bool {
        !matches!(self, AgentKind::Mpc)
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "MPC" => Ok(AgentKind::Mpc),
            "RQL" => Ok(AgentKind::Rql),
            "SQL" => Ok(AgentKind::Sql),
            other => Err(Error::Config(format!(
                "unknown agent `{other}` (expected MPC, RQL or SQL)"
            ))),
        }
    }
}

/// Starting critic weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticInit {
    Zero,
    /// Packs the stage-cost weights, so `Q̂ ≡ ρ` before any learning.
    StageCost,
}

/// Proximal weight used by learning agents. Squared action features reach
/// ~1e10 at the default bounds; a weaker pull lets a 20-sample on-policy fit
/// turn `Q̂` indefinite within a handful of steps.
pub const ONLINE_RIDGE: f64 = 1e11;

/// Everything an agent needs apart from its mutable learning state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub kind: AgentKind,
    pub horizon: HorizonConfig,
    pub cost: StageCostConfig,
    pub bounds: ActuatorBounds,
    /// Model used by the predictor.
    pub model: RobotParams,
    pub critic: CriticSettings,
    pub critic_init: CriticInit,
    /// Optimizer budget is `evaluations_per_slot * N`.
    pub evaluations_per_slot: usize,
    pub sql_discounted: bool,
    pub optimizer: NelderMead,
}

impl AgentConfig {
    pub fn new(kind: AgentKind, horizon: HorizonConfig) -> Self {
        Self {
            kind,
            horizon,
            cost: StageCostConfig::default(),
            bounds: ActuatorBounds::default(),
            model: RobotParams::default(),
            critic: CriticSettings {
                ridge: ONLINE_RIDGE,
                ..CriticSettings::default()
            },
            critic_init: CriticInit::StageCost,
            evaluations_per_slot: 100,
            sql_discounted: false,
            optimizer: NelderMead::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.horizon.validate()?;
        self.cost.validate()?;
        self.bounds.validate()?;
        self.model.validate()?;
        self.critic.validate()?;
        if self.evaluations_per_slot == 0 {
            return Err(Error::param("evaluations_per_slot", "must be >= 1"));
        }
        Ok(())
    }

    pub fn evaluation_budget(&self) -> usize {
        self.evaluations_per_slot * self.horizon.horizon
    }

    fn initial_weights(&self) -> CriticWeights {
        match self.critic_init {
            CriticInit::Zero => CriticWeights::zeros(self.critic.weight_bounds),
            CriticInit::StageCost => {
                CriticWeights::from_diagonal(&self.cost.weights, self.critic.weight_bounds)
            }
        }
    }
}

/// Counters describing what happened inside an agent over an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AgentTelemetry {
    pub steps: usize,
    pub objective_evaluations: usize,
    /// Steps where the optimizer exhausted its budget before converging.
    pub unconverged_steps: usize,
    pub critic_updates: usize,
    pub critic_box_active: usize,
}

/// Anything that maps a sampled state to an action.
pub trait Controller {
    fn act(&mut self, state: &RobotState) -> Action;
}

/// Always applies the zero action.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroController;

impl Controller for ZeroController {
    fn act(&mut self, _state: &RobotState) -> Action {
        Action::ZERO
    }
}

/// A stateful predictive agent (one per episode).
#[derive(Debug, Clone)]
pub struct Agent<O: BoxMinimizer = NelderMead> {
    config: AgentConfig,
    optimizer: O,
    buffer: ReplayBuffer,
    theta: CriticWeights,
    plan: ActionSequence,
    /// `(x_{k-1}, u_{k-1})`
    last: Option<(RobotState, Action)>,
    /// `(x_{k-2}, u_{k-2})`
    before_last: Option<(RobotState, Action)>,
    telemetry: AgentTelemetry,
}

impl Agent<NelderMead> {
    pub fn new(config: AgentConfig) -> Result<Self> {
        Self::with_optimizer(config, config.optimizer)
    }
}

impl<O: BoxMinimizer> Agent<O> {
    pub fn with_optimizer(config: AgentConfig, optimizer: O) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            optimizer,
            buffer: ReplayBuffer::new(config.critic.buffer_size)?,
            theta: config.initial_weights(),
            plan: ActionSequence::zeros(config.horizon.horizon),
            last: None,
            before_last: None,
            telemetry: AgentTelemetry::default(),
            config,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn weights(&self) -> &CriticWeights {
        &self.theta
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn plan(&self) -> &ActionSequence {
        &self.plan
    }

    pub fn telemetry(&self) -> AgentTelemetry {
        self.telemetry
    }

    /// Objective of this agent's kind for a given sequence at `x_k`, using the current weights.
    pub fn objective(&self, x_k: &RobotState, seq: &[Action]) -> f64 {
        let c = &self.config;
        match c.kind {
            AgentKind::Mpc => mpc_objective(x_k, seq, &c.horizon, &c.cost, &c.model),
            AgentKind::Rql => rql_objective(x_k, seq, &self.theta, &c.horizon, &c.cost, &c.model),
            AgentKind::Sql => {
                sql_objective(x_k, seq, &self.theta, &c.horizon, &c.model, c.sql_discounted)
            }
        }
    }

    /// Completes the transition ending at the previous sample and refits the critic.
    fn learn(&mut self) {
        if let (Some((x0, u0)), Some((x1, u1))) = (self.before_last, self.last) {
            let rho = stage_cost(&x0, &u0, &self.config.cost);
            if let Ok(t) = Transition::new(x0, u0, x1, u1, rho) {
                self.buffer.push(t);
            }
        }
        if let Some(update) = critic::update_critic(&self.buffer, &self.theta, &self.config.critic) {
            self.telemetry.critic_updates += 1;
            if update.clipped {
                self.telemetry.critic_box_active += 1;
            }
            self.theta = update.weights;
        }
    }

    /// One decision at a sampling instant; returns `u_{1|k}`.
    pub fn step(&mut self, x_k: &RobotState) -> Action {
        if self.config.kind.learns() {
            self.learn();
        }

        let warm = self.plan.shifted();
        let budget = self.config.evaluation_budget();
        let (seq, result) = {
            let this = &*self;
            let mut objective = |seq: &[Action]| this.objective(x_k, seq);
            optimize_actions(&this.optimizer, &mut objective, &warm, &this.config.bounds, budget)
        };
        self.telemetry.steps += 1;
        self.telemetry.objective_evaluations += result.evaluations;
        if !result.converged {
            self.telemetry.unconverged_steps += 1;
        }

        let action = seq.actions[0];
        self.plan = seq;
        self.before_last = self.last;
        self.last = Some((*x_k, action));
        action
    }
}

impl<O: BoxMinimizer> Controller for Agent<O> {
    fn act(&mut self, state: &RobotState) -> Action {
        self.step(state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const P: RobotParams = RobotParams {
        mass: 10.0,
        inertia: 1.0,
    };

    fn hc(n: usize) -> HorizonConfig {
        HorizonConfig {
            horizon: n,
            ..Default::default()
        }
    }

    fn random_seq(rng: &mut ChaCha8Rng, n: usize) -> Vec<Action> {
        (0..n)
            .map(|_| Action::new(rng.random_range(-300.0..300.0), rng.random_range(-100.0..100.0)))
            .collect()
    }

    #[test]
    fn stage_cost_basics() {
        let cfg = StageCostConfig::default();
        assert_eq!(stage_cost(&RobotState::default(), &Action::ZERO, &cfg), 0.0);
        let id = StageCostConfig::new([1.0; 7]).unwrap();
        assert_eq!(stage_cost(&RobotState::new(1., 0., 0., 0., 0.), &Action::ZERO, &id), 1.0);
        assert!(StageCostConfig::new([1., 1., 0., 1., 1., 1., 1.]).is_err());
    }

    #[test]
    fn stage_cost_matches_dense_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let mut w = [0.0; 7];
            w.iter_mut().for_each(|x| *x = rng.random_range(0.01..3.0));
            let cfg = StageCostConfig::new(w).unwrap();
            let s = RobotState::new(
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            );
            let a = Action::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
            let chi = stack(&s, &a);
            let mut dense = 0.0;
            for i in 0..7 {
                for j in 0..7 {
                    let rij = if i == j { w[i] } else { 0.0 };
                    dense += chi[i] * rij * chi[j];
                }
            }
            assert_relative_eq!(stage_cost(&s, &a, &cfg), dense, max_relative = 1e-12);
        }
    }

    #[test]
    fn stage_cost_ignores_winding() {
        let cfg = StageCostConfig::default();
        let s = RobotState::new(1., 2., 0.3, 0., 0.);
        let wound = RobotState {
            alpha: 0.3 + 4.0 * std::f64::consts::PI,
            ..s
        };
        assert_relative_eq!(
            stage_cost(&s, &Action::ZERO, &cfg),
            stage_cost(&wound, &Action::ZERO, &cfg),
            max_relative = 1e-12
        );
    }

    #[test]
    fn prediction_from_rest_is_static() {
        let x = RobotState::new(1., 2., 0.5, 0., 0.);
        let pred = predict_sequence(&x, &[Action::ZERO; 4], &hc(4), &P);
        assert_eq!(pred, vec![x; 4]);
        let pred = predict_sequence(&x, &[Action::new(300.0, 100.0)], &hc(1), &P);
        assert_eq!(pred, vec![x]);
    }

    #[test]
    fn prediction_uses_multiplied_step() {
        let x = RobotState::new(0., 0., 0., 1., 0.);
        let cfg = HorizonConfig {
            delta: 0.1,
            step_multiplier: 3,
            horizon: 2,
            gamma: 1.0,
        };
        let pred = predict_sequence(&x, &[Action::new(10., 0.), Action::ZERO], &cfg, &P);
        assert_relative_eq!(pred[1].x, 0.3, max_relative = 1e-12);
        assert_relative_eq!(pred[1].v, 1.3, max_relative = 1e-12);
    }

    #[test]
    fn doubled_step_approaches_two_chained_steps() {
        // One 2δ step vs two δ steps differ by O(δ²); per unit of predicted time that is O(δ).
        let x = RobotState::new(1., -1., 0.4, 1.5, 0.8);
        let u = Action::new(50.0, 20.0);
        let gap = |delta: f64| {
            let c2 = HorizonConfig {
                delta,
                step_multiplier: 2,
                horizon: 2,
                gamma: 1.0,
            };
            let c1 = HorizonConfig {
                step_multiplier: 1,
                horizon: 3,
                ..c2
            };
            let a = predict_sequence(&x, &[u, u], &c2, &P)[1];
            let b = predict_sequence(&x, &[u, u, u], &c1, &P)[2];
            let d: f64 = a
                .to_array()
                .iter()
                .zip(b.to_array())
                .map(|(p, q)| (p - q).abs())
                .fold(0.0, f64::max);
            d / (2.0 * delta)
        };
        let r = gap(0.02) / gap(0.01);
        assert!((r.log2() - 1.0).abs() < 0.2, "order {}", r.log2());
    }

    #[test]
    fn objective_degenerate_cases() {
        let cost = StageCostConfig::default();
        let x0 = RobotState::default();
        assert_eq!(mpc_objective(&x0, &[Action::ZERO; 3], &hc(3), &cost, &P), 0.0);

        let x = RobotState::new(2., -1., 0.7, 0.3, -0.2);
        let u = Action::new(12.0, -4.0);
        assert_eq!(
            mpc_objective(&x, &[u], &hc(1), &cost, &P),
            stage_cost(&x, &u, &cost)
        );

        let theta = CriticWeights::from_diagonal(&[0.3, 0.1, 2.0, 1.0, 1.0, 0.5, 0.5], Default::default());
        let q = critic::q_hat(&theta, &x, &u);
        assert_eq!(rql_objective(&x, &[u], &theta, &hc(1), &cost, &P), q);
        assert_eq!(sql_objective(&x, &[u], &theta, &hc(1), &P, false), q);

        let zero = CriticWeights::zeros(Default::default());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let seq = random_seq(&mut rng, 4);
        assert_eq!(sql_objective(&x, &seq, &zero, &hc(4), &P, false), 0.0);
    }

    #[test]
    fn rql_with_zero_critic_is_truncated_mpc() {
        let cost = StageCostConfig::default();
        let zero = CriticWeights::zeros(Default::default());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 2..6 {
            let x = RobotState::new(3.0, -2.0, 1.0, 0.5, 0.1);
            let seq = random_seq(&mut rng, n);
            let cfg = HorizonConfig {
                gamma: 0.9,
                ..hc(n)
            };
            let short = HorizonConfig {
                horizon: n - 1,
                ..cfg
            };
            assert_eq!(
                rql_objective(&x, &seq, &zero, &cfg, &cost, &P),
                mpc_objective(&x, &seq[..n - 1], &short, &cost, &P)
            );
        }
    }

    #[test]
    fn rql_with_stage_cost_critic_is_full_mpc() {
        let cost = StageCostConfig::default();
        let theta = CriticWeights::from_diagonal(&cost.weights, Default::default());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for n in 1..6 {
            let x = RobotState::new(-1.0, 4.0, -2.0, 0.5, 0.3);
            let seq = random_seq(&mut rng, n);
            let a = rql_objective(&x, &seq, &theta, &hc(n), &cost, &P);
            let b = mpc_objective(&x, &seq, &hc(n), &cost, &P);
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
    }

    #[test]
    fn objectives_ignore_heading_winding() {
        let cost = StageCostConfig::default();
        let theta = CriticWeights::from_diagonal(&[1.0, 2.0, 0.5, 0.1, 0.1, 1e-3, 1e-3], Default::default());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let seq = random_seq(&mut rng, 4);
        let x = RobotState::new(2.0, 1.0, 2.5, 0.4, -0.3);
        let w = RobotState {
            alpha: x.alpha + 2.0 * std::f64::consts::PI,
            ..x
        };
        let cfg = hc(4);
        let pairs = [
            (mpc_objective(&x, &seq, &cfg, &cost, &P), mpc_objective(&w, &seq, &cfg, &cost, &P)),
            (
                rql_objective(&x, &seq, &theta, &cfg, &cost, &P),
                rql_objective(&w, &seq, &theta, &cfg, &cost, &P),
            ),
            (
                sql_objective(&x, &seq, &theta, &cfg, &P, false),
                sql_objective(&w, &seq, &theta, &cfg, &P, false),
            ),
        ];
        for (a, b) in pairs {
            assert_relative_eq!(a, b, max_relative = 1e-9);
        }
    }

    #[test]
    fn sequence_shift_repeats_last() {
        let s = ActionSequence {
            actions: vec![Action::new(1., 1.), Action::new(2., 2.), Action::new(3., 3.)],
        };
        assert_eq!(
            s.shifted().actions,
            vec![Action::new(2., 2.), Action::new(3., 3.), Action::new(3., 3.)]
        );
        assert_eq!(ActionSequence::from_flat(&s.flatten()), s);
    }

    /// Minimum over a 5-level grid per action component, N = 2 (625 sequences).
    fn grid_minimum(x: &RobotState, cfg: &HorizonConfig, cost: &StageCostConfig, b: &ActuatorBounds) -> f64 {
        let levels = |m: f64| [-m, -m / 2.0, 0.0, m / 2.0, m];
        let mut best = f64::INFINITY;
        for f1 in levels(b.force_max) {
            for m1 in levels(b.torque_max) {
                for f2 in levels(b.force_max) {
                    for m2 in levels(b.torque_max) {
                        let seq = [Action::new(f1, m1), Action::new(f2, m2)];
                        best = best.min(mpc_objective(x, &seq, cfg, cost, &P));
                    }
                }
            }
        }
        best
    }

    #[test]
    fn optimizer_beats_grid_search() {
        let cost = StageCostConfig::default();
        let bounds = ActuatorBounds::default();
        let cfg = HorizonConfig {
            delta: 0.5,
            horizon: 3,
            ..Default::default()
        };
        let grid_cfg = HorizonConfig { horizon: 2, ..cfg };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let x = RobotState::new(
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            // At N = 2 only u_1 reaches the predicted state, through v and ω.
            let grid = grid_minimum(&x, &grid_cfg, &cost, &bounds);
            let mut obj = |s: &[Action]| mpc_objective(&x, s, &grid_cfg, &cost, &P);
            let (seq, res) = optimize_actions(
                &NelderMead::default(),
                &mut obj,
                &ActionSequence::zeros(2),
                &bounds,
                400,
            );
            assert!(seq.within(&bounds));
            // Slack: one grid cell of action penalty.
            let slack = cost.weights[5] * (bounds.force_max / 2.0).powi(2)
                + cost.weights[6] * (bounds.torque_max / 2.0).powi(2);
            assert!(res.value <= grid + slack, "{} > {}", res.value, grid);
        }
    }

    #[test]
    fn agents_stay_in_bounds_and_mpc_never_learns() {
        for kind in AgentKind::ALL {
            let mut agent = Agent::new(AgentConfig::new(kind, hc(3))).unwrap();
            let mut x = RobotState::new(5.0, 0.0, 0.0, 0.0, 0.0);
            for _ in 0..5 {
                let u = agent.step(&x);
                assert!(agent.config().bounds.contains(&u));
                x = euler_update(0.1, x, &u, &P);
            }
            let t = agent.telemetry();
            assert_eq!(t.steps, 5);
            if kind == AgentKind::Mpc {
                assert_eq!(t.critic_updates, 0);
                assert!(agent.buffer().is_empty());
            } else {
                assert_eq!(t.critic_updates, 3);
                assert_eq!(agent.buffer().len(), 3);
            }
        }
    }

    #[test]
    fn agent_is_deterministic() {
        for kind in AgentKind::ALL {
            let run = || {
                let mut agent = Agent::new(AgentConfig::new(kind, hc(3))).unwrap();
                let mut x = RobotState::new(0.0, 5.0, 1.5, 0.0, 0.0);
                let mut out = Vec::new();
                for _ in 0..8 {
                    let u = agent.step(&x);
                    out.push(u);
                    x = euler_update(0.1, x, &u, &P);
                }
                out
            };
            let (a, b) = (run(), run());
            for (p, q) in a.iter().zip(&b) {
                assert_eq!(p.force.to_bits(), q.force.to_bits());
                assert_eq!(p.torque.to_bits(), q.torque.to_bits());
            }
        }
    }

    #[test]
    fn agent_kind_parsing() {
        assert_eq!("sql".parse::<AgentKind>().unwrap(), AgentKind::Sql);
        assert_eq!(AgentKind::Rql.to_string(), "RQL");
        assert!("ppo".parse::<AgentKind>().is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = AgentConfig::new(AgentKind::Mpc, hc(0));
        assert!(c.validate().is_err());
        c.horizon.horizon = 2;
        c.horizon.gamma = 0.0;
        assert!(c.validate().is_err());
        c.horizon.gamma = 1.0;
        assert!(c.validate().is_ok());
    }
}
