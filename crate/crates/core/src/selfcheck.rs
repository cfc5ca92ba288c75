//! Numerical self-checks: stacked-Q equality on random finite MDPs, empirical
//! integrator orders, and exact recovery of planted critic weights.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::critic::{
    critic_loss_gradient, critic_loss_raw, features, update_critic, CriticSettings, CriticWeights, ReplayBuffer,
    Transition, WeightBounds, N_WEIGHTS, Z_DIM,
};
use crate::dynamics::{euler_update, rk4_update, Action, RobotParams, RobotState};
use crate::oracle::{equality_campaign, CampaignReport, StackedObjective};

pub const EULER_ORDER: (f64, f64) = (1.0, 0.2);
pub const RK4_ORDER: (f64, f64) = (4.0, 0.5);
pub const RECOVERY_TOLERANCE: f64 = 1e-6;
pub const GRADIENT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

fn timed<F: FnOnce() -> (bool, String)>(name: &'static str, f: F) -> CheckOutcome {
    let t = Instant::now();
    let (passed, detail) = f();
    CheckOutcome {
        name,
        passed,
        detail,
        seconds: t.elapsed().as_secs_f64(),
    }
}

/// 500 instances, ≤5 states, ≤3 actions, N ≤ 4.
pub fn stacked_q_campaign(seed: u64, objective: StackedObjective) -> CampaignReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    equality_campaign(&mut rng, 500, 5, 3, 4, objective)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderEstimate {
    /// Median over samples of `log2(err(h) / err(h/2))`.
    pub euler: f64,
    pub rk4: f64,
}

fn integrate<F: Fn(f64, RobotState) -> RobotState>(x0: RobotState, steps: usize, h: f64, f: F) -> RobotState {
    (0..steps).fold(x0, |x, _| f(h, x))
}

fn max_abs_diff(a: RobotState, b: RobotState) -> f64 {
    a.to_array()
        .iter()
        .zip(b.to_array())
        .map(|(p, q)| (p - q).abs())
        .fold(0.0, f64::max)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Global error over one second of held action, against RK4 at `h/64`.
pub fn integrator_orders(seed: u64, samples: usize) -> OrderEstimate {
    let plant = RobotParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (t_end, coarse) = (1.0, 16usize);
    let mut euler = Vec::with_capacity(samples);
    let mut rk4 = Vec::with_capacity(samples);
    for _ in 0..samples {
        let x0 = RobotState::new(
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
            rng.random_range(-3.0..3.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let u = Action::new(rng.random_range(-10.0..10.0), rng.random_range(-2.0..2.0));
        let fine = coarse * 64;
        let reference = integrate(x0, fine, t_end / fine as f64, |h, x| rk4_update(h, x, &u, &plant));
        let err = |steps: usize, rk: bool| {
            let hh = t_end / steps as f64;
            let x = if rk {
                integrate(x0, steps, hh, |h, x| rk4_update(h, x, &u, &plant))
            } else {
                integrate(x0, steps, hh, |h, x| euler_update(h, x, &u, &plant))
            };
            max_abs_diff(x, reference)
        };
        euler.push((err(coarse, false) / err(2 * coarse, false)).log2());
        rk4.push((err(coarse, true) / err(2 * coarse, true)).log2());
    }
    OrderEstimate {
        euler: median(euler),
        rk4: median(rk4),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoveryReport {
    pub transitions: usize,
    /// `max |θ − θ*|`.
    pub max_error: f64,
    /// Largest `|g_analytic − g_fd| / max(1, |g_fd|)` over coordinates.
    pub gradient_error: f64,
}

fn random_state<R: Rng>(rng: &mut R) -> RobotState {
    RobotState::new(
        rng.random_range(-2.0..2.0),
        rng.random_range(-2.0..2.0),
        rng.random_range(-1.5..1.5),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    )
}

fn random_action<R: Rng>(rng: &mut R) -> Action {
    Action::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0))
}

/// Plants θ* (positive definite, interior to the default box), builds a buffer
/// whose stage costs are exactly consistent with θ*, and solves the TD fit.
pub fn critic_recovery(seed: u64, transitions: usize) -> RecoveryReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bounds = WeightBounds::default();
    let gamma = 0.9;

    // S = AᵀA + I is positive definite, so θ*·φ > 0.
    let a: Vec<[f64; Z_DIM]> = (0..Z_DIM)
        .map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)))
        .collect();
    let mut s = [[0.0; Z_DIM]; Z_DIM];
    for i in 0..Z_DIM {
        for j in 0..Z_DIM {
            s[i][j] = (0..Z_DIM).map(|k| a[k][i] * a[k][j]).sum::<f64>() + if i == j { 1.0 } else { 0.0 };
        }
    }
    let star = CriticWeights::from_symmetric(&s, bounds);
    let minus = CriticWeights::new(star.as_slice().iter().map(|w| 0.5 * w).collect(), bounds)
        .expect("half of an interior point is interior");

    let settings = CriticSettings {
        buffer_size: transitions,
        gamma,
        ..CriticSettings::default()
    };
    let mut buffer = ReplayBuffer::new(transitions).expect("positive capacity");
    while buffer.len() < transitions {
        let (xp, up, x, u) = (
            random_state(&mut rng),
            random_action(&mut rng),
            random_state(&mut rng),
            random_action(&mut rng),
        );
        let dot = |w: &CriticWeights, s: &RobotState, a: &Action| {
            w.as_slice().iter().zip(features(s, a)).map(|(p, q)| p * q).sum::<f64>()
        };
        let rho = dot(&star, &xp, &up) - gamma * dot(&minus, &x, &u);
        if let Ok(t) = Transition::new(xp, up, x, u, rho) {
            buffer.push(t);
        }
    }

    let fit = update_critic(&buffer, &minus, &settings).expect("non-empty buffer");
    let max_error = fit
        .weights
        .as_slice()
        .iter()
        .zip(star.as_slice())
        .map(|(p, q)| (p - q).abs())
        .fold(0.0, f64::max);

    // Central differences at a random point.
    let probe: Vec<f64> = (0..N_WEIGHTS).map(|_| rng.random_range(-1.0..1.0)).collect();
    let probe_w = CriticWeights::new(probe.clone(), bounds).expect("inside the box");
    let g = critic_loss_gradient(&probe_w, &buffer, &minus, gamma);
    let mut gradient_error = 0.0f64;
    for i in 0..N_WEIGHTS {
        let step = 1e-4;
        let mut hi = probe.clone();
        let mut lo = probe.clone();
        hi[i] += step;
        lo[i] -= step;
        let f = |t: &[f64]| critic_loss_raw(t, &buffer, minus.as_slice(), gamma).expect("non-empty");
        let fd = (f(&hi) - f(&lo)) / (2.0 * step);
        gradient_error = gradient_error.max((g[i] - fd).abs() / fd.abs().max(1.0));
    }
    RecoveryReport {
        transitions,
        max_error,
        gradient_error,
    }
}

/// Runs every check with fixed seeds.
pub fn run_all() -> Vec<CheckOutcome> {
    vec![
        timed("stacked-Q equality (500 random MDPs)", || {
            let r = stacked_q_campaign(2024, crate::oracle::stacked_q);
            let mut detail = format!(
                "{} of {} instances violate the equality, max gap {:.3e}",
                r.failures.len(),
                r.instances,
                r.max_gap
            );
            if let Some(c) = r.failures.first() {
                detail.push_str("\nfirst counterexample:\n");
                detail.push_str(&c.to_string());
            }
            (r.all_hold(), detail)
        }),
        timed("integrator orders", || {
            let o = integrator_orders(11, 50);
            let ok = (o.euler - EULER_ORDER.0).abs() <= EULER_ORDER.1 && (o.rk4 - RK4_ORDER.0).abs() <= RK4_ORDER.1;
            (ok, format!("euler {:.3}, rk4 {:.3}", o.euler, o.rk4))
        }),
        timed("critic recovery", || {
            let r = critic_recovery(5, 40);
            let ok = r.max_error < RECOVERY_TOLERANCE && r.gradient_error < GRADIENT_TOLERANCE;
            (
                ok,
                format!(
                    "{} transitions, max weight error {:.3e}, gradient error {:.3e}",
                    r.transitions, r.max_error, r.gradient_error
                ),
            )
        }),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orders_are_near_nominal() {
        let o = integrator_orders(3, 20);
        assert!((o.euler - 1.0).abs() < 0.2, "{o:?}");
        assert!((o.rk4 - 4.0).abs() < 0.5, "{o:?}");
    }

    #[test]
    fn recovery_is_exact() {
        let r = critic_recovery(1, 40);
        assert!(r.max_error < 1e-6, "{r:?}");
        assert!(r.gradient_error < 1e-6, "{r:?}");
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
