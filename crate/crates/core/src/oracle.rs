//! Exhaustive finite-MDP machinery for checking stacked-Q identities.
//!
//! Everything here is brute force on deterministic MDPs small enough to
//! enumerate every action sequence.

use rand::Rng;

use crate::error::{Error, Result};

pub const MAX_STATES: usize = 6;
pub const MAX_ACTIONS: usize = 4;
pub const MAX_HORIZON: usize = 5;

/// Deterministic finite MDP with non-negative costs.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMdp {
    next: Vec<Vec<usize>>,
    cost: Vec<Vec<f64>>,
}

impl FiniteMdp {
    /// `next[x][u]` is the successor of `x` under `u`; `cost[x][u]` its stage cost.
    pub fn new(next: Vec<Vec<usize>>, cost: Vec<Vec<f64>>) -> Result<Self> {
        let n = next.len();
        if n == 0 || n > MAX_STATES {
            return Err(Error::param("n_states", format!("must be in 1..={MAX_STATES}, got {n}")));
        }
        if cost.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: cost.len(),
            });
        }
        let m = next[0].len();
        if m == 0 || m > MAX_ACTIONS {
            return Err(Error::param("n_actions", format!("must be in 1..={MAX_ACTIONS}, got {m}")));
        }
        for (row, crow) in next.iter().zip(&cost) {
            if row.len() != m || crow.len() != m {
                return Err(Error::Dimension {
                    expected: m,
                    got: row.len().min(crow.len()),
                });
            }
            if row.iter().any(|t| *t >= n) {
                return Err(Error::param("next", "transition target out of range"));
            }
            if crow.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
                return Err(Error::param("cost", "costs must be finite and >= 0"));
            }
        }
        Ok(Self { next, cost })
    }

    /// Random instance with `1..=max_states` states and `1..=max_actions` actions,
    /// uniform successors and costs uniform on `[0, 1)`.
    pub fn random<R: Rng>(rng: &mut R, max_states: usize, max_actions: usize) -> Self {
        let n = rng.random_range(1..=max_states.clamp(1, MAX_STATES));
        let m = rng.random_range(1..=max_actions.clamp(1, MAX_ACTIONS));
        let next = (0..n)
            .map(|_| (0..m).map(|_| rng.random_range(0..n)).collect())
            .collect();
        let cost = (0..n)
            .map(|_| (0..m).map(|_| rng.random::<f64>()).collect())
            .collect();
        Self { next, cost }
    }

    pub fn n_states(&self) -> usize {
        self.next.len()
    }

    pub fn n_actions(&self) -> usize {
        self.next[0].len()
    }

    pub fn step(&self, x: usize, u: usize) -> usize {
        self.next[x][u]
    }

    pub fn cost(&self, x: usize, u: usize) -> f64 {
        self.cost[x][u]
    }

    /// States with a zero-cost self loop.
    pub fn absorbing_states(&self) -> Vec<usize> {
        (0..self.n_states())
            .filter(|&x| (0..self.n_actions()).any(|u| self.next[x][u] == x && self.cost[x][u] == 0.0))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    q: Vec<Vec<f64>>,
}

impl QTable {
    pub fn from_rows(q: Vec<Vec<f64>>) -> Self {
        Self { q }
    }

    pub fn get(&self, x: usize, u: usize) -> f64 {
        self.q[x][u]
    }

    /// `(argmin_u Q(x, u), min_u Q(x, u))`, ties broken towards the lowest action index.
    pub fn best(&self, x: usize) -> (usize, f64) {
        self.q[x]
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |(bu, bq), (u, q)| if *q < bq { (u, *q) } else { (bu, bq) })
    }

    pub fn value(&self, x: usize) -> f64 {
        self.best(x).1
    }

    /// `max |Q(x,u) − ρ(x,u) − γ min_v Q(x', v)|`
    pub fn bellman_residual(&self, mdp: &FiniteMdp, gamma: f64) -> f64 {
        let mut r = 0.0f64;
        for x in 0..mdp.n_states() {
            for u in 0..mdp.n_actions() {
                let target = mdp.cost(x, u) + gamma * self.value(mdp.step(x, u));
                r = r.max((self.q[x][u] - target).abs());
            }
        }
        r
    }
}

/// Optimal Q-function of the infinite-horizon discounted (or, for `γ = 1`,
/// total-cost) problem.
///
/// `γ = 1` is only accepted when a zero-cost absorbing state exists and every
/// state can reach one; otherwise the total cost diverges.
pub fn exact_q(mdp: &FiniteMdp, gamma: f64) -> Result<QTable> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::param("gamma", format!("must lie in (0, 1], got {gamma}")));
    }
    let n = mdp.n_states();
    let m = mdp.n_actions();
    let backup = |v: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|x| {
                (0..m)
                    .map(|u| mdp.cost(x, u) + gamma * v[mdp.step(x, u)])
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    };

    let v = if gamma < 1.0 {
        let mut v = vec![0.0; n];
        for _ in 0..1_000_000 {
            let nv = backup(&v);
            let change = nv.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            v = nv;
            if change <= 1e-15 * (1.0 + v.iter().fold(0.0f64, |a, b| a.max(b.abs()))) {
                break;
            }
        }
        v
    } else {
        let absorbing = mdp.absorbing_states();
        if absorbing.is_empty() {
            return Err(Error::param(
                "gamma",
                "gamma = 1 needs a zero-cost absorbing state, total cost diverges otherwise",
            ));
        }
        // Shortest path to the absorbing set (Bellman-Ford, non-negative costs).
        let mut v = vec![f64::INFINITY; n];
        for a in &absorbing {
            v[*a] = 0.0;
        }
        for _ in 0..n {
            let nv = backup(&v);
            v = nv.iter().zip(&v).map(|(a, b)| a.min(*b)).collect();
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::param(
                "gamma",
                "gamma = 1 but some state cannot reach an absorbing state",
            ));
        }
        v
    };

    let q = (0..n)
        .map(|x| {
            (0..m)
                .map(|u| mdp.cost(x, u) + gamma * v[mdp.step(x, u)])
                .collect()
        })
        .collect();
    Ok(QTable { q })
}

fn check_horizon(mdp: &FiniteMdp, x0: usize, horizon: usize) -> Result<()> {
    if horizon == 0 || horizon > MAX_HORIZON {
        return Err(Error::param("N", format!("must be in 1..={MAX_HORIZON}, got {horizon}")));
    }
    if x0 >= mdp.n_states() {
        return Err(Error::param("x0", "initial state out of range"));
    }
    Ok(())
}

/// Stacked Q along the trajectory generated by `actions` from `x0`.
pub fn stacked_q(mdp: &FiniteMdp, q: &QTable, x0: usize, actions: &[usize]) -> f64 {
    let mut x = x0;
    let mut total = 0.0;
    for &u in actions {
        total += q.get(x, u);
        x = mdp.step(x, u);
    }
    total
}

/// Signature of a stacked objective, so campaigns can be run against a mutated one.
pub type StackedObjective = fn(&FiniteMdp, &QTable, usize, &[usize]) -> f64;

/// Minimum of `objective` over all `n_actions^N` sequences, first minimizer in
/// lexicographic order.
pub fn stacked_min_with(
    mdp: &FiniteMdp,
    q: &QTable,
    x0: usize,
    horizon: usize,
    objective: StackedObjective,
) -> Result<(f64, Vec<usize>)> {
    check_horizon(mdp, x0, horizon)?;
    let m = mdp.n_actions();
    let total = m.pow(horizon as u32);
    let mut seq = vec![0usize; horizon];
    let mut best = (f64::INFINITY, seq.clone());
    for code in 0..total {
        let mut c = code;
        for slot in seq.iter_mut().rev() {
            *slot = c % m;
            c /= m;
        }
        let val = objective(mdp, q, x0, &seq);
        if val < best.0 {
            best = (val, seq.clone());
        }
    }
    Ok(best)
}

/// Exhaustive minimum of the stacked Q-function `Σ_{i=1}^N Q(x_i, u_i)`.
pub fn stacked_min(mdp: &FiniteMdp, q: &QTable, x0: usize, horizon: usize) -> Result<(f64, Vec<usize>)> {
    stacked_min_with(mdp, q, x0, horizon, stacked_q)
}

/// The same minimum by backward dynamic programming over remaining slots.
pub fn stacked_min_dp(mdp: &FiniteMdp, q: &QTable, x0: usize, horizon: usize) -> Result<f64> {
    check_horizon(mdp, x0, horizon)?;
    let n = mdp.n_states();
    let mut w = vec![0.0; n];
    for _ in 0..horizon {
        w = (0..n)
            .map(|x| {
                (0..mdp.n_actions())
                    .map(|u| q.get(x, u) + w[mdp.step(x, u)])
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
    }
    Ok(w[x0])
}

/// Per-step minima along the greedy trajectory: `(Σ min_u Q(x*_i, u), actions)`.
pub fn greedy_sum(mdp: &FiniteMdp, q: &QTable, x0: usize, horizon: usize) -> Result<(f64, Vec<usize>)> {
    check_horizon(mdp, x0, horizon)?;
    let mut x = x0;
    let mut total = 0.0;
    let mut actions = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let (u, v) = q.best(x);
        total += v;
        actions.push(u);
        x = mdp.step(x, u);
    }
    Ok((total, actions))
}

pub const EQUALITY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct EqualityCheck {
    /// Exhaustive `min Σ Q(x_i, u_i)` over sequences.
    pub stacked_min: f64,
    pub stacked_sequence: Vec<usize>,
    /// `Σ min_u Q(x*_i, u)` along the greedy trajectory.
    pub sum_of_minima: f64,
    pub greedy_sequence: Vec<usize>,
    pub holds: bool,
}

impl EqualityCheck {
    pub fn gap(&self) -> f64 {
        self.sum_of_minima - self.stacked_min
    }
}

/// Compares the stacked-Q minimum with the sum of per-step minima.
pub fn equality_check(mdp: &FiniteMdp, q: &QTable, x0: usize, horizon: usize) -> Result<EqualityCheck> {
    equality_check_with(mdp, q, x0, horizon, stacked_q)
}

pub fn equality_check_with(
    mdp: &FiniteMdp,
    q: &QTable,
    x0: usize,
    horizon: usize,
    objective: StackedObjective,
) -> Result<EqualityCheck> {
    let (stacked, stacked_sequence) = stacked_min_with(mdp, q, x0, horizon, objective)?;
    let (sum_of_minima, greedy_sequence) = greedy_sum(mdp, q, x0, horizon)?;
    let holds = (stacked - sum_of_minima).abs() <= EQUALITY_TOLERANCE;
    Ok(EqualityCheck {
        stacked_min: stacked,
        stacked_sequence,
        sum_of_minima,
        greedy_sequence,
        holds,
    })
}

/// One failed instance of a campaign.
#[derive(Debug, Clone)]
pub struct Counterexample {
    pub instance: usize,
    pub mdp: FiniteMdp,
    pub gamma: f64,
    pub x0: usize,
    pub horizon: usize,
    pub check: EqualityCheck,
}

impl std::fmt::Display for Counterexample {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "instance {}: {} states, {} actions, gamma {:.4}, x0 {}, N {}",
            self.instance,
            self.mdp.n_states(),
            self.mdp.n_actions(),
            self.gamma,
            self.x0,
            self.horizon
        )?;
        writeln!(f, "  next = {:?}", self.mdp.next)?;
        writeln!(f, "  cost = {:?}", self.mdp.cost)?;
        writeln!(
            f,
            "  stacked min {:.12} via {:?}; sum of minima {:.12} via greedy {:?}",
            self.check.stacked_min,
            self.check.stacked_sequence,
            self.check.sum_of_minima,
            self.check.greedy_sequence
        )
    }
}

#[derive(Debug, Clone, Default)]
pub struct CampaignReport {
    pub instances: usize,
    pub failures: Vec<Counterexample>,
    /// Instances where the exhaustive minimum exceeded the greedy sum
    /// (impossible for a correct enumeration, since greedy is one candidate).
    pub enumeration_above_greedy: usize,
    /// Instances where enumeration and dynamic programming disagreed.
    pub enumeration_dp_mismatch: usize,
    pub max_gap: f64,
}

impl CampaignReport {
    pub fn all_hold(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Runs the stacked-Q equality check on `instances` random deterministic MDPs
/// (`≤ max_states` states, `≤ max_actions` actions, `N ≤ max_horizon`,
/// `γ ∈ [0.5, 0.99]`).
pub fn equality_campaign<R: Rng>(
    rng: &mut R,
    instances: usize,
    max_states: usize,
    max_actions: usize,
    max_horizon: usize,
    objective: StackedObjective,
) -> CampaignReport {
    let mut report = CampaignReport::default();
    for instance in 0..instances {
        let mdp = FiniteMdp::random(rng, max_states, max_actions);
        let gamma = rng.random_range(0.5..=0.99);
        let horizon = rng.random_range(1..=max_horizon.clamp(1, MAX_HORIZON));
        let x0 = rng.random_range(0..mdp.n_states());
        let q = exact_q(&mdp, gamma).expect("gamma < 1 always converges");
        let check = equality_check_with(&mdp, &q, x0, horizon, objective).expect("validated sizes");
        let dp = stacked_min_dp(&mdp, &q, x0, horizon).expect("validated sizes");

        report.instances += 1;
        if check.stacked_min > check.sum_of_minima + EQUALITY_TOLERANCE {
            report.enumeration_above_greedy += 1;
        }
        if (dp - stacked_q(&mdp, &q, x0, &check.stacked_sequence)).abs() > EQUALITY_TOLERANCE {
            report.enumeration_dp_mismatch += 1;
        }
        report.max_gap = report.max_gap.max(check.gap().abs());
        if !check.holds {
            report.failures.push(Counterexample {
                instance,
                mdp,
                gamma,
                x0,
                horizon,
                check,
            });
        }
    }
    report
}
