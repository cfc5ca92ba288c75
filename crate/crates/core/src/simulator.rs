//! Sample-and-hold closed loop: the agent acts every δ seconds and the plant
//! integrates with the action frozen in between.

use std::f64::consts::PI;
use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{stage_cost, Controller, StageCostConfig};
use crate::dynamics::{rk4_update, wrap_angle, Action, RobotParams, RobotState};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    /// Episode length in seconds.
    pub duration: f64,
    /// Sampling time δ in seconds.
    pub delta: f64,
    /// RK4 substeps per sampling interval.
    pub substeps: usize,
    pub success_radius: f64,
    /// Heading tolerance in radians.
    pub success_angle: f64,
    /// Desired heading at the origin.
    pub target_heading: f64,
    pub start_radius: f64,
    /// When set, parking counts only if the robot is inside the target region
    /// at the last sampling instant, instead of on first entry.
    pub require_final_parked: bool,
    pub seed: u64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            duration: 600.0,
            delta: 0.1,
            substeps: 10,
            success_radius: 0.5,
            success_angle: 5.0_f64.to_radians(),
            target_heading: 0.0,
            start_radius: 5.0,
            require_final_parked: false,
            seed: 0,
        }
    }
}

impl EpisodeConfig {
    /// Number of sampling instants `t_k = kδ` with `t_k < duration`, so a
    /// duration that is not a multiple of δ is rounded up to the next sample.
    pub fn steps(&self) -> Result<usize> {
        let ratio = self.duration / self.delta;
        if !ratio.is_finite() || ratio < 0.0 {
            return Err(Error::param("duration", "must be finite and >= 0"));
        }
        Ok((ratio - 1e-9).ceil().max(0.0) as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(Error::param("delta", "must be > 0"));
        }
        if !(self.duration.is_finite() && self.duration >= 0.0) {
            return Err(Error::param("duration", "must be >= 0"));
        }
        if self.substeps == 0 {
            return Err(Error::param("substeps", "must be >= 1"));
        }
        for (name, v) in [
            ("success_radius", self.success_radius),
            ("success_angle", self.success_angle),
            ("start_radius", self.start_radius),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::param(name, "must be > 0"));
            }
        }
        Ok(())
    }

    pub fn is_parked(&self, s: &RobotState) -> bool {
        s.distance_to_origin() <= self.success_radius
            && wrap_angle(s.alpha - self.target_heading).abs() <= self.success_angle
    }
}

/// One sampling instant of a trajectory log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub alpha: f64,
    pub v: f64,
    pub omega: f64,
    #[serde(rename = "F")]
    pub force: f64,
    #[serde(rename = "M")]
    pub torque: f64,
    pub stage_cost: f64,
}

impl TrajectoryRow {
    pub fn state(&self) -> RobotState {
        RobotState::new(self.x, self.y, self.alpha, self.v, self.omega)
    }

    pub fn action(&self) -> Action {
        Action::new(self.force, self.torque)
    }
}

pub const TRAJECTORY_HEADER: [&str; 9] = ["t", "x", "y", "alpha", "v", "omega", "F", "M", "stage_cost"];

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    /// `Σ ρ(x_k, u_k) δ` over sampling instants.
    pub accumulated_cost: f64,
    pub parked: bool,
    pub first_park_time: Option<f64>,
    pub diverged: bool,
    pub trajectory: Vec<TrajectoryRow>,
    pub wall_clock: f64,
}

impl EpisodeResult {
    pub fn write_trajectory_csv<W: Write>(&self, w: W) -> Result<()> {
        write_trajectory_csv(&self.trajectory, w)
    }
}

pub fn write_trajectory_csv<W: Write>(rows: &[TrajectoryRow], w: W) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    wtr.write_record(TRAJECTORY_HEADER)?;
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_trajectory_csv<R: std::io::Read>(r: R) -> Result<Vec<TrajectoryRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if header != TRAJECTORY_HEADER {
        return Err(Error::Config(format!("unexpected trajectory header {header:?}")));
    }
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Start on the circle of `radius` at polar angle `beta`, heading radially outwards, at rest.
pub fn initial_condition_at(beta: f64, radius: f64) -> RobotState {
    RobotState::new(radius * beta.cos(), radius * beta.sin(), beta, 0.0, 0.0)
}

/// Draws the polar angle uniformly on `[0, 2π)` from a seeded stream.
pub fn sample_initial_condition(seed: u64, radius: f64) -> RobotState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beta = rng.random_range(0.0..2.0 * PI);
    initial_condition_at(beta, radius)
}

/// Runs an episode from the seeded initial condition.
pub fn run_episode(
    agent: &mut dyn Controller,
    cfg: &EpisodeConfig,
    plant: &RobotParams,
    cost: &StageCostConfig,
) -> Result<EpisodeResult> {
    let x0 = sample_initial_condition(cfg.seed, cfg.start_radius);
    run_episode_from(agent, x0, cfg, plant, cost)
}

pub fn run_episode_from(
    agent: &mut dyn Controller,
    x0: RobotState,
    cfg: &EpisodeConfig,
    plant: &RobotParams,
    cost: &StageCostConfig,
) -> Result<EpisodeResult> {
    cfg.validate()?;
    plant.validate()?;
    cost.validate()?;
    let steps = cfg.steps()?;
    let h = cfg.delta / cfg.substeps as f64;
    let started = Instant::now();

    let mut x = x0;
    let mut accumulated = 0.0;
    let mut first_park_time = None;
    let mut parked_now = false;
    let mut diverged = false;
    let mut trajectory = Vec::with_capacity(steps);

    for k in 0..steps {
        if !x.is_finite() {
            diverged = true;
            break;
        }
        let t = k as f64 * cfg.delta;
        parked_now = cfg.is_parked(&x);
        if parked_now && first_park_time.is_none() {
            first_park_time = Some(t);
        }
        let u = agent.act(&x);
        if !u.is_finite() {
            diverged = true;
            break;
        }
        let rho = stage_cost(&x, &u, cost);
        accumulated += rho * cfg.delta;
        trajectory.push(TrajectoryRow {
            t,
            x: x.x,
            y: x.y,
            alpha: x.alpha,
            v: x.v,
            omega: x.omega,
            force: u.force,
            torque: u.torque,
            stage_cost: rho,
        });
        for _ in 0..cfg.substeps {
            x = rk4_update(h, x, &u, plant);
        }
    }
    if !diverged && !x.is_finite() {
        diverged = true;
    }

    let parked = !diverged
        && if cfg.require_final_parked {
            parked_now
        } else {
            first_park_time.is_some()
        };
    Ok(EpisodeResult {
        accumulated_cost: accumulated,
        parked,
        first_park_time: if parked { first_park_time } else { None },
        diverged,
        trajectory,
        wall_clock: started.elapsed().as_secs_f64(),
    })
}
