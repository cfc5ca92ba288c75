//! TOML run configuration. Every key is optional; missing keys take the
//! defaults below, and unknown keys are rejected.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use predictive_rl::agents::{AgentConfig, AgentKind, CriticInit, HorizonConfig, StageCostConfig, ONLINE_RIDGE};
use predictive_rl::critic::{CriticSettings, WeightBounds};
use predictive_rl::dynamics::{ActuatorBounds, RobotParams};
use predictive_rl::experiments::{CiMethod, Preset, SweepGrid, SweepSettings};
use predictive_rl::optimize::NelderMead;
use predictive_rl::simulator::EpisodeConfig;
use serde::{Deserialize, Serialize};

/// The full default file, shipped in the repository as `config/default.toml`.
pub const DEFAULT_CONFIG: &str = include_str!("../../../config/default.toml");

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub output_dir: Option<PathBuf>,
    pub master_seed: u64,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    pub plant: PlantSection,
    pub cost: CostSection,
    pub actuators: ActuatorSection,
    pub critic: CriticSection,
    pub agent: AgentSection,
    pub optimizer: OptimizerSection,
    pub episode: EpisodeSection,
    pub sweep: SweepSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantSection {
    pub mass: f64,
    pub inertia: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostSection {
    /// Diagonal of R over (x, y, alpha, v, omega, F, M).
    pub weights: [f64; 7],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActuatorSection {
    pub force_max: f64,
    pub torque_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CriticSection {
    pub buffer_size: usize,
    pub gamma: f64,
    pub ridge: f64,
    pub weight_lower: f64,
    pub weight_upper: f64,
    pub max_box_sweeps: usize,
    pub init: CriticInit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentSection {
    /// Discount inside the actor objectives.
    pub gamma: f64,
    pub evaluations_per_slot: usize,
    pub sql_discounted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub initial_step: f64,
    pub f_tol: f64,
    pub x_tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeSection {
    pub duration: f64,
    pub substeps: usize,
    pub success_radius: f64,
    pub success_angle_deg: f64,
    pub target_heading: f64,
    pub start_radius: f64,
    pub require_final_parked: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub agents: Vec<AgentKind>,
    pub runs: usize,
    pub ci: CiMethod,
    /// Fixed values for the axes a preset does not vary.
    pub delta: f64,
    pub s: u32,
    #[serde(rename = "N")]
    pub horizon: usize,
    pub sampling_deltas: Vec<f64>,
    pub step_multipliers: Vec<u32>,
    pub horizons: Vec<usize>,
    /// `sweep` exits nonzero when more than this fraction of episodes diverge.
    pub max_diverged_fraction: f64,
}

impl Default for PlantSection {
    fn default() -> Self {
        let p = RobotParams::default();
        Self {
            mass: p.mass,
            inertia: p.inertia,
        }
    }
}

impl Default for CostSection {
    fn default() -> Self {
        Self {
            weights: StageCostConfig::default().weights,
        }
    }
}

impl Default for ActuatorSection {
    fn default() -> Self {
        let b = ActuatorBounds::default();
        Self {
            force_max: b.force_max,
            torque_max: b.torque_max,
        }
    }
}

impl Default for CriticSection {
    fn default() -> Self {
        let c = CriticSettings::default();
        Self {
            buffer_size: c.buffer_size,
            gamma: c.gamma,
            ridge: ONLINE_RIDGE,
            weight_lower: c.weight_bounds.lower,
            weight_upper: c.weight_bounds.upper,
            max_box_sweeps: c.max_box_sweeps,
            init: CriticInit::StageCost,
        }
    }
}

impl Default for AgentSection {
    fn default() -> Self {
        Self {
            gamma: HorizonConfig::default().gamma,
            evaluations_per_slot: 100,
            sql_discounted: false,
        }
    }
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let o = NelderMead::default();
        Self {
            initial_step: o.initial_step,
            f_tol: o.f_tol,
            x_tol: o.x_tol,
        }
    }
}

impl Default for EpisodeSection {
    fn default() -> Self {
        let e = EpisodeConfig::default();
        Self {
            duration: e.duration,
            substeps: e.substeps,
            success_radius: e.success_radius,
            success_angle_deg: 5.0,
            target_heading: e.target_heading,
            start_radius: e.start_radius,
            require_final_parked: e.require_final_parked,
        }
    }
}

impl Default for SweepSection {
    fn default() -> Self {
        let g = SweepGrid::default();
        Self {
            agents: g.agents.clone(),
            runs: g.runs,
            ci: g.ci,
            delta: g.deltas[0],
            s: g.step_multipliers[0],
            horizon: g.horizons[0],
            sampling_deltas: Preset::Sampling.grid().deltas,
            step_multipliers: Preset::Step.grid().step_multipliers,
            horizons: Preset::Horizon.grid().horizons,
            max_diverged_fraction: 0.5,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| anyhow::anyhow!("{e}"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    /// Checks every value that the library would otherwise reject mid-run.
    pub fn validate(&self) -> Result<()> {
        self.agent_config(AgentKind::Mpc, self.fixed_horizon()).validate()?;
        self.episode_config(self.sweep.delta, 0).validate()?;
        self.grid(None).validate()?;
        if !(0.0..=1.0).contains(&self.sweep.max_diverged_fraction) {
            anyhow::bail!("sweep.max_diverged_fraction must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn fixed_horizon(&self) -> HorizonConfig {
        HorizonConfig {
            delta: self.sweep.delta,
            step_multiplier: self.sweep.s,
            horizon: self.sweep.horizon,
            gamma: self.agent.gamma,
        }
    }

    pub fn agent_config(&self, kind: AgentKind, horizon: HorizonConfig) -> AgentConfig {
        let mut cfg = AgentConfig::new(kind, horizon);
        cfg.cost = StageCostConfig {
            weights: self.cost.weights,
        };
        cfg.bounds = ActuatorBounds {
            force_max: self.actuators.force_max,
            torque_max: self.actuators.torque_max,
        };
        cfg.model = self.plant();
        cfg.critic = CriticSettings {
            buffer_size: self.critic.buffer_size,
            gamma: self.critic.gamma,
            ridge: self.critic.ridge,
            weight_bounds: WeightBounds {
                lower: self.critic.weight_lower,
                upper: self.critic.weight_upper,
            },
            max_box_sweeps: self.critic.max_box_sweeps,
        };
        cfg.critic_init = self.critic.init;
        cfg.evaluations_per_slot = self.agent.evaluations_per_slot;
        cfg.sql_discounted = self.agent.sql_discounted;
        cfg.optimizer = NelderMead {
            initial_step: self.optimizer.initial_step,
            f_tol: self.optimizer.f_tol,
            x_tol: self.optimizer.x_tol,
        };
        cfg
    }

    pub fn plant(&self) -> RobotParams {
        RobotParams {
            mass: self.plant.mass,
            inertia: self.plant.inertia,
        }
    }

    pub fn episode_config(&self, delta: f64, seed: u64) -> EpisodeConfig {
        EpisodeConfig {
            duration: self.episode.duration,
            delta,
            substeps: self.episode.substeps,
            success_radius: self.episode.success_radius,
            success_angle: self.episode.success_angle_deg.to_radians(),
            target_heading: self.episode.target_heading,
            start_radius: self.episode.start_radius,
            require_final_parked: self.episode.require_final_parked,
            seed,
        }
    }

    pub fn settings(&self) -> SweepSettings {
        SweepSettings {
            agent: self.agent_config(AgentKind::Mpc, self.fixed_horizon()),
            episode: self.episode_config(self.sweep.delta, 0),
            plant: self.plant(),
        }
    }

    /// Grid for a preset, or the single fixed point when `preset` is `None`.
    pub fn grid(&self, preset: Option<Preset>) -> SweepGrid {
        let mut g = SweepGrid {
            agents: self.sweep.agents.clone(),
            deltas: vec![self.sweep.delta],
            step_multipliers: vec![self.sweep.s],
            horizons: vec![self.sweep.horizon],
            runs: self.sweep.runs,
            master_seed: self.master_seed,
            duration: self.episode.duration,
            identical_seeds: false,
            ci: self.sweep.ci,
        };
        match preset {
            Some(Preset::Sampling) => g.deltas = self.sweep.sampling_deltas.clone(),
            Some(Preset::Step) => g.step_multipliers = self.sweep.step_multipliers.clone(),
            Some(Preset::Horizon) => g.horizons = self.sweep.horizons.clone(),
            None => {}
        }
        g
    }
}
