//! Hyper-parameter sweeps over sampling time, prediction step multiplier and
//! horizon, with per-point aggregation of accumulated cost and parking rate.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::agents::{Agent, AgentConfig, AgentKind, HorizonConfig};
use crate::dynamics::RobotParams;
use crate::error::{Error, Result};
use crate::simulator::{run_episode, EpisodeConfig};

/// Normal quantile for a two-sided 95% interval.
pub const Z_95: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiMethod {
    #[default]
    Normal,
    StudentT,
}

/// Which hyper-parameter a preset varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweptVariable {
    Delta,
    StepMultiplier,
    Horizon,
}

impl SweptVariable {
    pub fn column(&self) -> &'static str {
        match self {
            SweptVariable::Delta => "delta",
            SweptVariable::StepMultiplier => "s",
            SweptVariable::Horizon => "N",
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            SweptVariable::Delta => "sampling time [s]",
            SweptVariable::StepMultiplier => "prediction step multiplier",
            SweptVariable::Horizon => "prediction horizon N",
        }
    }

    pub fn value(&self, p: &GridPoint) -> f64 {
        match self {
            SweptVariable::Delta => p.delta,
            SweptVariable::StepMultiplier => p.step_multiplier as f64,
            SweptVariable::Horizon => p.horizon as f64,
        }
    }
}

/// Named sweep presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Sampling,
    Step,
    Horizon,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::Sampling, Preset::Step, Preset::Horizon];

    pub fn name(&self) -> &'static str {
        match self {
            Preset::Sampling => "sampling",
            Preset::Step => "step",
            Preset::Horizon => "horizon",
        }
    }

    pub fn swept(&self) -> SweptVariable {
        match self {
            Preset::Sampling => SweptVariable::Delta,
            Preset::Step => SweptVariable::StepMultiplier,
            Preset::Horizon => SweptVariable::Horizon,
        }
    }

    pub fn grid(&self) -> SweepGrid {
        let base = SweepGrid::default();
        match self {
            Preset::Sampling => SweepGrid {
                deltas: vec![0.05, 0.1, 0.2, 0.3, 0.5],
                ..base
            },
            Preset::Step => SweepGrid {
                step_multipliers: vec![1, 2, 3, 4, 5],
                ..base
            },
            Preset::Horizon => SweepGrid {
                horizons: vec![2, 3, 4, 5],
                ..base
            },
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown preset `{s}` (expected sampling, step or horizon)")))
    }
}

/// The three presets in order: sampling time, step multiplier, horizon.
pub fn default_grids() -> [SweepGrid; 3] {
    Preset::ALL.map(|p| p.grid())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepGrid {
    pub agents: Vec<AgentKind>,
    pub deltas: Vec<f64>,
    pub step_multipliers: Vec<u32>,
    pub horizons: Vec<usize>,
    pub runs: usize,
    pub master_seed: u64,
    /// Episode length in seconds.
    pub duration: f64,
    /// Give every run of a point the same seed; only useful for testing the
    /// aggregation.
    pub identical_seeds: bool,
    pub ci: CiMethod,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            agents: AgentKind::ALL.to_vec(),
            deltas: vec![0.1],
            step_multipliers: vec![1],
            horizons: vec![3],
            runs: 30,
            master_seed: 0,
            duration: 600.0,
            identical_seeds: false,
            ci: CiMethod::Normal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub delta: f64,
    pub step_multiplier: u32,
    pub horizon: usize,
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        if self.agents.is_empty() {
            return Err(Error::param("agents", "must list at least one agent"));
        }
        if self.deltas.is_empty() || self.step_multipliers.is_empty() || self.horizons.is_empty() {
            return Err(Error::param("grid", "every axis needs at least one value"));
        }
        if self.runs < 2 {
            return Err(Error::param("runs", "must be >= 2 for a confidence interval"));
        }
        if !(self.duration.is_finite() && self.duration >= 0.0) {
            return Err(Error::param("duration", "must be finite and >= 0"));
        }
        for &d in &self.deltas {
            if !(d.is_finite() && d > 0.0) {
                return Err(Error::param("deltas", format!("{d} is not a positive sampling time")));
            }
        }
        if self.step_multipliers.contains(&0) {
            return Err(Error::param("step_multipliers", "must be >= 1"));
        }
        if self.horizons.contains(&0) {
            return Err(Error::param("horizons", "must be >= 1"));
        }
        Ok(())
    }

    /// Grid points in axis order: δ outermost, then s, then N.
    pub fn points(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for &delta in &self.deltas {
            for &step_multiplier in &self.step_multipliers {
                for &horizon in &self.horizons {
                    out.push(GridPoint {
                        delta,
                        step_multiplier,
                        horizon,
                    });
                }
            }
        }
        out
    }

    /// The axis with more than one value, if exactly one does.
    pub fn swept(&self) -> Option<SweptVariable> {
        let varying: Vec<_> = [
            (SweptVariable::Delta, self.deltas.len()),
            (SweptVariable::StepMultiplier, self.step_multipliers.len()),
            (SweptVariable::Horizon, self.horizons.len()),
        ]
        .into_iter()
        .filter(|(_, n)| *n > 1)
        .map(|(v, _)| v)
        .collect();
        match varying.as_slice() {
            [v] => Some(*v),
            _ => None,
        }
    }
}

/// Settings shared by every episode of a sweep. The agent kind, horizon and
/// sampling time are overwritten per grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSettings {
    pub agent: AgentConfig,
    pub episode: EpisodeConfig,
    pub plant: RobotParams,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            agent: AgentConfig::new(AgentKind::Mpc, HorizonConfig::default()),
            episode: EpisodeConfig::default(),
            plant: RobotParams::default(),
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Episode seed from the master seed, agent, grid point and run index.
pub fn derive_seed(master: u64, agent: AgentKind, point: &GridPoint, run: u64) -> u64 {
    let agent_tag = match agent {
        AgentKind::Mpc => 1u64,
        AgentKind::Rql => 2,
        AgentKind::Sql => 3,
    };
    [
        agent_tag,
        point.delta.to_bits(),
        point.step_multiplier as u64,
        point.horizon as u64,
        run,
    ]
    .into_iter()
    .fold(splitmix64(master), |h, v| splitmix64(h ^ v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub agent: AgentKind,
    pub delta: f64,
    pub s: u32,
    #[serde(rename = "N")]
    pub horizon: usize,
    pub run: u64,
    pub seed: u64,
    pub accumulated_cost: f64,
    pub parked: bool,
    pub first_park_time: Option<f64>,
    pub diverged: bool,
}

pub const RUNS_HEADER: [&str; 10] = [
    "agent",
    "delta",
    "s",
    "N",
    "run",
    "seed",
    "accumulated_cost",
    "parked",
    "first_park_time",
    "diverged",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPointSummary {
    pub agent: AgentKind,
    pub point: GridPoint,
    pub mean_cost: f64,
    /// Half-width of the 95% confidence interval.
    pub ci95: f64,
    pub park_count: usize,
    pub diverged_count: usize,
    pub runs: Vec<RunRecord>,
}

/// One row of the summary CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub agent: AgentKind,
    pub delta: f64,
    pub s: u32,
    #[serde(rename = "N")]
    pub horizon: usize,
    pub runs: usize,
    pub mean_cost: f64,
    pub ci95: f64,
    pub park_count: usize,
    pub diverged_count: usize,
}

pub const SUMMARY_HEADER: [&str; 9] = [
    "agent",
    "delta",
    "s",
    "N",
    "runs",
    "mean_cost",
    "ci95",
    "park_count",
    "diverged_count",
];

impl SweepPointSummary {
    pub fn row(&self) -> SummaryRow {
        SummaryRow {
            agent: self.agent,
            delta: self.point.delta,
            s: self.point.step_multiplier,
            horizon: self.point.horizon,
            runs: self.runs.len(),
            mean_cost: self.mean_cost,
            ci95: self.ci95,
            park_count: self.park_count,
            diverged_count: self.diverged_count,
        }
    }
}

/// Sample mean and 95% half-width. Needs at least two values.
pub fn mean_and_ci(values: &[f64], method: CiMethod) -> (f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let q = match method {
        CiMethod::Normal => Z_95,
        CiMethod::StudentT => StudentsT::new(0.0, 1.0, (n - 1) as f64)
            .map(|t| t.inverse_cdf(0.975))
            .unwrap_or(Z_95),
    };
    (mean, q * var.sqrt() / (n as f64).sqrt())
}

/// Aggregates one (agent, point) group; runs are sorted by index first so the
/// result does not depend on completion order.
pub fn summarize(agent: AgentKind, point: GridPoint, mut runs: Vec<RunRecord>, method: CiMethod) -> SweepPointSummary {
    runs.sort_by_key(|r| r.run);
    let costs: Vec<f64> = runs.iter().map(|r| r.accumulated_cost).collect();
    let (mean_cost, ci95) = mean_and_ci(&costs, method);
    SweepPointSummary {
        agent,
        point,
        mean_cost,
        ci95,
        park_count: runs.iter().filter(|r| r.parked).count(),
        diverged_count: runs.iter().filter(|r| r.diverged).count(),
        runs,
    }
}

fn run_one(settings: &SweepSettings, grid: &SweepGrid, agent: AgentKind, point: GridPoint, run: u64) -> Result<RunRecord> {
    let mut cfg = settings.agent;
    cfg.kind = agent;
    cfg.horizon.delta = point.delta;
    cfg.horizon.step_multiplier = point.step_multiplier;
    cfg.horizon.horizon = point.horizon;
    let seed = derive_seed(grid.master_seed, agent, &point, if grid.identical_seeds { 0 } else { run });
    let episode = EpisodeConfig {
        duration: grid.duration,
        delta: point.delta,
        seed,
        ..settings.episode
    };
    let mut controller = Agent::new(cfg)?;
    let res = run_episode(&mut controller, &episode, &settings.plant, &cfg.cost)?;
    Ok(RunRecord {
        agent,
        delta: point.delta,
        s: point.step_multiplier,
        horizon: point.horizon,
        run,
        seed,
        accumulated_cost: res.accumulated_cost,
        parked: res.parked,
        first_park_time: res.first_park_time,
        diverged: res.diverged,
    })
}

/// Runs every (agent, point, run) episode on the current rayon pool. Summaries
/// come back in grid order: agents outermost, then points.
pub fn run_sweep(grid: &SweepGrid, settings: &SweepSettings) -> Result<Vec<SweepPointSummary>> {
    grid.validate()?;
    settings.agent.validate()?;
    let points = grid.points();
    let mut jobs = Vec::new();
    for (ai, &agent) in grid.agents.iter().enumerate() {
        for (pi, &point) in points.iter().enumerate() {
            for run in 0..grid.runs as u64 {
                jobs.push((ai, pi, agent, point, run));
            }
        }
    }
    let done: Vec<((usize, usize), RunRecord)> = jobs
        .into_par_iter()
        .map(|(ai, pi, agent, point, run)| run_one(settings, grid, agent, point, run).map(|r| ((ai, pi), r)))
        .collect::<Result<_>>()?;

    let mut groups: BTreeMap<(usize, usize), Vec<RunRecord>> = BTreeMap::new();
    for (key, rec) in done {
        groups.entry(key).or_default().push(rec);
    }
    Ok(groups
        .into_iter()
        .map(|((ai, pi), runs)| summarize(grid.agents[ai], points[pi], runs, grid.ci))
        .collect())
}

pub fn write_summary_csv<W: Write>(summaries: &[SweepPointSummary], w: W) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    wtr.write_record(SUMMARY_HEADER)?;
    for s in summaries {
        wtr.serialize(s.row())?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_runs_csv<W: Write>(summaries: &[SweepPointSummary], w: W) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    wtr.write_record(RUNS_HEADER)?;
    for r in summaries.iter().flat_map(|s| &s.runs) {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

fn check_header(found: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    if found.iter().ne(expected.iter().copied()) {
        return Err(Error::Config(format!(
            "row 1: header {:?} does not match {:?}",
            found.iter().collect::<Vec<_>>(),
            expected
        )));
    }
    Ok(())
}

/// Reads a summary CSV; errors name the 1-based row (header is row 1).
pub fn read_summary_csv<R: std::io::Read>(r: R) -> Result<Vec<SummaryRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    check_header(rdr.headers()?, &SUMMARY_HEADER)?;
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<SummaryRow>().enumerate() {
        let row = rec.map_err(|e| Error::Config(format!("row {}: {e}", i + 2)))?;
        if row.park_count > row.runs || row.diverged_count > row.runs || row.ci95.is_nan() || row.ci95 < 0.0 {
            return Err(Error::Config(format!("row {}: counts or ci95 out of range", i + 2)));
        }
        out.push(row);
    }
    Ok(out)
}

pub fn read_runs_csv<R: std::io::Read>(r: R) -> Result<Vec<RunRecord>> {
    let mut rdr = csv::Reader::from_reader(r);
    check_header(rdr.headers()?, &RUNS_HEADER)?;
    rdr.deserialize::<RunRecord>()
        .enumerate()
        .map(|(i, rec)| rec.map_err(|e| Error::Config(format!("row {}: {e}", i + 2))))
        .collect()
}

/// Plain-text notes on a summary: the cheapest value of the swept variable per
/// agent and the agent ranking at every point. Nothing here is asserted.
pub fn observations(rows: &[SummaryRow], swept: SweptVariable) -> String {
    let value = |r: &SummaryRow| match swept {
        SweptVariable::Delta => r.delta,
        SweptVariable::StepMultiplier => r.s as f64,
        SweptVariable::Horizon => r.horizon as f64,
    };
    let mut out = String::new();
    let mut agents: Vec<AgentKind> = rows.iter().map(|r| r.agent).collect();
    agents.dedup();
    agents.sort_by_key(|a| a.as_str());
    agents.dedup();

    let _ = writeln!(out, "Lowest mean cost per agent over {}:", swept.label());
    for a in &agents {
        let best = rows
            .iter()
            .filter(|r| r.agent == *a && r.mean_cost.is_finite())
            .min_by(|x, y| x.mean_cost.total_cmp(&y.mean_cost));
        match best {
            Some(r) => {
                let _ = writeln!(
                    out,
                    "- {a}: {} = {} (mean {:.4}, ±{:.4}, parked {}/{})",
                    swept.column(),
                    value(r),
                    r.mean_cost,
                    r.ci95,
                    r.park_count,
                    r.runs
                );
            }
            None => {
                let _ = writeln!(out, "- {a}: no finite cost");
            }
        }
    }

    let mut values: Vec<f64> = rows.iter().map(value).collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let _ = writeln!(out, "\nRanking by mean cost (lowest first):");
    for v in values {
        let mut at: Vec<&SummaryRow> = rows.iter().filter(|r| value(r) == v).collect();
        at.sort_by(|x, y| x.mean_cost.total_cmp(&y.mean_cost));
        let ranking: Vec<String> = at
            .iter()
            .map(|r| format!("{} ({:.4}, parked {}/{})", r.agent, r.mean_cost, r.park_count, r.runs))
            .collect();
        let _ = writeln!(out, "- {} = {v}: {}", swept.column(), ranking.join(" < "));
    }
    out
}
