//! Acceptance criteria. Each test prints one PASS/FAIL line to stderr, outside
//! the harness's output capture, then asserts.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use predictive_rl::agents::{
    mpc_objective, rql_objective, sql_objective, AgentKind, HorizonConfig, StageCostConfig,
};
use predictive_rl::critic::{CriticWeights, WeightBounds, N_WEIGHTS};
use predictive_rl::dynamics::{Action, RobotParams, RobotState};
use predictive_rl::experiments::{
    read_runs_csv, read_summary_csv, run_sweep, Preset, SweepGrid, SweepPointSummary, SweepSettings,
};
use predictive_rl::oracle::stacked_q;
use predictive_rl::selfcheck::{critic_recovery, integrator_orders, stacked_q_campaign};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EQUALITY_BUDGET: Duration = Duration::from_secs(30);
const ORDER_BUDGET: Duration = Duration::from_secs(5);
const RECOVERY_BUDGET: Duration = Duration::from_secs(5);
const IDENTITY_BUDGET: Duration = Duration::from_secs(5);
const PARKING_BUDGET: Duration = Duration::from_secs(15 * 60);

const EULER_TARGET: f64 = 1.0;
const EULER_TOL: f64 = 0.2;
const RK4_TARGET: f64 = 4.0;
const RK4_TOL: f64 = 0.5;
const RECOVERY_TOL: f64 = 1e-6;
const GRADIENT_TOL: f64 = 1e-6;
const RECOVERY_TRANSITIONS: usize = 40;
const IDENTITY_SAMPLES: usize = 200;
const PARKING_RUNS: usize = 10;
const PARKING_DURATION: f64 = 120.0;
const PARKING_MIN: usize = 8;
const MASTER_SEED: u64 = 0;

fn verdict(id: u32, name: &str, passed: bool, detail: &str) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(
        err,
        "\n[{}] criterion {id}: {name}: {detail}",
        if passed { "PASS" } else { "FAIL" }
    );
    assert!(passed, "criterion {id} failed: {detail}");
}

#[test]
fn criterion_1_stacked_q_equals_sum_of_minima() {
    let t = Instant::now();
    let report = stacked_q_campaign(2024, stacked_q);
    let elapsed = t.elapsed();
    let mut detail = format!(
        "{}/{} instances hold within 1e-9, max gap {:.3e}, enumeration/DP mismatches {}, {:.2} s",
        report.instances - report.failures.len(),
        report.instances,
        report.max_gap,
        report.enumeration_dp_mismatch,
        elapsed.as_secs_f64()
    );
    if let Some(c) = report.failures.first() {
        detail.push_str(&format!("; first counterexample {}", c.to_string().replace('\n', " | ")));
    }
    let ok = report.instances == 500
        && report.all_hold()
        && report.enumeration_dp_mismatch == 0
        && elapsed < EQUALITY_BUDGET;
    verdict(1, "stacked-Q minimum equals sum of per-step minima", ok, &detail);
}

#[test]
fn criterion_2_integrator_orders() {
    let t = Instant::now();
    let o = integrator_orders(7, 100);
    let elapsed = t.elapsed();
    let ok = (o.euler - EULER_TARGET).abs() <= EULER_TOL
        && (o.rk4 - RK4_TARGET).abs() <= RK4_TOL
        && elapsed < ORDER_BUDGET;
    verdict(
        2,
        "integrator convergence orders",
        ok,
        &format!("euler {:.4}, rk4 {:.4}, {:.3} s", o.euler, o.rk4, elapsed.as_secs_f64()),
    );
}

#[test]
fn criterion_3_critic_recovery_and_gradient() {
    let t = Instant::now();
    let r = critic_recovery(3, RECOVERY_TRANSITIONS);
    let elapsed = t.elapsed();
    let ok = r.transitions >= 28
        && r.max_error < RECOVERY_TOL
        && r.gradient_error < GRADIENT_TOL
        && elapsed < RECOVERY_BUDGET;
    verdict(
        3,
        "critic recovery",
        ok,
        &format!(
            "{} transitions, max |theta - theta*| {:.3e}, gradient relative error {:.3e}, {:.3} s",
            r.transitions,
            r.max_error,
            r.gradient_error,
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_4_objective_identities() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let plant = RobotParams::default();
    let cost = StageCostConfig::default();
    let zero = CriticWeights::zeros(WeightBounds::default());
    let (mut rql_mpc, mut rql_sql) = (0usize, 0usize);
    for _ in 0..IDENTITY_SAMPLES {
        let x = RobotState::new(
            rng.random_range(-6.0..6.0),
            rng.random_range(-6.0..6.0),
            rng.random_range(-10.0..10.0),
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
        );
        let n = rng.random_range(1..=6usize);
        let cfg = HorizonConfig {
            delta: rng.random_range(0.01..0.5),
            step_multiplier: rng.random_range(1..=5),
            horizon: n,
            gamma: rng.random_range(0.5..=1.0),
        };
        let seq: Vec<Action> = (0..n)
            .map(|_| Action::new(rng.random_range(-300.0..300.0), rng.random_range(-100.0..100.0)))
            .collect();
        let truncated = HorizonConfig { horizon: n - 1, ..cfg };
        if rql_objective(&x, &seq, &zero, &cfg, &cost, &plant) == mpc_objective(&x, &seq[..n - 1], &truncated, &cost, &plant)
        {
            rql_mpc += 1;
        }
        let theta = CriticWeights::new(
            (0..N_WEIGHTS).map(|_| rng.random_range(-10.0..10.0)).collect(),
            WeightBounds::default(),
        )
        .unwrap();
        let one = HorizonConfig { horizon: 1, ..cfg };
        if rql_objective(&x, &seq[..1], &theta, &one, &cost, &plant)
            == sql_objective(&x, &seq[..1], &theta, &one, &plant, false)
        {
            rql_sql += 1;
        }
    }
    let elapsed = t.elapsed();
    let ok = rql_mpc == IDENTITY_SAMPLES && rql_sql == IDENTITY_SAMPLES && elapsed < IDENTITY_BUDGET;
    verdict(
        4,
        "objective identities",
        ok,
        &format!(
            "RQL(theta=0) == truncated MPC on {rql_mpc}/{IDENTITY_SAMPLES}, RQL(N=1) == SQL(N=1) on {rql_sql}/{IDENTITY_SAMPLES}, {:.3} s",
            elapsed.as_secs_f64()
        ),
    );
}

/// The horizon preset at 10 runs x 120 s, shared by criteria 5 and 6.
fn horizon_sweep() -> &'static (Vec<SweepPointSummary>, Duration) {
    static SWEEP: OnceLock<(Vec<SweepPointSummary>, Duration)> = OnceLock::new();
    SWEEP.get_or_init(|| {
        let grid = SweepGrid {
            runs: PARKING_RUNS,
            duration: PARKING_DURATION,
            master_seed: MASTER_SEED,
            ..Preset::Horizon.grid()
        };
        let t = Instant::now();
        let out = run_sweep(&grid, &SweepSettings::default()).expect("sweep runs");
        (out, t.elapsed())
    })
}

#[test]
fn criterion_5_all_agents_park_at_horizon_five() {
    let (sweep, elapsed) = horizon_sweep();
    let mut ok = *elapsed < PARKING_BUDGET;
    let mut parts = Vec::new();
    for agent in AgentKind::ALL {
        let s = sweep
            .iter()
            .find(|s| s.agent == agent && s.point.horizon == 5 && s.point.delta == 0.1 && s.point.step_multiplier == 1)
            .expect("N = 5 point present");
        ok &= s.park_count >= PARKING_MIN;
        parts.push(format!("{agent} {}/{}", s.park_count, s.runs.len()));
    }
    verdict(
        5,
        "parking at N = 5",
        ok,
        &format!(
            "{} (need >= {PARKING_MIN}/{PARKING_RUNS}), sweep {:.1} s",
            parts.join(", "),
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_6_mpc_cost_falls_with_horizon() {
    let (sweep, elapsed) = horizon_sweep();
    let mean = |n: usize| {
        sweep
            .iter()
            .find(|s| s.agent == AgentKind::Mpc && s.point.horizon == n)
            .expect("point present")
            .mean_cost
    };
    let (n2, n5) = (mean(2), mean(5));
    verdict(
        6,
        "MPC horizon trend",
        n5 < n2 && *elapsed < PARKING_BUDGET,
        &format!("mean cost N=2 {n2:.4}, N=5 {n5:.4}"),
    );
}

/// Runs the command in-process; true on a zero exit code.
fn prl(args: &[&str], out: &Path) -> bool {
    let argv = std::iter::once("prl")
        .chain(args.iter().copied())
        .chain(["--out", out.to_str().unwrap()]);
    predictive_rl_cli::run(argv) == ExitCode::SUCCESS
}

#[test]
fn criterion_7_sweep_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let args = ["sweep", "--preset", "horizon", "--runs", "3", "--duration", "5", "--seed", "42"];
    let ra = prl(&args, a.path());
    let rb = prl(&args, b.path());
    let same = ra
        && rb
        && fs::read(a.path().join("horizon/summary.csv")).ok() == fs::read(b.path().join("horizon/summary.csv")).ok()
        && fs::read(a.path().join("horizon/runs.csv")).ok() == fs::read(b.path().join("horizon/runs.csv")).ok();
    verdict(
        7,
        "byte-identical sweep output",
        same,
        "two `prl sweep --seed 42` runs compared byte for byte",
    );
}

#[test]
fn criterion_8_presets_emit_complete_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let run = prl(&["sweep", "--runs", "2", "--duration", "2", "--seed", "8"], dir.path());
    let mut problems = Vec::new();
    if !run {
        problems.push("sweep exited nonzero".into());
    }
    let report = fs::read_to_string(dir.path().join("report.md")).unwrap_or_default();
    for preset in Preset::ALL {
        let base = dir.path().join(preset.name());
        let grid = preset.grid();
        let expected_rows = AgentKind::ALL.len() * grid.points().len();
        match fs::File::open(base.join("summary.csv")).map_err(|e| e.to_string()).and_then(|f| {
            read_summary_csv(f).map_err(|e| e.to_string())
        }) {
            Ok(rows) if rows.len() == expected_rows => {}
            Ok(rows) => problems.push(format!("{}: {} summary rows, expected {expected_rows}", preset.name(), rows.len())),
            Err(e) => problems.push(format!("{}: {e}", preset.name())),
        }
        match fs::File::open(base.join("runs.csv")).map_err(|e| e.to_string()).and_then(|f| {
            read_runs_csv(f).map_err(|e| e.to_string())
        }) {
            Ok(rows) if rows.len() == expected_rows * 2 => {}
            Ok(rows) => problems.push(format!("{}: {} run rows", preset.name(), rows.len())),
            Err(e) => problems.push(format!("{}: {e}", preset.name())),
        }
        for svg in ["cost.svg", "parking.svg"] {
            let text = fs::read_to_string(base.join(svg)).unwrap_or_default();
            if let Err(e) = roxmltree::Document::parse(&text) {
                problems.push(format!("{}/{svg}: {e}", preset.name()));
            }
        }
        if !report.contains(&format!("## Preset `{}`", preset.name())) {
            problems.push(format!("report lacks a section for {}", preset.name()));
        }
    }
    if !report.contains("Lowest mean cost per agent") || !report.contains("Ranking by mean cost") {
        problems.push("report lacks observations".into());
    }
    let detail = if problems.is_empty() {
        "three presets: summary, runs, two SVGs each, report with observations".to_string()
    } else {
        problems.join("; ")
    };
    verdict(8, "preset artifacts", problems.is_empty(), &detail);
}
