//! Command-line front end: sweeps, single episodes, plots and self-checks.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use predictive_rl::agents::{Agent, AgentKind, HorizonConfig};
use predictive_rl::experiments::{
    observations, read_summary_csv, run_sweep, write_runs_csv, write_summary_csv, Preset, SummaryRow, SweptVariable,
};
use predictive_rl::selfcheck;
use predictive_rl::simulator::run_episode;

pub mod config;
pub mod svg;

use config::{RunConfig, DEFAULT_CONFIG};

/// Environment variable holding the default output directory.
const OUT_DIR_ENV: &str = "PRL_OUT_DIR";

#[derive(Parser, Debug)]
#[command(name = "prl", version, about = "Parking benchmark for MPC, roll-out Q-learning and stacked Q-learning agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run hyper-parameter sweeps and write CSV summaries, SVG plots and a report.
    Sweep(SweepArgs),
    /// Run a single episode and write its trajectory.
    Episode(EpisodeArgs),
    /// Render SVG charts from a summary CSV.
    Plot(PlotArgs),
    /// Run the numerical self-checks.
    Verify,
    /// Print the default configuration file.
    DefaultConfig,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Presets to run; all three when omitted.
    #[arg(long, value_delimiter = ',')]
    preset: Vec<Preset>,
    #[arg(long, value_delimiter = ',')]
    agents: Vec<AgentKind>,
    #[arg(long)]
    runs: Option<usize>,
    /// Episode length in seconds.
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args, Debug)]
struct EpisodeArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "MPC")]
    agent: AgentKind,
    #[arg(long)]
    delta: Option<f64>,
    /// Prediction step multiplier.
    #[arg(short = 's', long = "step-multiplier")]
    step_multiplier: Option<u32>,
    /// Prediction horizon.
    #[arg(short = 'N', long)]
    horizon: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PlotArgs {
    summary: PathBuf,
    /// Output directory; defaults to the directory holding the CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Swept column (delta, s or N); inferred when omitted.
    #[arg(long)]
    by: Option<String>,
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => RunConfig::parse(DEFAULT_CONFIG),
    }
}

/// `--out`, then the config key, then the environment, then `./out`.
fn output_dir(flag: Option<&Path>, cfg: &RunConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.clone())
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))
}

fn cmd_sweep(args: SweepArgs) -> Result<ExitCode> {
    let mut cfg = load_config(args.config.as_deref())?;
    if !args.agents.is_empty() {
        cfg.sweep.agents = args.agents.clone();
    }
    if let Some(r) = args.runs {
        cfg.sweep.runs = r;
    }
    if let Some(d) = args.duration {
        cfg.episode.duration = d;
    }
    if let Some(s) = args.seed {
        cfg.master_seed = s;
    }
    if let Some(j) = args.jobs {
        cfg.jobs = j;
    }
    cfg.validate()?;
    let out = output_dir(args.out.as_deref(), &cfg);
    let presets = if args.preset.is_empty() {
        Preset::ALL.to_vec()
    } else {
        args.preset.clone()
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .context("cannot start worker pool")?;
    let settings = cfg.settings();

    let mut report = String::new();
    let _ = writeln!(report, "# Sweep report\n");
    let _ = writeln!(
        report,
        "Master seed {}, {} runs per point, {} s episodes.\n",
        cfg.master_seed, cfg.sweep.runs, cfg.episode.duration
    );
    let (mut episodes, mut diverged) = (0usize, 0usize);

    for preset in presets {
        let grid = cfg.grid(Some(preset));
        log::info!("running preset {} ({} points)", preset.name(), grid.points().len());
        let summaries = pool.install(|| run_sweep(&grid, &settings))?;
        let dir = out.join(preset.name());
        fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;

        let mut summary_csv = Vec::new();
        write_summary_csv(&summaries, &mut summary_csv)?;
        write_file(&dir.join("summary.csv"), &summary_csv)?;
        let mut runs_csv = Vec::new();
        write_runs_csv(&summaries, &mut runs_csv)?;
        write_file(&dir.join("runs.csv"), &runs_csv)?;

        let rows: Vec<SummaryRow> = summaries.iter().map(|s| s.row()).collect();
        write_file(&dir.join("cost.svg"), svg::cost_chart(&rows, preset.swept()).as_bytes())?;
        write_file(&dir.join("parking.svg"), svg::parking_chart(&rows, preset.swept()).as_bytes())?;

        episodes += rows.iter().map(|r| r.runs).sum::<usize>();
        diverged += rows.iter().map(|r| r.diverged_count).sum::<usize>();
        let _ = writeln!(report, "## Preset `{}`\n", preset.name());
        report.push_str(&observations(&rows, preset.swept()));
        let flagged: Vec<String> = rows
            .iter()
            .filter(|r| r.diverged_count > 0)
            .map(|r| format!("{} at {} = {}", r.agent, preset.swept().column(), svg::swept_value(r, preset.swept())))
            .collect();
        if !flagged.is_empty() {
            let _ = writeln!(report, "\nDiverged episodes: {}", flagged.join("; "));
        }
        report.push('\n');
        println!("{}: wrote {}", preset.name(), dir.display());
    }
    let _ = writeln!(report, "## Effective configuration\n\n```toml\n{}```", toml::to_string(&cfg)?);
    write_file(&out.join("report.md"), report.as_bytes())?;

    let fraction = if episodes == 0 {
        0.0
    } else {
        diverged as f64 / episodes as f64
    };
    if fraction > cfg.sweep.max_diverged_fraction {
        eprintln!(
            "error: {diverged} of {episodes} episodes diverged, above the limit of {}",
            cfg.sweep.max_diverged_fraction
        );
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_episode(args: EpisodeArgs) -> Result<ExitCode> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(d) = args.duration {
        cfg.episode.duration = d;
    }
    let horizon = HorizonConfig {
        delta: args.delta.unwrap_or(cfg.sweep.delta),
        step_multiplier: args.step_multiplier.unwrap_or(cfg.sweep.s),
        horizon: args.horizon.unwrap_or(cfg.sweep.horizon),
        gamma: cfg.agent.gamma,
    };
    let agent_cfg = cfg.agent_config(args.agent, horizon);
    let episode = cfg.episode_config(horizon.delta, args.seed);
    let mut agent = Agent::new(agent_cfg)?;
    let result = run_episode(&mut agent, &episode, &cfg.plant(), &agent_cfg.cost)?;

    let out = output_dir(args.out.as_deref(), &cfg);
    fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
    let path = out.join(format!(
        "episode_{}_delta{}_s{}_N{}_seed{}.csv",
        args.agent, horizon.delta, horizon.step_multiplier, horizon.horizon, args.seed
    ));
    let mut buf = Vec::new();
    result.write_trajectory_csv(&mut buf)?;
    write_file(&path, &buf)?;

    println!("accumulated_cost = {}", result.accumulated_cost);
    println!("parked = {}", result.parked);
    match result.first_park_time {
        Some(t) => println!("first_park_time = {t}"),
        None => println!("first_park_time = none"),
    }
    println!("diverged = {}", result.diverged);
    println!("trajectory = {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn infer_swept(rows: &[SummaryRow]) -> Result<SweptVariable> {
    let distinct = |f: &dyn Fn(&SummaryRow) -> f64| {
        let mut v: Vec<f64> = rows.iter().map(f).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v.len()
    };
    let varying: Vec<SweptVariable> = [
        (SweptVariable::Delta, distinct(&|r| r.delta)),
        (SweptVariable::StepMultiplier, distinct(&|r| r.s as f64)),
        (SweptVariable::Horizon, distinct(&|r| r.horizon as f64)),
    ]
    .into_iter()
    .filter(|(_, n)| *n > 1)
    .map(|(v, _)| v)
    .collect();
    match varying.as_slice() {
        [] => Ok(SweptVariable::Horizon),
        [v] => Ok(*v),
        _ => bail!("more than one of delta, s, N varies; choose one with --by"),
    }
}

fn cmd_plot(args: PlotArgs) -> Result<ExitCode> {
    let file = fs::File::open(&args.summary).with_context(|| format!("cannot open {}", args.summary.display()))?;
    let rows = read_summary_csv(file).with_context(|| format!("malformed summary {}", args.summary.display()))?;
    let swept = match args.by.as_deref() {
        Some("delta") => SweptVariable::Delta,
        Some("s") => SweptVariable::StepMultiplier,
        Some("N") | Some("n") => SweptVariable::Horizon,
        Some(other) => bail!("--by must be delta, s or N, got `{other}`"),
        None => infer_swept(&rows)?,
    };
    let out = args.out.clone().unwrap_or_else(|| {
        args.summary
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."))
    });
    fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
    let cost = out.join("cost.svg");
    let parking = out.join("parking.svg");
    write_file(&cost, svg::cost_chart(&rows, swept).as_bytes())?;
    write_file(&parking, svg::parking_chart(&rows, swept).as_bytes())?;
    println!("wrote {} and {}", cost.display(), parking.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify() -> ExitCode {
    let checks = selfcheck::run_all();
    let mut ok = true;
    for c in &checks {
        println!(
            "{} {} ({:.3} s): {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.seconds,
            c.detail
        );
        ok &= c.passed;
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        eprintln!("verify: at least one check failed");
        ExitCode::FAILURE
    }
}

/// Parses `args` (program name first) and runs the command. Errors are
/// printed to standard error and mapped to a failing exit code.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Sweep(a) => cmd_sweep(a),
        Command::Episode(a) => cmd_episode(a),
        Command::Plot(a) => cmd_plot(a),
        Command::Verify => Ok(cmd_verify()),
        Command::DefaultConfig => {
            print!("{DEFAULT_CONFIG}");
            Ok(ExitCode::SUCCESS)
        }
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::FAILURE
    })
}
