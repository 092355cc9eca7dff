//! Subcommands behind the `pitchplan` binary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use pitchplan::bench::{run_suite, threads_from_env, Suite};
use pitchplan::cfmpc::MpcMode;
use pitchplan::davg::plan_with_artifacts;
use pitchplan::scenario::{Scenario, ScenarioError};
use pitchplan::sim::{run as run_sim, Outcome};
use pitchplan::svg::{plan_svg, sim_svg};
use pitchplan::{PlanError, Point2};

#[derive(Debug, Parser)]
#[command(name = "pitchplan", version, about = "Turn-aware path planning and slack-relaxed MPC tracking")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Plan a path for the obstacles visible at t = 0.
    Plan(RunArgs),
    /// Run the closed-loop simulation.
    Sim(RunArgs),
    /// Time the planner or a controller over seeded layouts.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Linear,
    Nonlinear,
}

impl From<ModeArg> for MpcMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Linear => MpcMode::Linear,
            ModeArg::Nonlinear => MpcMode::Nonlinear,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SuiteArg {
    Davg,
    Lmpc,
    Nmpc,
}

impl From<SuiteArg> for Suite {
    fn from(s: SuiteArg) -> Self {
        match s {
            SuiteArg::Davg => Suite::Davg,
            SuiteArg::Lmpc => Suite::Lmpc,
            SuiteArg::Nmpc => Suite::Nmpc,
        }
    }
}

/// Flags that override scenario fields.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Turn weight in meters per radian.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub n_sides: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, sc: &mut Scenario) {
        if let Some(s) = self.seed {
            sc.seed = s;
        }
        if let Some(m) = self.mode {
            sc.tracker.mode = m.into();
        }
        if let Some(l) = self.lambda {
            sc.planner.turn_weight = l;
        }
        if let Some(n) = self.n_sides {
            sc.planner.n_sides = n;
        }
        if let Some(h) = self.horizon {
            sc.tracker.mpc.horizon = h;
        }
    }

    fn as_map(&self) -> BTreeMap<String, Value> {
        let mut m = BTreeMap::new();
        if let Some(s) = self.seed {
            m.insert("seed".into(), json!(s));
        }
        if let Some(mode) = self.mode {
            m.insert("mode".into(), json!(MpcMode::from(mode).to_string()));
        }
        if let Some(l) = self.lambda {
            m.insert("lambda".into(), json!(l));
        }
        if let Some(n) = self.n_sides {
            m.insert("n_sides".into(), json!(n));
        }
        if let Some(h) = self.horizon {
            m.insert("horizon".into(), json!(h));
        }
        m
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[arg(long, value_enum)]
    pub suite: SuiteArg,
    #[arg(long, default_value_t = 20)]
    pub repetitions: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Input(String),
    Unplannable(String),
    SimFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Input(_) => 1,
            Self::Unplannable(_) => 2,
            Self::SimFailed(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Input(m) => write!(f, "error: {m}"),
            Self::Unplannable(m) => write!(f, "unplannable: {m}"),
            Self::SimFailed(m) => write!(f, "simulation failed: {m}"),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

/// Reproducibility record written into every output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub inputs: Vec<String>,
    pub output_dir: String,
    pub overrides: BTreeMap<String, Value>,
    pub seed: u64,
    pub tool_version: String,
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| io_err(&path, e))
}

fn write_run_files(dir: &Path, manifest: &RunManifest, config: &str) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    write_file(dir, "manifest.json", &text)?;
    write_file(dir, "config.json", config)
}

fn load_scenario(path: &Path) -> Result<Scenario, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    Scenario::from_json(&text).map_err(|e| match e {
        ScenarioError::Parse { line, column, msg } => {
            CliError::Input(format!("{}:{line}:{column}: {msg}", path.display()))
        }
        other => CliError::Input(format!("{}: {other}", path.display())),
    })
}

fn prepare(cmd: &str, args: &RunArgs) -> Result<Scenario, CliError> {
    let mut sc = load_scenario(&args.scenario)?;
    args.overrides.apply(&mut sc);
    sc.validate()
        .map_err(|e| CliError::Input(format!("after overrides: {e}")))?;
    let manifest = RunManifest {
        subcommand: cmd.into(),
        inputs: vec![args.scenario.display().to_string()],
        output_dir: args.out.display().to_string(),
        overrides: args.overrides.as_map(),
        seed: sc.seed,
        tool_version: env!("CARGO_PKG_VERSION").into(),
    };
    write_run_files(&args.out, &manifest, &sc.to_json())?;
    Ok(sc)
}

/// `x,y` rows with shortest round-trip float formatting.
pub fn path_to_csv(points: &[Point2]) -> String {
    let mut out = String::from("x,y\n");
    for p in points {
        let _ = writeln!(out, "{},{}", p.x, p.y);
    }
    out
}

pub fn path_from_csv(text: &str) -> Result<Vec<Point2>, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some("x,y") => {}
        other => return Err(format!("expected header x,y, found {other:?}")),
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let (x, y) = l
                .split_once(',')
                .ok_or_else(|| format!("line {}: expected two columns", i + 2))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| format!("line {}: {e}", i + 2))
            };
            Ok(Point2::new(parse(x)?, parse(y)?))
        })
        .collect()
}

pub fn cmd_plan(args: &RunArgs) -> Result<String, CliError> {
    let sc = prepare("plan", args)?;
    let obstacles = sc.obstacles_at(0.0);
    let art = plan_with_artifacts(sc.start, sc.goal, &obstacles, &sc.planner).map_err(|e| match e {
        PlanError::Unplannable(m) => CliError::Unplannable(m.into()),
        PlanError::InvalidInput(m) => CliError::Input(m),
    })?;
    let path = &art.path;
    write_file(&args.out, "path.csv", &path_to_csv(&path.waypoints))?;
    write_file(&args.out, "graph.csv", &art.graph.to_csv())?;
    write_file(&args.out, "plan.svg", &plan_svg(&sc, &obstacles, &art))?;
    let summary = json!({
        "cost": path.cost,
        "distance": path.distance,
        "total_turn": path.total_turn,
        "solve_ms": path.solve_time * 1e3,
        "waypoints": path.waypoints.len(),
        "active_obstacles": path.active.iter().map(|id| id.0).collect::<Vec<_>>(),
    });
    write_file(&args.out, "summary.json", &serde_json::to_string_pretty(&summary).unwrap())?;
    Ok(format!(
        "cost {:.4}  distance {:.4} m  turn {:.4} rad  solve {:.3} ms  waypoints {}\n",
        path.cost,
        path.distance,
        path.total_turn,
        path.solve_time * 1e3,
        path.waypoints.len()
    ))
}

pub fn cmd_sim(args: &RunArgs) -> Result<String, CliError> {
    let sc = prepare("sim", args)?;
    let log = run_sim(&sc);
    write_file(&args.out, "simlog.csv", &log.to_csv())?;
    write_file(&args.out, "replans.csv", &log.replans_csv())?;
    write_file(&args.out, "sim.svg", &sim_svg(&sc, &log))?;
    let max_slack = log
        .ticks
        .iter()
        .flat_map(|t| t.slacks.iter().copied())
        .fold(0.0_f64, f64::max);
    let mean_mpc_ms = if log.ticks.is_empty() {
        0.0
    } else {
        log.ticks.iter().map(|t| t.mpc_time).sum::<f64>() / log.ticks.len() as f64 * 1e3
    };
    let summary = json!({
        "outcome": log.outcome,
        "end_time": log.end_time,
        "final_pose": log.final_pose,
        "ticks": log.ticks.len(),
        "replans": log.replans.len(),
        "max_slack": max_slack,
        "mean_mpc_ms": mean_mpc_ms,
        "tick_rate_hz": log.tick_rate(),
    });
    write_file(&args.out, "summary.json", &serde_json::to_string_pretty(&summary).unwrap())?;
    let line = format!(
        "outcome {}  t {:.2} s  ticks {}  replans {}  max slack {:.4}  mpc {:.3} ms/tick\n",
        log.outcome.label(),
        log.end_time,
        log.ticks.len(),
        log.replans.len(),
        max_slack,
        mean_mpc_ms
    );
    match log.outcome {
        Outcome::Reached => Ok(line),
        Outcome::Unplannable => Err(CliError::Unplannable(line.trim_end().into())),
        Outcome::Timeout | Outcome::Collision(_) => Err(CliError::SimFailed(line.trim_end().into())),
    }
}

pub fn cmd_bench(args: &BenchArgs) -> Result<String, CliError> {
    let threads = threads_from_env();
    let table = run_suite(args.suite.into(), args.repetitions, args.seed, threads);
    if let Some(dir) = &args.out {
        let manifest = RunManifest {
            subcommand: "bench".into(),
            inputs: Vec::new(),
            output_dir: dir.display().to_string(),
            overrides: BTreeMap::new(),
            seed: args.seed,
            tool_version: env!("CARGO_PKG_VERSION").into(),
        };
        let config = json!({
            "suite": table.suite,
            "repetitions": table.repetitions,
            "seed": args.seed,
            "threads": threads,
        });
        write_run_files(dir, &manifest, &serde_json::to_string_pretty(&config).unwrap())?;
        write_file(dir, &format!("bench_{}.csv", table.suite), &table.to_csv())?;
    }
    Ok(table.to_console())
}

pub fn run(cli: &Cli) -> Result<String, CliError> {
    match &cli.command {
        Command::Plan(a) => cmd_plan(a),
        Command::Sim(a) => cmd_sim(a),
        Command::Bench(a) => cmd_bench(a),
    }
}
