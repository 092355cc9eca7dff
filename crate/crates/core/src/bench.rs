//! Solve-time benchmarks over seeded random layouts.
//!
//! The planner grid crosses obstacle count with polygon side count; the
//! controller grids vary the horizon length with two obstacles in the way.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cfmpc::{MpcConfig, MpcMode, MpcSolver};
use crate::davg::{plan, PlannerConfig};
use crate::geometry::Point2;
use crate::obstacle_map::Obstacle;
use crate::trajectory::{interpolate, reference_window, InterpolationParams, Pose, ReferenceWindow};
use crate::Stopwatch;

pub const DAVG_OBSTACLES: [usize; 4] = [2, 4, 6, 8];
pub const DAVG_SIDES: [usize; 2] = [4, 10];
pub const MPC_STEPS: [usize; 4] = [5, 10, 15, 20];
pub const MPC_OBSTACLES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Davg,
    Lmpc,
    Nmpc,
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "davg" => Ok(Self::Davg),
            "lmpc" => Ok(Self::Lmpc),
            "nmpc" => Ok(Self::Nmpc),
            other => Err(format!("unknown suite {other:?}, expected davg, lmpc or nmpc")),
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Davg => "davg",
            Self::Lmpc => "lmpc",
            Self::Nmpc => "nmpc",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub n_obs: usize,
    /// Polygon sides for the planner, horizon steps for the controllers.
    pub size: usize,
    pub samples: Vec<f64>,
    pub mean_ms: f64,
    pub p95_ms: f64,
}

impl BenchRow {
    fn new(n_obs: usize, size: usize, samples_s: Vec<f64>) -> Self {
        let ms: Vec<f64> = samples_s.iter().map(|s| s * 1e3).collect();
        let (mean_ms, p95_ms) = summarize(&ms);
        Self {
            n_obs,
            size,
            samples: ms,
            mean_ms,
            p95_ms,
        }
    }
}

/// Mean and nearest-rank 95th percentile.
pub fn summarize(samples: &[f64]) -> (f64, f64) {
    if samples.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((0.95 * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    (mean, sorted[rank - 1])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchTable {
    pub suite: Suite,
    pub repetitions: usize,
    pub seed: u64,
    pub rows: Vec<BenchRow>,
}

impl BenchTable {
    fn size_label(&self) -> &'static str {
        match self.suite {
            Suite::Davg => "n_arc",
            Suite::Lmpc | Suite::Nmpc => "n_step",
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("suite,n_obs,{},repetitions,mean_ms,p95_ms\n", self.size_label());
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{},{},{}", self.suite, r.n_obs, r.size, r.samples.len(), r.mean_ms, r.p95_ms);
        }
        out
    }

    /// Aligned table for the terminal.
    pub fn to_console(&self) -> String {
        let mut out = format!(
            "{:<6} {:>6} {:>7} {:>12} {:>12}\n",
            "suite",
            "n_obs",
            self.size_label(),
            "mean_ms",
            "p95_ms"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<6} {:>6} {:>7} {:>12.4} {:>12.4}",
                self.suite.to_string(),
                r.n_obs,
                r.size,
                r.mean_ms,
                r.p95_ms
            );
        }
        out
    }

    pub fn row(&self, n_obs: usize, size: usize) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.n_obs == n_obs && r.size == size)
    }
}

pub const BENCH_START: Pose = Pose { x: 1.0, y: 4.5, theta: 0.0 };
pub const BENCH_GOAL: Pose = Pose { x: 13.0, y: 4.5, theta: 0.0 };

/// Obstacles scattered around the start-goal line so they all matter.
pub fn davg_layout(seed: u64, n_obs: usize) -> Vec<Obstacle> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_obs)
        .map(|i| {
            let x = rng.random_range(3.0..11.0);
            let y = BENCH_START.y + rng.random_range(-1.5..1.5);
            let r = rng.random_range(0.3..0.7);
            Obstacle::new(i as u32, Point2::new(x, y), r).expect("positive radius")
        })
        .collect()
}

/// Straight reference with two obstacles inside the horizon.
pub fn mpc_instance(seed: u64, n_step: usize, cfg: &MpcConfig) -> (Pose, ReferenceWindow, Vec<Obstacle>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = InterpolationParams::default();
    let traj = interpolate(&[BENCH_START.position(), BENCH_GOAL.position()], 0.0, &params, None)
        .expect("valid straight path");
    let window = reference_window(&traj, 0.0, n_step, cfg.dt);
    let reach = n_step as f64 * cfg.dt * params.v_nom;
    let obstacles = (0..MPC_OBSTACLES)
        .map(|i| {
            let along = rng.random_range(0.3 * reach..reach);
            let c = Point2::new(BENCH_START.x + along, BENCH_START.y + rng.random_range(-0.3..0.3));
            Obstacle::new(i as u32, c, rng.random_range(0.2..0.4)).expect("positive radius")
        })
        .collect();
    let x0 = Pose::new(BENCH_START.x, BENCH_START.y + rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1));
    (x0, window, obstacles)
}

fn rep_seed(seed: u64, cell: usize, rep: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add((cell as u64) << 32).wrapping_add(rep as u64)
}

fn time_davg(seed: u64, n_obs: usize, n_sides: usize) -> f64 {
    let obstacles = davg_layout(seed, n_obs);
    let cfg = PlannerConfig { n_sides, ..Default::default() };
    let clock = Stopwatch::start();
    let result = plan(BENCH_START, BENCH_GOAL, &obstacles, &cfg);
    let elapsed = clock.elapsed();
    std::hint::black_box(result.ok());
    elapsed
}

fn time_mpc(seed: u64, n_step: usize, mode: MpcMode) -> f64 {
    let cfg = MpcConfig { horizon: n_step, ..Default::default() };
    let (x0, window, obstacles) = mpc_instance(seed, n_step, &cfg);
    let mut solver = MpcSolver::new(cfg).expect("default config is valid");
    let clock = Stopwatch::start();
    let sol = solver.solve(mode, x0, &window, &obstacles);
    let elapsed = clock.elapsed();
    std::hint::black_box(sol);
    elapsed
}

/// Maps `job` over `0..n` on up to `threads` workers, keeping order.
fn map_reps<F>(n: usize, threads: usize, job: F) -> Vec<f64>
where
    F: Fn(usize) -> f64 + Send + Sync,
{
    #[cfg(feature = "parallel")]
    if threads > 1 {
        use rayon::prelude::*;
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
            return pool.install(|| (0..n).into_par_iter().map(&job).collect());
        }
    }
    let _ = threads;
    (0..n).map(job).collect()
}

/// Runs one suite. Layouts depend only on `seed`, the grid cell and the
/// repetition index, so reruns time identical instances.
pub fn run_suite(suite: Suite, repetitions: usize, seed: u64, threads: usize) -> BenchTable {
    let reps = repetitions.max(1);
    let mut rows = Vec::new();
    match suite {
        Suite::Davg => {
            for (ci, &n_obs) in DAVG_OBSTACLES.iter().enumerate() {
                for &n_sides in &DAVG_SIDES {
                    // layouts are shared across side counts
                    let samples = map_reps(reps, threads, |r| time_davg(rep_seed(seed, ci, r), n_obs, n_sides));
                    rows.push(BenchRow::new(n_obs, n_sides, samples));
                }
            }
        }
        Suite::Lmpc | Suite::Nmpc => {
            let mode = if suite == Suite::Lmpc { MpcMode::Linear } else { MpcMode::Nonlinear };
            for (ci, &n_step) in MPC_STEPS.iter().enumerate() {
                let samples = map_reps(reps, threads, |r| time_mpc(rep_seed(seed, ci, r), n_step, mode));
                rows.push(BenchRow::new(MPC_OBSTACLES, n_step, samples));
            }
        }
    }
    BenchTable {
        suite,
        repetitions: reps,
        seed,
        rows,
    }
}

/// Worker count from `PITCHPLAN_THREADS`, defaulting to the machine's
/// parallelism.
pub fn threads_from_env() -> usize {
    std::env::var("PITCHPLAN_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|n| *n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}
