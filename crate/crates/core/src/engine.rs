//! Scenario orchestration: placement, allocation, fleet execution, learning
//! feedback and the J1-J4 cost metrics.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::allocator::{evolve, AllocError, AllocationProblem, GaConfig, HeuristicStore};
use crate::baseline::shortest_path;
use crate::gridworld::{
    generate_layout, generate_sized_layout, GridError, GridWorld, LayoutParams, Position,
};
use crate::planner::{
    default_step_cap, run_until_done, FleetState, Outcome, PlanError, RobotState, SimTrace, Task,
};
use crate::potential::{PotentialError, PotentialParams, SensorModel};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Potential(#[from] PotentialError),
    #[error(transparent)]
    Alloc(#[from] AllocError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("reading layout {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayoutSource {
    /// Shelf layout packed into the given outer size.
    Generated {
        width: usize,
        height: usize,
    },
    Params(LayoutParams),
    File(PathBuf),
    World(Arc<GridWorld>),
}

impl LayoutSource {
    pub fn build(&self) -> Result<Arc<GridWorld>, EngineError> {
        Ok(match self {
            LayoutSource::Generated { width, height } => {
                Arc::new(generate_sized_layout(*width, *height)?)
            }
            LayoutSource::Params(p) => Arc::new(generate_layout(p)?),
            LayoutSource::File(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| EngineError::Io {
                    path: path.clone(),
                    source,
                })?;
                Arc::new(GridWorld::parse(&text)?)
            }
            LayoutSource::World(w) => Arc::clone(w),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Placement {
    /// Uniform draw without replacement from the reachable cells.
    Random,
    Explicit(Vec<Position>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub layout: LayoutSource,
    pub n_robots: usize,
    pub n_tasks: usize,
    pub robot_starts: Placement,
    pub task_positions: Placement,
    pub potential: PotentialParams,
    pub sensor: SensorModel,
    pub ga: GaConfig,
    pub learning_rate: f64,
    /// `None` selects [`default_step_cap`].
    pub step_cap: Option<u64>,
    pub seed: u64,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            layout: LayoutSource::Generated {
                width: 81,
                height: 80,
            },
            n_robots: 10,
            n_tasks: 10,
            robot_starts: Placement::Random,
            task_positions: Placement::Random,
            potential: PotentialParams::default(),
            sensor: SensorModel::default(),
            ga: GaConfig::default(),
            learning_rate: 0.5,
            step_cap: None,
            seed: 0,
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: String| Err(EngineError::InvalidScenario(m));
        if self.n_robots == 0 {
            return bad("at least one robot is required".into());
        }
        if self.n_tasks == 0 {
            return bad("at least one task is required".into());
        }
        if self.step_cap == Some(0) {
            return bad("step cap must be positive".into());
        }
        if let Placement::Explicit(v) = &self.robot_starts {
            if v.len() != self.n_robots {
                return bad(format!(
                    "{} robot starts given for {} robots",
                    v.len(),
                    self.n_robots
                ));
            }
        }
        if let Placement::Explicit(v) = &self.task_positions {
            if v.len() != self.n_tasks {
                return bad(format!(
                    "{} task positions given for {} tasks",
                    v.len(),
                    self.n_tasks
                ));
            }
        }
        self.potential.validate()?;
        self.sensor.validate()?;
        self.ga.validate()?;
        HeuristicStore::new(self.learning_rate)?;
        Ok(())
    }

    /// Resolves starts and task cells. Random placement draws all random
    /// cells from one sample so they are mutually distinct and distinct from
    /// any explicit cells.
    fn place(
        &self,
        world: &GridWorld,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Vec<Position>, Vec<Position>), EngineError> {
        let mut taken: Vec<Position> = Vec::new();
        for placement in [&self.robot_starts, &self.task_positions] {
            if let Placement::Explicit(v) = placement {
                if let Some(p) = v.iter().find(|p| !world.is_reachable(**p)) {
                    return Err(EngineError::InvalidScenario(format!(
                        "{p} is not a reachable cell"
                    )));
                }
                taken.extend(v);
            }
        }
        if let Placement::Explicit(v) = &self.robot_starts {
            let mut sorted = v.clone();
            sorted.sort();
            if sorted.windows(2).any(|w| w[0] == w[1]) {
                return Err(EngineError::InvalidScenario(
                    "robot starts must be distinct".into(),
                ));
            }
        }
        let free: Vec<Position> = world
            .reachable_cells()
            .into_iter()
            .filter(|p| !taken.contains(p))
            .collect();
        let wanted = [&self.robot_starts, &self.task_positions]
            .iter()
            .zip([self.n_robots, self.n_tasks])
            .filter(|(p, _)| matches!(p, Placement::Random))
            .map(|(_, n)| n)
            .sum::<usize>();
        if wanted > free.len() {
            return Err(EngineError::InvalidScenario(format!(
                "{wanted} random placements requested but only {} free cells",
                free.len()
            )));
        }
        let mut drawn = sample(rng, free.len(), wanted).into_iter().map(|i| free[i]);
        let mut resolve = |placement: &Placement, n: usize| match placement {
            Placement::Explicit(v) => v.clone(),
            Placement::Random => drawn.by_ref().take(n).collect(),
        };
        let starts = resolve(&self.robot_starts, self.n_robots);
        let tasks = resolve(&self.task_positions, self.n_tasks);
        Ok((starts, tasks))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RobotMetrics {
    /// Realized distance over completed legs.
    pub distance: u64,
    /// A* optimum over the same legs.
    pub optimal: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub n_robots: usize,
    pub n_tasks: usize,
    pub seed: u64,
    pub j1: f64,
    pub j2: f64,
    pub j3: f64,
    pub j4: f64,
    pub k_total: u64,
    pub completed_tasks: usize,
    pub per_robot: Vec<RobotMetrics>,
    #[serde(serialize_with = "as_micros")]
    pub planner_time: Duration,
    #[serde(serialize_with = "as_micros")]
    pub astar_time: Duration,
    pub astar_expanded: usize,
    pub cap_reached: bool,
}

fn as_micros<S: serde::Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(micros(*d))
}

pub fn micros(d: Duration) -> f64 {
    d.as_secs_f64() * 1e6
}

/// J1-J4 from a trace and the per-robot optimal distances over the same
/// completed legs. Realized distances are recounted from the positions, up
/// to each robot's last completed leg.
pub fn compute_metrics(trace: &SimTrace, optima: &[u64], n_tasks: usize) -> MetricsReport {
    let n = trace.robot_count();
    let per_robot: Vec<RobotMetrics> = (0..n)
        .map(|i| {
            let last = trace.segments[i].last().map_or(0, |s| s.end_tick);
            RobotMetrics {
                distance: trace.moves(i, last),
                optimal: optima.get(i).copied().unwrap_or(0),
            }
        })
        .collect();
    let completed: usize = trace.segments.iter().map(Vec::len).sum();
    let realized: u64 = per_robot.iter().map(|r| r.distance).sum();
    let optimal: u64 = per_robot.iter().map(|r| r.optimal).sum();
    let j1 = match (realized, optimal) {
        (0, 0) => 1.0,
        (_, 0) => f64::INFINITY,
        (r, o) => r as f64 / o as f64,
    };
    let k = completed as f64;
    let max = per_robot.iter().map(|r| r.distance).max().unwrap_or(0) as f64;
    let k_total = trace.ticks();
    let (j2, j3) = if completed == 0 {
        (0.0, 0.0)
    } else {
        (realized as f64 / (k * n as f64), max / k)
    };
    let j4 = if k_total == 0 {
        0.0
    } else {
        k / k_total as f64
    };
    MetricsReport {
        n_robots: n,
        n_tasks,
        seed: 0,
        j1,
        j2,
        j3,
        j4,
        k_total,
        completed_tasks: completed,
        per_robot,
        planner_time: Duration::ZERO,
        astar_time: Duration::ZERO,
        astar_expanded: 0,
        cap_reached: completed < n_tasks,
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub trace: SimTrace,
    pub report: MetricsReport,
    pub outcome: Outcome,
    pub starts: Vec<Position>,
    pub task_positions: Vec<Position>,
    /// Task numbers (1-based) per robot.
    pub allocation: Vec<Vec<usize>>,
    pub fitness_history: Vec<f64>,
}

/// Runs a scenario with a fresh heuristic store.
pub fn run_scenario(sc: &Scenario) -> Result<ScenarioRun, EngineError> {
    sc.validate()?;
    let world = sc.layout.build()?;
    let mut h = HeuristicStore::new(sc.learning_rate)?;
    run_scenario_in(sc, &world, &mut h)
}

/// Runs a scenario on a prebuilt world, allocating with and then training
/// the given heuristic store.
pub fn run_scenario_in(
    sc: &Scenario,
    world: &GridWorld,
    h: &mut HeuristicStore,
) -> Result<ScenarioRun, EngineError> {
    sc.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
    let (starts, task_positions) = sc.place(world, &mut rng)?;
    let problem = AllocationProblem {
        starts: starts.clone(),
        task_positions: task_positions.clone(),
    };
    let ga = GaConfig {
        rng_seed: rng.gen(),
        ..sc.ga
    };
    let evolved = evolve(&ga, &problem, h)?;
    let allocation = evolved.best.decode(sc.n_robots)?;

    let robots = allocation
        .iter()
        .zip(&starts)
        .enumerate()
        .map(|(i, (list, &start))| {
            let tasks = list.iter().map(|&t| Task {
                id: t,
                pos: task_positions[t - 1],
            });
            RobotState::new(i, start, tasks, world)
        })
        .collect();
    let fleet = FleetState::new(robots, world)?;
    let cap = sc
        .step_cap
        .unwrap_or_else(|| default_step_cap(world, sc.n_robots, sc.n_tasks));
    let run = run_until_done(fleet, world, &sc.potential, &sc.sensor, cap)?;

    // perfect observer: the server receives each completed leg's distance
    for seg in run.trace.segments.iter().flatten() {
        h.learn(seg.start, seg.end, seg.length as f64, true);
    }

    let mut astar_time = Duration::ZERO;
    let mut astar_expanded = 0;
    let mut optima = Vec::with_capacity(sc.n_robots);
    for segs in &run.trace.segments {
        let mut total = 0;
        for seg in segs {
            let leg = shortest_path(world, seg.start, seg.end)?;
            astar_time += leg.elapsed;
            astar_expanded += leg.expanded_nodes;
            total += u64::from(leg.length.ok_or_else(|| {
                EngineError::InvalidScenario(format!(
                    "completed leg {} -> {} has no path",
                    seg.start, seg.end
                ))
            })?);
        }
        optima.push(total);
    }

    let mut report = compute_metrics(&run.trace, &optima, sc.n_tasks);
    report.seed = sc.seed;
    report.planner_time = run.planning_time;
    report.astar_time = astar_time;
    report.astar_expanded = astar_expanded;
    report.cap_reached = run.outcome == Outcome::CapReached;
    Ok(ScenarioRun {
        trace: run.trace,
        report,
        outcome: run.outcome,
        starts,
        task_positions,
        allocation,
        fitness_history: evolved.history,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        if values.is_empty() {
            return Stat {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Stat {
            mean,
            std: var.sqrt(),
        }
    }
}

/// Aggregates over the seeds of one (N, K) cell. J1 is averaged over
/// completed runs only.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub n_robots: usize,
    pub n_tasks: usize,
    pub runs: usize,
    pub cap_reached: usize,
    pub j1: Stat,
    pub j2: Stat,
    pub j3: Stat,
    pub j4: Stat,
    pub k_total: Stat,
    pub planner_time_us: Stat,
    pub astar_time_us: Stat,
}

impl SweepCell {
    fn from_reports(n_robots: usize, n_tasks: usize, reports: &[MetricsReport]) -> Self {
        let stat = |f: &dyn Fn(&MetricsReport) -> f64| {
            Stat::of(&reports.iter().map(f).collect::<Vec<_>>())
        };
        let j1: Vec<f64> = reports
            .iter()
            .filter(|r| !r.cap_reached)
            .map(|r| r.j1)
            .collect();
        SweepCell {
            n_robots,
            n_tasks,
            runs: reports.len(),
            cap_reached: reports.iter().filter(|r| r.cap_reached).count(),
            j1: Stat::of(&j1),
            j2: stat(&|r| r.j2),
            j3: stat(&|r| r.j3),
            j4: stat(&|r| r.j4),
            k_total: stat(&|r| r.k_total as f64),
            planner_time_us: stat(&|r| micros(r.planner_time)),
            astar_time_us: stat(&|r| micros(r.astar_time)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOptions {
    /// (N, K) pairs, run in the given order.
    pub cells: Vec<(usize, usize)>,
    pub seeds_per_cell: u64,
    /// Carry the heuristic store across runs (forces sequential execution).
    pub warm: bool,
    pub jobs: usize,
}

impl SweepOptions {
    /// Every combination of the given robot and task counts.
    pub fn grid(n_values: &[usize], k_values: &[usize], seeds_per_cell: u64) -> Self {
        SweepOptions {
            cells: n_values
                .iter()
                .flat_map(|&n| k_values.iter().map(move |&k| (n, k)))
                .collect(),
            seeds_per_cell,
            warm: false,
            jobs: 1,
        }
    }

    /// Cells with N = K.
    pub fn diagonal(values: &[usize], seeds_per_cell: u64) -> Self {
        SweepOptions {
            cells: values.iter().map(|&v| (v, v)).collect(),
            seeds_per_cell,
            warm: false,
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
    /// Per-run reports in (cell, seed) order.
    pub runs: Vec<MetricsReport>,
}

/// Runs `seeds_per_cell` seeds (base seed, base seed + 1, ...) of every cell.
pub fn run_sweep(base: &Scenario, opts: &SweepOptions) -> Result<SweepResult, EngineError> {
    if opts.seeds_per_cell == 0 {
        return Err(EngineError::InvalidScenario(
            "seeds per cell must be positive".into(),
        ));
    }
    let world = base.layout.build()?;
    let jobs: Vec<Scenario> = opts
        .cells
        .iter()
        .flat_map(|&(n, k)| {
            (0..opts.seeds_per_cell).map(move |s| Scenario {
                n_robots: n,
                n_tasks: k,
                seed: base.seed.wrapping_add(s),
                ..base.clone()
            })
        })
        .collect();

    let runs: Vec<MetricsReport> = if opts.warm {
        let mut h = HeuristicStore::new(base.learning_rate)?;
        jobs.iter()
            .map(|sc| run_scenario_in(sc, &world, &mut h).map(|r| r.report))
            .collect::<Result<_, _>>()?
    } else {
        let run_one = |sc: &Scenario| {
            let mut h = HeuristicStore::new(sc.learning_rate)?;
            run_scenario_in(sc, &world, &mut h).map(|r| r.report)
        };
        if opts.jobs <= 1 {
            jobs.iter().map(run_one).collect::<Result<_, _>>()?
        } else {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(opts.jobs)
                .build()
                .map_err(|e| EngineError::InvalidScenario(format!("worker pool: {e}")))?;
            pool.install(|| jobs.par_iter().map(run_one).collect::<Result<_, _>>())?
        }
    };

    let per_cell = opts.seeds_per_cell as usize;
    let cells = opts
        .cells
        .iter()
        .zip(runs.chunks(per_cell))
        .map(|(&(n, k), reports)| SweepCell::from_reports(n, k, reports))
        .collect();
    Ok(SweepResult { cells, runs })
}

pub const METRICS_CSV_HEADER: &str =
    "N,K,seed,J1,J2,J3,J4,k_total,planner_time_us,astar_time_us,cap_reached";

/// One CSV row in [`METRICS_CSV_HEADER`] order. `with_timing = false` writes
/// zero times so the row is reproducible byte for byte.
pub fn metrics_csv_row(r: &MetricsReport, with_timing: bool) -> String {
    let (pt, at) = if with_timing {
        (micros(r.planner_time), micros(r.astar_time))
    } else {
        (0.0, 0.0)
    };
    format!(
        "{},{},{},{},{},{},{},{},{},{},{}",
        r.n_robots, r.n_tasks, r.seed, r.j1, r.j2, r.j3, r.j4, r.k_total, pt, at, r.cap_reached
    )
}

pub const SWEEP_CSV_HEADER: &str = "N,K,runs,cap_reached,J1_mean,J1_std,J2_mean,J2_std,J3_mean,J3_std,J4_mean,J4_std,k_total_mean,k_total_std,planner_time_us_mean,astar_time_us_mean";

pub fn sweep_csv_row(c: &SweepCell, with_timing: bool) -> String {
    let (pt, at) = if with_timing {
        (c.planner_time_us.mean, c.astar_time_us.mean)
    } else {
        (0.0, 0.0)
    };
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        c.n_robots,
        c.n_tasks,
        c.runs,
        c.cap_reached,
        c.j1.mean,
        c.j1.std,
        c.j2.mean,
        c.j2.std,
        c.j3.mean,
        c.j3.std,
        c.j4.mean,
        c.j4.std,
        c.k_total.mean,
        c.k_total.std,
        pt,
        at
    )
}
