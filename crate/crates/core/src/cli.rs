//! Command-line front end.
//!
//! Exit status: 0 on success, 1 for invalid arguments, scenarios or
//! layouts, 2 for I/O failures.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::allocator::HeuristicStore;
use crate::config::parse_scenario;
use crate::engine::{
    metrics_csv_row, micros, run_scenario_in, run_sweep, sweep_csv_row, EngineError, Scenario,
    SweepOptions, METRICS_CSV_HEADER, SWEEP_CSV_HEADER,
};
use crate::gridworld::{generate_layout, generate_sized_layout, LayoutParams};

#[derive(Debug, Parser)]
#[command(
    name = "warehouse-sim",
    version,
    about = "Warehouse multi-robot allocation and potential-field planning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Args)]
struct ScenarioArgs {
    /// Scenario document (`key = value` lines).
    #[arg(long)]
    scenario: PathBuf,
    /// Overrides the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Write zero for timing columns so output is reproducible byte for byte.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one scenario and write its metrics row.
    Run {
        #[command(flatten)]
        common: ScenarioArgs,
        /// Also write the GA best-fitness history as CSV.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Run a grid of (robots, tasks) cells over several seeds.
    Sweep {
        #[command(flatten)]
        common: ScenarioArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        n_values: Vec<usize>,
        /// Task counts; omitted means K = N for every cell.
        #[arg(long, value_delimiter = ',')]
        k_values: Vec<usize>,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Keep learned heuristics across runs.
        #[arg(long)]
        warm: bool,
        /// Also write per-run rows here.
        #[arg(long)]
        runs_out: Option<PathBuf>,
    },
    /// Per-seed planner versus A* computation time.
    CompareAstar {
        #[command(flatten)]
        common: ScenarioArgs,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
    },
    /// Write the line-per-tick position trace of one run.
    DumpTrace {
        #[command(flatten)]
        common: ScenarioArgs,
    },
    /// Write a generated shelf layout in the ASCII format.
    GenLayout {
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        height: Option<usize>,
        #[arg(long)]
        block_rows: Option<usize>,
        #[arg(long)]
        block_cols: Option<usize>,
        #[arg(long, default_value_t = 2)]
        shelf_width: usize,
        #[arg(long, default_value_t = 4)]
        shelf_height: usize,
        #[arg(long, default_value_t = 2)]
        aisle: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug)]
enum CliError {
    Invalid(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Io(_) => 2,
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Io { .. } => CliError::Io(e.to_string()),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            let (CliError::Invalid(msg) | CliError::Io(msg)) = &e;
            eprintln!("error: {msg}");
            e.code()
        }
    }
}

fn load_scenario(args: &ScenarioArgs) -> Result<Scenario, CliError> {
    let text = std::fs::read_to_string(&args.scenario)
        .map_err(|e| CliError::Io(format!("reading {}: {e}", args.scenario.display())))?;
    let mut sc = parse_scenario(&text, args.scenario.parent())
        .map_err(|e| CliError::Invalid(e.to_string()))?;
    if let Some(seed) = args.seed {
        sc.seed = seed;
    }
    sc.validate()?;
    Ok(sc)
}

/// Writes through a temporary file in the target directory, then renames.
fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io(format!("writing {}: {e}", path.display()));
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(contents.as_bytes()).map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(value)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|e| CliError::Invalid(e.to_string()))
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run { common, history } => {
            let sc = load_scenario(&common)?;
            let world = sc.layout.build()?;
            let mut h = HeuristicStore::new(sc.learning_rate).map_err(EngineError::from)?;
            let run = run_scenario_in(&sc, &world, &mut h)?;
            let mut report = run.report;
            if common.no_timing {
                report.planner_time = Default::default();
                report.astar_time = Default::default();
            }
            let body = match common.format {
                Format::Csv => format!(
                    "{METRICS_CSV_HEADER}\n{}\n",
                    metrics_csv_row(&report, !common.no_timing)
                ),
                Format::Json => to_json(&report)?,
            };
            write_atomic(&common.out, &body)?;
            if let Some(path) = history {
                let mut csv = String::from("generation,best_fitness\n");
                for (g, f) in run.fitness_history.iter().enumerate() {
                    csv.push_str(&format!("{g},{f}\n"));
                }
                write_atomic(&path, &csv)?;
            }
        }
        Command::Sweep {
            common,
            n_values,
            k_values,
            seeds,
            jobs,
            warm,
            runs_out,
        } => {
            let sc = load_scenario(&common)?;
            let mut opts = if k_values.is_empty() {
                SweepOptions::diagonal(&n_values, seeds)
            } else {
                SweepOptions::grid(&n_values, &k_values, seeds)
            };
            opts.jobs = jobs.max(1);
            opts.warm = warm;
            let result = run_sweep(&sc, &opts)?;
            let timing = !common.no_timing;
            let body = match common.format {
                Format::Csv => {
                    let mut csv = format!("{SWEEP_CSV_HEADER}\n");
                    for c in &result.cells {
                        csv.push_str(&sweep_csv_row(c, timing));
                        csv.push('\n');
                    }
                    csv
                }
                Format::Json => to_json(&result.cells)?,
            };
            write_atomic(&common.out, &body)?;
            if let Some(path) = runs_out {
                let mut csv = format!("{METRICS_CSV_HEADER}\n");
                for r in &result.runs {
                    csv.push_str(&metrics_csv_row(r, timing));
                    csv.push('\n');
                }
                write_atomic(&path, &csv)?;
            }
        }
        Command::CompareAstar { common, seeds } => {
            let sc = load_scenario(&common)?;
            let opts = SweepOptions {
                cells: vec![(sc.n_robots, sc.n_tasks)],
                seeds_per_cell: seeds,
                warm: false,
                jobs: 1,
            };
            let result = run_sweep(&sc, &opts)?;
            #[derive(Serialize)]
            struct Row {
                seed: u64,
                n_robots: usize,
                n_tasks: usize,
                legs: usize,
                planner_time_us: f64,
                astar_time_us: f64,
                astar_expanded: usize,
                cap_reached: bool,
            }
            let rows: Vec<Row> = result
                .runs
                .iter()
                .map(|r| Row {
                    seed: r.seed,
                    n_robots: r.n_robots,
                    n_tasks: r.n_tasks,
                    legs: r.completed_tasks,
                    planner_time_us: if common.no_timing {
                        0.0
                    } else {
                        micros(r.planner_time)
                    },
                    astar_time_us: if common.no_timing {
                        0.0
                    } else {
                        micros(r.astar_time)
                    },
                    astar_expanded: r.astar_expanded,
                    cap_reached: r.cap_reached,
                })
                .collect();
            let body = match common.format {
                Format::Csv => {
                    let mut csv = String::from(
                        "seed,N,K,legs,planner_time_us,astar_time_us,astar_expanded,cap_reached\n",
                    );
                    for r in &rows {
                        csv.push_str(&format!(
                            "{},{},{},{},{},{},{},{}\n",
                            r.seed,
                            r.n_robots,
                            r.n_tasks,
                            r.legs,
                            r.planner_time_us,
                            r.astar_time_us,
                            r.astar_expanded,
                            r.cap_reached
                        ));
                    }
                    csv
                }
                Format::Json => to_json(&rows)?,
            };
            write_atomic(&common.out, &body)?;
        }
        Command::DumpTrace { common } => {
            let sc = load_scenario(&common)?;
            let world = sc.layout.build()?;
            let mut h = HeuristicStore::new(sc.learning_rate).map_err(EngineError::from)?;
            let run = run_scenario_in(&sc, &world, &mut h)?;
            let body = match common.format {
                Format::Csv => run.trace.to_text(),
                Format::Json => to_json(&run.trace.positions)?,
            };
            write_atomic(&common.out, &body)?;
        }
        Command::GenLayout {
            width,
            height,
            block_rows,
            block_cols,
            shelf_width,
            shelf_height,
            aisle,
            out,
        } => {
            let world = match (width, height, block_rows, block_cols) {
                (Some(w), Some(h), None, None) if (shelf_width, shelf_height, aisle) == (2, 4, 2) => {
                    generate_sized_layout(w, h)
                }
                (None, None, Some(rows), Some(cols)) => generate_layout(&LayoutParams {
                    shelf_width,
                    shelf_height,
                    aisle,
                    ..LayoutParams::new(rows, cols)
                }),
                _ => {
                    return Err(CliError::Invalid(
                        "give either --width and --height, or --block-rows and --block-cols with optional tile sizes"
                            .into(),
                    ))
                }
            }
            .map_err(|e| CliError::Invalid(e.to_string()))?;
            write_atomic(&out, &world.serialize())?;
        }
    }
    Ok(())
}
