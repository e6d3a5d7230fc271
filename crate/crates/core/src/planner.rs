//! Fleet stepping with the recursive excitation/relaxation planner.
//!
//! Each robot descends `U = U_static + U_dynamic` over its neighborhood. The
//! static part is the recursive potential kept in the robot's
//! [`PotentialState`]; the dynamic part is recomputed every tick from the
//! current positions of the other robots. Robots are processed one at a
//! time in ascending id, so a robot always sees the already-moved positions
//! of lower ids.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::sync::Arc;
use std::time::{Duration, Instant};

use arrayvec::ArrayVec;
use thiserror::Error;

use crate::gridworld::{chebyshev, manhattan, GridWorld, Position};
use crate::potential::{
    sensed_region, PotentialError, PotentialParams, PotentialState, SensedRegion, SensorModel,
    SourceTables,
};

pub type TaskId = usize;

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error(transparent)]
    Potential(#[from] PotentialError),
    #[error("robot {0} has no goal")]
    NoGoal(usize),
    #[error("invalid fleet: {0}")]
    InvalidFleet(String),
    #[error("trace line {line}: {message}")]
    TraceParse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Task {
    pub id: TaskId,
    pub pos: Position,
}

/// A completed leg: travel from `start` to the task at `end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub task: TaskId,
    pub start: Position,
    pub end: Position,
    pub length: u64,
    pub start_tick: u64,
    /// Tick at which the task was popped.
    pub end_tick: u64,
}

#[derive(Debug, Clone)]
pub struct RobotState {
    pub id: usize,
    pub pos: Position,
    pub tasks: VecDeque<Task>,
    pub potential: PotentialState,
    pub distance_travelled: u64,
    pub segment_log: Vec<Segment>,
    leg_start: Position,
    leg_start_tick: u64,
    leg_length: u64,
}

impl RobotState {
    pub fn new(
        id: usize,
        pos: Position,
        tasks: impl IntoIterator<Item = Task>,
        world: &GridWorld,
    ) -> Self {
        RobotState {
            id,
            pos,
            tasks: tasks.into_iter().collect(),
            potential: PotentialState::new(id, world),
            distance_travelled: 0,
            segment_log: Vec::new(),
            leg_start: pos,
            leg_start_tick: 0,
            leg_length: 0,
        }
    }

    /// Position of the first outstanding task.
    pub fn goal(&self) -> Option<Position> {
        self.tasks.front().map(|t| t.pos)
    }

    pub fn is_idle(&self) -> bool {
        self.tasks.is_empty()
    }

    fn move_to(&mut self, next: Position) {
        if next != self.pos {
            self.distance_travelled += 1;
            self.leg_length += 1;
            self.pos = next;
        }
    }

    fn pop_task(&mut self, tick: u64) -> Option<Segment> {
        let task = self.tasks.pop_front()?;
        let seg = Segment {
            task: task.id,
            start: self.leg_start,
            end: task.pos,
            length: self.leg_length,
            start_tick: self.leg_start_tick,
            end_tick: tick,
        };
        self.segment_log.push(seg);
        self.leg_start = self.pos;
        self.leg_start_tick = tick;
        self.leg_length = 0;
        self.potential.clear();
        Some(seg)
    }
}

/// Candidate cells with their total potential, in evaluation order, plus the
/// chosen cell.
#[derive(Debug, Clone)]
pub struct StepDecision {
    pub next: Position,
    pub candidates: ArrayVec<(Position, f64), 5>,
}

/// Runs the neighborhood update for `robot` and picks the next cell.
///
/// Ties on potential go to a cell other than the current one, then to the
/// first of up, right, down, left. Cells occupied by another robot are never
/// returned, which keeps the fleet collision-free even after a long wait has
/// excited the current cell past the occupancy spike.
pub fn plan_step_detailed(
    robot: &mut RobotState,
    world: &GridWorld,
    params: &PotentialParams,
    sensor: &SensorModel,
    others: &[Position],
) -> Result<StepDecision, PlanError> {
    decide(robot, world, params, sensor, others, None)
}

/// `fleet` holds robot positions; entry `skip` (the robot itself) is ignored.
fn decide(
    robot: &mut RobotState,
    world: &GridWorld,
    params: &PotentialParams,
    sensor: &SensorModel,
    fleet: &[Position],
    skip: Option<usize>,
) -> Result<StepDecision, PlanError> {
    let goal = robot.goal().ok_or(PlanError::NoGoal(robot.id))?;
    let hood = robot
        .potential
        .update_neighborhood(world, params, sensor, robot.pos, goal)?;

    // Only robots within sensing reach of some neighborhood cell contribute;
    // their terms are summed per cell in fleet order, as dynamic_potential does.
    let reach = sensor.radius + 1;
    let mut dynamic = [0.0f64; 5];
    let mut blocked = [false; 5];
    let pos = robot.pos;
    let nearby = || {
        fleet
            .iter()
            .enumerate()
            .filter(move |&(j, &o)| Some(j) != skip && chebyshev(pos, o) <= reach)
            .map(|(_, &o)| o)
    };
    if nearby().next().is_some() {
        let mut regions = ArrayVec::<SensedRegion, 5>::new();
        for &cell in &hood {
            regions.push(sensed_region(world, sensor, cell)?);
        }
        for o in nearby() {
            for (k, &cell) in hood.iter().enumerate() {
                if regions[k].contains(o) {
                    dynamic[k] += robot.potential.robot_phi(cell, o);
                }
                blocked[k] |= o == cell;
            }
        }
        for d in &mut dynamic {
            *d *= params.dynamic_scale;
        }
    }

    let mut candidates = ArrayVec::new();
    let mut best: Option<(Position, f64)> = None;
    let last = hood.len() - 1;
    for (k, &cell) in hood.iter().enumerate() {
        let stat = robot
            .potential
            .value(cell)
            .expect("neighborhood was just explored");
        let total = stat + dynamic[k];
        candidates.push((cell, total));
        if k != last && blocked[k] {
            continue;
        }
        // strict comparison keeps the earliest candidate; the current cell
        // comes last so it only wins when strictly lower
        if best.is_none_or(|(_, b)| total < b) {
            best = Some((cell, total));
        }
    }
    let next = best.map_or(robot.pos, |(c, _)| c);
    Ok(StepDecision { next, candidates })
}

/// Next cell for `robot` given the other robots' current positions.
pub fn plan_step(
    robot: &mut RobotState,
    world: &GridWorld,
    params: &PotentialParams,
    sensor: &SensorModel,
    others: &[Position],
) -> Result<Position, PlanError> {
    plan_step_detailed(robot, world, params, sensor, others).map(|d| d.next)
}

#[derive(Debug, Clone)]
pub struct FleetState {
    pub robots: Vec<RobotState>,
    pub tick: u64,
    /// Wall-clock time of the per-tick planning loops so far.
    pub planning_time: Duration,
    // source tables shared by every robot; built on the first planned move
    tables: Option<Arc<SourceTables>>,
    scratch: Vec<Position>,
}

impl FleetState {
    /// Checks that robots are numbered 0..N, stand on reachable cells and do
    /// not share a cell.
    pub fn new(robots: Vec<RobotState>, world: &GridWorld) -> Result<Self, PlanError> {
        for (i, r) in robots.iter().enumerate() {
            if r.id != i {
                return Err(PlanError::InvalidFleet(format!(
                    "robot at index {i} has id {}",
                    r.id
                )));
            }
            if !world.is_reachable(r.pos) {
                return Err(PlanError::InvalidFleet(format!(
                    "robot {i} starts off the reachable set at {}",
                    r.pos
                )));
            }
            if let Some(t) = r.tasks.iter().find(|t| !world.is_reachable(t.pos)) {
                return Err(PlanError::InvalidFleet(format!(
                    "task {} lies on an obstacle at {}",
                    t.id, t.pos
                )));
            }
            if robots[..i].iter().any(|o| o.pos == r.pos) {
                return Err(PlanError::InvalidFleet(format!(
                    "two robots start at {}",
                    r.pos
                )));
            }
        }
        Ok(FleetState {
            robots,
            tick: 0,
            planning_time: Duration::ZERO,
            tables: None,
            scratch: Vec::new(),
        })
    }

    pub fn positions(&self) -> Vec<Position> {
        self.robots.iter().map(|r| r.pos).collect()
    }

    pub fn outstanding_tasks(&self) -> usize {
        self.robots.iter().map(|r| r.tasks.len()).sum()
    }

    pub fn all_done(&self) -> bool {
        self.robots.iter().all(RobotState::is_idle)
    }
}

/// One tick: every robot with outstanding tasks either pops the task it is
/// standing on or makes one planned move. Returns the legs completed this
/// tick.
pub fn step_fleet(
    fleet: &mut FleetState,
    world: &GridWorld,
    params: &PotentialParams,
    sensor: &SensorModel,
) -> Result<Vec<(usize, Segment)>, PlanError> {
    let started = Instant::now();
    let mut positions = std::mem::take(&mut fleet.scratch);
    positions.clear();
    positions.extend(fleet.robots.iter().map(|r| r.pos));
    let mut completed = Vec::new();
    let tick = fleet.tick;
    for i in 0..fleet.robots.len() {
        let robot = &mut fleet.robots[i];
        let Some(goal) = robot.goal() else { continue };
        if robot.pos == goal {
            if let Some(seg) = robot.pop_task(tick) {
                completed.push((i, seg));
            }
            continue;
        }
        robot
            .potential
            .share_tables(&mut fleet.tables, params, sensor);
        let next = decide(robot, world, params, sensor, &positions, Some(i))?.next;
        robot.move_to(next);
        positions[i] = next;
    }
    fleet.planning_time += started.elapsed();
    fleet.scratch = positions;
    fleet.tick += 1;
    Ok(completed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Completed,
    CapReached,
}

/// Fleet positions per tick (index 0 is the initial configuration) and the
/// completed legs of every robot.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub positions: Vec<Vec<Position>>,
    pub outstanding: Vec<usize>,
    pub segments: Vec<Vec<Segment>>,
}

impl SimTrace {
    pub fn robot_count(&self) -> usize {
        self.positions.first().map_or(0, Vec::len)
    }

    /// Ticks simulated.
    pub fn ticks(&self) -> u64 {
        self.positions.len().saturating_sub(1) as u64
    }

    /// Number of ticks robot `i` changed cell, over the first `upto` ticks.
    pub fn moves(&self, robot: usize, upto: u64) -> u64 {
        self.positions
            .windows(2)
            .take(upto as usize)
            .filter(|w| w[0][robot] != w[1][robot])
            .count() as u64
    }

    /// `tick; id:x,y; id:x,y; ...`, one line per tick.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (tick, row) in self.positions.iter().enumerate() {
            let _ = write!(out, "{tick}");
            for (id, p) in row.iter().enumerate() {
                let _ = write!(out, "; {id}:{},{}", p.x, p.y);
            }
            out.push('\n');
        }
        out
    }

    /// Parses the positions of a text trace.
    pub fn parse_positions(text: &str) -> Result<Vec<Vec<Position>>, PlanError> {
        let mut rows = Vec::new();
        for (n, line) in text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            let err = |message: String| PlanError::TraceParse {
                line: n + 1,
                message,
            };
            let mut fields = line.split(';').map(str::trim);
            let tick: usize = fields
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| err("missing tick".into()))?;
            if tick != rows.len() {
                return Err(err(format!("expected tick {}, found {tick}", rows.len())));
            }
            let mut row = Vec::new();
            for (expected, field) in fields.enumerate() {
                let (id, xy) = field
                    .split_once(':')
                    .ok_or_else(|| err(format!("bad entry {field:?}")))?;
                let (x, y) = xy
                    .split_once(',')
                    .ok_or_else(|| err(format!("bad entry {field:?}")))?;
                let parsed = (
                    id.trim().parse::<usize>(),
                    x.trim().parse(),
                    y.trim().parse(),
                );
                match parsed {
                    (Ok(id), Ok(x), Ok(y)) if id == expected => row.push(Position::new(x, y)),
                    _ => return Err(err(format!("bad entry {field:?}"))),
                }
            }
            rows.push(row);
        }
        Ok(rows)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: SimTrace,
    pub outcome: Outcome,
    pub planning_time: Duration,
}

/// Steps the fleet until no tasks remain or `step_cap` ticks have run.
pub fn run_until_done(
    mut fleet: FleetState,
    world: &GridWorld,
    params: &PotentialParams,
    sensor: &SensorModel,
    step_cap: u64,
) -> Result<RunOutput, PlanError> {
    let mut positions = vec![fleet.positions()];
    let mut outstanding = vec![fleet.outstanding_tasks()];
    while !fleet.all_done() && fleet.tick < step_cap {
        step_fleet(&mut fleet, world, params, sensor)?;
        positions.push(fleet.positions());
        outstanding.push(fleet.outstanding_tasks());
    }
    let outcome = if fleet.all_done() {
        Outcome::Completed
    } else {
        Outcome::CapReached
    };
    Ok(RunOutput {
        trace: SimTrace {
            positions,
            outstanding,
            segments: fleet.robots.iter().map(|r| r.segment_log.clone()).collect(),
        },
        outcome,
        planning_time: fleet.planning_time,
    })
}

/// Default tick budget: `50 (width + height) max(1, tasks per robot)`.
pub fn default_step_cap(world: &GridWorld, n_robots: usize, n_tasks: usize) -> u64 {
    let per_robot = n_tasks.div_ceil(n_robots.max(1)).max(1);
    50 * (world.width() + world.height()) as u64 * per_robot as u64
}

/// Checks collision-freedom, unit moves and non-increasing task counts over a
/// whole trace. Returns a description of the first violation.
pub fn check_trace_safety(trace: &SimTrace) -> Result<(), String> {
    for (t, row) in trace.positions.iter().enumerate() {
        for i in 0..row.len() {
            if row[..i].contains(&row[i]) {
                return Err(format!("tick {t}: two robots share {}", row[i]));
            }
        }
    }
    for (t, w) in trace.positions.windows(2).enumerate() {
        for (i, (a, b)) in w[0].iter().zip(&w[1]).enumerate() {
            if manhattan(*a, *b) > 1 {
                return Err(format!("tick {t}: robot {i} jumped from {a} to {b}"));
            }
        }
    }
    for (t, w) in trace.outstanding.windows(2).enumerate() {
        if w[1] > w[0] {
            return Err(format!(
                "tick {t}: outstanding tasks grew from {} to {}",
                w[0], w[1]
            ));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(x: i32, y: i32) -> Position {
        Position::new(x, y)
    }

    fn task(id: TaskId, pos: Position) -> Task {
        Task { id, pos }
    }

    fn defaults() -> (PotentialParams, SensorModel) {
        (PotentialParams::default(), SensorModel::default())
    }

    #[test]
    fn moves_toward_goal_in_open_room() {
        let room = GridWorld::open_room(15, 15).unwrap();
        let (params, sensor) = defaults();
        let mut robot = RobotState::new(0, p(7, 7), [task(1, p(11, 7))], &room);
        assert_eq!(
            plan_step(&mut robot, &room, &params, &sensor, &[]).unwrap(),
            p(8, 7)
        );
    }

    #[test]
    fn candidates_match_reference_potentials() {
        use crate::gridworld::generate_layout;
        use crate::gridworld::LayoutParams;
        use crate::potential::{dynamic_potential, static_potential_initial};
        use rand::seq::SliceRandom;
        use rand::SeedableRng;

        let world = generate_layout(&LayoutParams::new(3, 4)).unwrap();
        let (params, sensor) = defaults();
        let cells = world.reachable_cells();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            // crowded fleets so most steps see several robots in range
            let picks: Vec<Position> = cells.choose_multiple(&mut rng, 40).copied().collect();
            let (me, goal, others) = (picks[0], picks[1], &picks[2..]);
            let mut robot = RobotState::new(0, me, [task(1, goal)], &world);
            let d = plan_step_detailed(&mut robot, &world, &params, &sensor, others).unwrap();
            let hood = world.neighborhood(me).unwrap();
            assert_eq!(d.candidates.len(), hood.len());
            for (&(cell, total), &expected_cell) in d.candidates.iter().zip(&hood) {
                assert_eq!(cell, expected_cell);
                let u0 = static_potential_initial(&world, &params, &sensor, cell, goal).unwrap();
                let dynamic = dynamic_potential(&world, &params, &sensor, cell, others).unwrap();
                assert_eq!(total, u0 + dynamic);
            }
            assert!(d.next == me || !others.contains(&d.next));
        }
    }

    #[test]
    fn surrounded_robot_stays() {
        let room = GridWorld::open_room(15, 15).unwrap();
        let (params, sensor) = defaults();
        let mut robot = RobotState::new(0, p(7, 7), [task(1, p(11, 7))], &room);
        let others = [p(7, 6), p(8, 7), p(7, 8), p(6, 7)];
        for _ in 0..30 {
            assert_eq!(
                plan_step(&mut robot, &room, &params, &sensor, &others).unwrap(),
                p(7, 7)
            );
        }
    }

    #[test]
    fn no_goal_is_an_error() {
        let room = GridWorld::open_room(5, 5).unwrap();
        let (params, sensor) = defaults();
        let mut robot = RobotState::new(3, p(2, 2), [], &room);
        assert_eq!(
            plan_step(&mut robot, &room, &params, &sensor, &[]),
            Err(PlanError::NoGoal(3))
        );
    }

    #[test]
    fn corridor_head_on_never_swaps() {
        // 1-wide corridor with a side pocket so the robots can pass
        let world = GridWorld::parse(
            "#########\n\
             #.......#\n\
             ####.####\n\
             #########\n",
        )
        .unwrap();
        let (params, sensor) = defaults();
        let robots = vec![
            RobotState::new(0, p(3, 1), [task(1, p(7, 1))], &world),
            RobotState::new(1, p(4, 1), [task(2, p(1, 1))], &world),
        ];
        let mut fleet = FleetState::new(robots, &world).unwrap();
        step_fleet(&mut fleet, &world, &params, &sensor).unwrap();
        // robot 0 wants (4,1) which robot 1 still holds
        assert_ne!(fleet.robots[0].pos, p(4, 1));
        let out = run_until_done(fleet, &world, &params, &sensor, 500).unwrap();
        assert_eq!(out.outcome, Outcome::Completed);
        assert!(out.trace.positions.iter().any(|t| t.contains(&p(4, 2))));
        check_trace_safety(&out.trace).unwrap();
    }

    #[test]
    fn idle_robot_blocks_but_does_not_move() {
        let room = GridWorld::open_room(7, 3).unwrap();
        let (params, sensor) = defaults();
        let robots = vec![
            RobotState::new(0, p(1, 1), [task(1, p(5, 1))], &room),
            RobotState::new(1, p(3, 1), [], &room),
        ];
        let fleet = FleetState::new(robots, &room).unwrap();
        let out = run_until_done(fleet, &room, &params, &sensor, 200).unwrap();
        assert!(out.trace.positions.iter().all(|row| row[1] == p(3, 1)));
        // the idle robot seals the only corridor
        assert_eq!(out.outcome, Outcome::CapReached);
        check_trace_safety(&out.trace).unwrap();
    }

    #[test]
    fn adjacent_goal_arrival_and_pop_timing() {
        let room = GridWorld::open_room(5, 5).unwrap();
        let (params, sensor) = defaults();
        let robots = vec![RobotState::new(0, p(1, 1), [task(1, p(2, 1))], &room)];
        let mut fleet = FleetState::new(robots, &room).unwrap();
        assert!(step_fleet(&mut fleet, &room, &params, &sensor)
            .unwrap()
            .is_empty());
        assert_eq!(fleet.robots[0].pos, p(2, 1));
        let done = step_fleet(&mut fleet, &room, &params, &sensor).unwrap();
        assert_eq!(done.len(), 1);
        assert_eq!(done[0].1.end_tick, 1);
        assert_eq!(done[0].1.length, 1);
        assert!(fleet.all_done());
        assert_eq!(fleet.tick, 2);
    }

    #[test]
    fn tasks_on_start_complete_by_pops() {
        let room = GridWorld::open_room(6, 6).unwrap();
        let (params, sensor) = defaults();
        let robots = vec![
            RobotState::new(0, p(1, 1), [task(1, p(1, 1)), task(2, p(1, 1))], &room),
            RobotState::new(1, p(3, 3), [task(3, p(3, 3))], &room),
        ];
        let fleet = FleetState::new(robots, &room).unwrap();
        let out = run_until_done(fleet, &room, &params, &sensor, 100).unwrap();
        assert_eq!(out.outcome, Outcome::Completed);
        assert_eq!(out.trace.ticks(), 2);
        assert!(out.trace.segments.iter().flatten().all(|s| s.length == 0));
    }

    #[test]
    fn sealed_goal_hits_cap() {
        let world = GridWorld::parse(
            "#######\n\
             #.....#\n\
             #.###.#\n\
             #.#.#.#\n\
             #.###.#\n\
             #######\n",
        )
        .unwrap();
        let (params, sensor) = defaults();
        let robots = vec![RobotState::new(0, p(1, 1), [task(1, p(3, 3))], &world)];
        let fleet = FleetState::new(robots, &world).unwrap();
        let out = run_until_done(fleet, &world, &params, &sensor, 300).unwrap();
        assert_eq!(out.outcome, Outcome::CapReached);
        assert_eq!(out.trace.ticks(), 300);
        check_trace_safety(&out.trace).unwrap();
    }

    #[test]
    fn dead_end_pocket_is_escaped() {
        // one-wide pocket whose closed end faces the goal
        let walls = [(9, 8), (10, 8), (11, 8), (9, 9), (11, 9), (9, 10), (11, 10)];
        let world = GridWorld::open_room(21, 21)
            .unwrap()
            .with_obstacles(walls.map(|(x, y)| p(x, y)));
        let (params, sensor) = defaults();
        let goal = p(10, 3);
        let mut robot = RobotState::new(0, p(10, 9), [task(1, goal)], &world);

        let first = plan_step_detailed(&mut robot, &world, &params, &sensor, &[]).unwrap();
        assert_eq!(first.next, p(10, 9));
        let before = robot.potential.value(p(10, 9)).unwrap();
        let second = plan_step(&mut robot, &world, &params, &sensor, &[]).unwrap();
        // the stay excited the bottom of the pocket past the only exit
        assert_eq!(robot.potential.value(p(10, 9)).unwrap(), 15.0 * before);
        assert_eq!(second, p(10, 10));

        let robots = vec![RobotState::new(0, p(10, 9), [task(1, goal)], &world)];
        let fleet = FleetState::new(robots, &world).unwrap();
        let out = run_until_done(fleet, &world, &params, &sensor, 500).unwrap();
        assert_eq!(out.outcome, Outcome::Completed);
        check_trace_safety(&out.trace).unwrap();
    }

    #[test]
    fn fleet_validation() {
        let room = GridWorld::open_room(5, 5).unwrap();
        let dup = vec![
            RobotState::new(0, p(1, 1), [], &room),
            RobotState::new(1, p(1, 1), [], &room),
        ];
        assert!(FleetState::new(dup, &room).is_err());
        let wall = vec![RobotState::new(0, p(0, 1), [], &room)];
        assert!(FleetState::new(wall, &room).is_err());
    }

    #[test]
    fn trace_text_round_trip() {
        let trace = SimTrace {
            positions: vec![vec![p(1, 2), p(3, 4)], vec![p(2, 2), p(3, 4)]],
            outstanding: vec![2, 2],
            segments: vec![vec![], vec![]],
        };
        let text = trace.to_text();
        assert_eq!(text, "0; 0:1,2; 1:3,4\n1; 0:2,2; 1:3,4\n");
        assert_eq!(SimTrace::parse_positions(&text).unwrap(), trace.positions);
        assert!(SimTrace::parse_positions("0; 1:1,2\n").is_err());
        assert!(SimTrace::parse_positions("3; 0:1,2\n").is_err());
    }
}
