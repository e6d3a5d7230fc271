//! Potential-field mathematics: the parametric potential family, sensing
//! restricted potentials, the static/dynamic split, and the recursive
//! excitation/relaxation update over a robot's explored cells.

use std::sync::Arc;

use arrayvec::ArrayVec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridworld::{chebyshev, distance, GridError, GridWorld, Norm, Position};

#[derive(Debug, Error, PartialEq)]
pub enum PotentialError {
    #[error("invalid potential parameters: {0}")]
    InvalidParams(String),
    #[error("{0:?} potential is singular at zero distance (offset 0 with negative exponent)")]
    Singular(SourceClass),
    #[error("relative frequency {0} outside (0, 1)")]
    FrequencyOutOfRange(f64),
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SourceClass {
    Goal,
    Obstacle,
    Robot,
}

/// One summand `c * (d_p(s, s') + offset)^e`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialTerm {
    pub coefficient: f64,
    pub norm: Norm,
    pub exponent: f64,
    pub offset: f64,
}

impl PotentialTerm {
    fn eval(&self, s: Position, source: Position) -> f64 {
        let base = distance(s, source, self.norm) + self.offset;
        let e = self.exponent;
        let shaped = if e == 1.0 {
            base
        } else if e.fract() == 0.0 && e.abs() <= 64.0 {
            base.powi(e as i32)
        } else {
            base.powf(e)
        };
        self.coefficient * shaped
    }

    fn singular(&self) -> bool {
        self.coefficient != 0.0 && self.exponent < 0.0 && self.offset == 0.0
    }
}

/// Shapes of the goal/obstacle/robot potentials plus the recursion factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialParams {
    pub goal: Vec<PotentialTerm>,
    pub obstacle: Vec<PotentialTerm>,
    pub robot: Vec<PotentialTerm>,
    /// Excitation factor, > 1.
    pub excitation: f64,
    /// Relaxation factor, in [0, 1).
    pub relaxation: f64,
    /// Multiplier on the summed robot-source potentials.
    pub dynamic_scale: f64,
}

pub const DEFAULT_EPSILON: f64 = 1e-9;

impl Default for PotentialParams {
    /// Chebyshev goal attraction, `0.1 (d_2 + 1e-9)^-2` obstacle repulsion,
    /// the same shape scaled by 0.01 for other robots, gamma 15, alpha 0.05.
    fn default() -> Self {
        let repulsive = PotentialTerm {
            coefficient: 0.1,
            norm: Norm::L2,
            exponent: -2.0,
            offset: DEFAULT_EPSILON,
        };
        PotentialParams {
            goal: vec![PotentialTerm {
                coefficient: 1.0,
                norm: Norm::LInf,
                exponent: 1.0,
                offset: 0.0,
            }],
            obstacle: vec![repulsive],
            robot: vec![repulsive],
            excitation: 15.0,
            relaxation: 0.05,
            dynamic_scale: 0.01,
        }
    }
}

impl PotentialParams {
    pub fn with_factors(excitation: f64, relaxation: f64) -> Self {
        PotentialParams {
            excitation,
            relaxation,
            ..PotentialParams::default()
        }
    }

    pub fn terms(&self, class: SourceClass) -> &[PotentialTerm] {
        match class {
            SourceClass::Goal => &self.goal,
            SourceClass::Obstacle => &self.obstacle,
            SourceClass::Robot => &self.robot,
        }
    }

    pub fn validate(&self) -> Result<(), PotentialError> {
        let bad = |msg: String| Err(PotentialError::InvalidParams(msg));
        if !(self.excitation > 1.0 && self.excitation.is_finite()) {
            return bad(format!(
                "excitation factor {} must lie in (1, inf)",
                self.excitation
            ));
        }
        if !(0.0..1.0).contains(&self.relaxation) {
            return bad(format!(
                "relaxation factor {} must lie in [0, 1)",
                self.relaxation
            ));
        }
        if !(self.dynamic_scale >= 0.0 && self.dynamic_scale.is_finite()) {
            return bad(format!(
                "dynamic scale {} must be nonnegative",
                self.dynamic_scale
            ));
        }
        for class in [SourceClass::Goal, SourceClass::Obstacle, SourceClass::Robot] {
            for t in self.terms(class) {
                if !(t.coefficient.is_finite() && t.exponent.is_finite() && t.offset.is_finite()) {
                    return bad(format!("{class:?} term has non-finite parameters"));
                }
                if t.coefficient < 0.0 || t.offset < 0.0 {
                    return bad(format!(
                        "{class:?} term needs nonnegative coefficient and offset"
                    ));
                }
                if t.coefficient == 0.0 {
                    continue;
                }
                let increasing = t.exponent > 0.0;
                match class {
                    SourceClass::Goal if !increasing => {
                        return bad("goal terms must increase with distance".into())
                    }
                    SourceClass::Obstacle | SourceClass::Robot if increasing => {
                        return bad(format!("{class:?} terms must not increase with distance"))
                    }
                    SourceClass::Robot if t.offset <= 0.0 => {
                        return bad("robot terms need a positive offset to stay finite".into())
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    /// Unsensed potential of `source` at `s`.
    pub fn phi(
        &self,
        class: SourceClass,
        s: Position,
        source: Position,
    ) -> Result<f64, PotentialError> {
        let terms = self.terms(class);
        if s == source && terms.iter().any(PotentialTerm::singular) {
            return Err(PotentialError::Singular(class));
        }
        Ok(self.phi_raw(class, s, source))
    }

    #[inline]
    pub(crate) fn phi_raw(&self, class: SourceClass, s: Position, source: Position) -> f64 {
        self.terms(class).iter().map(|t| t.eval(s, source)).sum()
    }

    /// `gamma * u`.
    pub fn excite(&self, u_prev: f64) -> f64 {
        self.excitation * u_prev
    }

    /// `(1 - alpha) * u + alpha * u_init`.
    pub fn relax(&self, u_prev: f64, u_init: f64) -> f64 {
        u_prev + self.relaxation * (u_init - u_prev)
    }
}

/// Square proximity sensor of Chebyshev radius `radius`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorModel {
    pub radius: u32,
}

impl Default for SensorModel {
    fn default() -> Self {
        SensorModel { radius: 3 }
    }
}

impl SensorModel {
    pub fn new(radius: u32) -> Result<Self, PotentialError> {
        let s = SensorModel { radius };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), PotentialError> {
        if self.radius < 2 {
            return Err(PotentialError::InvalidParams(format!(
                "sensor radius {} must be at least 2",
                self.radius
            )));
        }
        Ok(())
    }

    pub fn senses(&self, from: Position, target: Position) -> bool {
        chebyshev(from, target) <= self.radius
    }
}

/// Axis-aligned rectangle of cells, inclusive on both ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SensedRegion {
    pub min: Position,
    pub max: Position,
}

impl SensedRegion {
    pub fn contains(&self, p: Position) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub fn cells(&self) -> impl Iterator<Item = Position> + '_ {
        (self.min.y..=self.max.y)
            .flat_map(move |y| (self.min.x..=self.max.x).map(move |x| Position::new(x, y)))
    }
}

/// The region every cell of `N(s)` can sense: the intersection of the
/// sensing squares centred on each neighborhood member.
pub fn sensed_region(
    world: &GridWorld,
    sensor: &SensorModel,
    s: Position,
) -> Result<SensedRegion, PotentialError> {
    if !world.is_reachable(s) {
        return Err(GridError::NotReachable(s).into());
    }
    let r = sensor.radius as i32;
    // bits follow MOVES: up, right, down, left
    let bits = world.open_moves(s);
    let open = |k: u8| i32::from((bits >> k) & 1);
    Ok(SensedRegion {
        min: Position::new(s.x - r + open(1), s.y - r + open(2)),
        max: Position::new(s.x + r - open(3), s.y + r - open(0)),
    })
}

/// `phi` when `source` lies inside the consistently sensed region of `s`,
/// zero otherwise.
pub fn phi_sensed(
    world: &GridWorld,
    params: &PotentialParams,
    sensor: &SensorModel,
    class: SourceClass,
    s: Position,
    source: Position,
) -> Result<f64, PotentialError> {
    if sensed_region(world, sensor, s)?.contains(source) {
        params.phi(class, s, source)
    } else {
        Ok(0.0)
    }
}

/// Sum of sensed obstacle repulsion at `s`.
pub fn obstacle_potential(
    world: &GridWorld,
    params: &PotentialParams,
    sensor: &SensorModel,
    s: Position,
) -> Result<f64, PotentialError> {
    let region = sensed_region(world, sensor, s)?;
    let x0 = region.min.x.max(0) as usize;
    let x1 = region.max.x.min(world.width() as i32 - 1) as usize;
    let y0 = region.min.y.max(0) as usize;
    let y1 = region.max.y.min(world.height() as i32 - 1) as usize;
    // each row summed left to right, rows added top to bottom
    let mut sum = 0.0;
    for y in y0..=y1 {
        let mut row_sum = 0.0;
        for x in x0..=x1 {
            if world.obstacle_row(y)[x] {
                row_sum +=
                    params.phi_raw(SourceClass::Obstacle, s, Position::new(x as i32, y as i32));
            }
        }
        sum += row_sum;
    }
    Ok(sum)
}

/// Goal attraction plus sensed obstacle repulsion: the value a cell takes the
/// first time it is explored.
pub fn static_potential_initial(
    world: &GridWorld,
    params: &PotentialParams,
    sensor: &SensorModel,
    s: Position,
    goal: Position,
) -> Result<f64, PotentialError> {
    if !world.is_reachable(goal) {
        return Err(GridError::NotReachable(goal).into());
    }
    let attraction = params.phi(SourceClass::Goal, s, goal)?;
    Ok(attraction + obstacle_potential(world, params, sensor, s)?)
}

/// Scaled sum of sensed robot-source potentials at `s` from the given robot
/// positions (which must not include the evaluating robot).
pub fn dynamic_potential(
    world: &GridWorld,
    params: &PotentialParams,
    sensor: &SensorModel,
    s: Position,
    others: &[Position],
) -> Result<f64, PotentialError> {
    let reach = sensor.radius + 1;
    if !others.iter().any(|&o| chebyshev(s, o) <= reach) {
        return Ok(0.0);
    }
    let region = sensed_region(world, sensor, s)?;
    let sum: f64 = others
        .iter()
        .filter(|&&o| region.contains(o))
        .map(|&o| params.phi_raw(SourceClass::Robot, s, o))
        .sum();
    Ok(params.dynamic_scale * sum)
}

/// Per-robot store of the time-recursive static potential over explored
/// cells. A dense slot per lattice cell, stamped with a generation so that
/// clearing between tasks is O(1), points into compact per-task storage.
#[derive(Debug, Clone)]
pub struct PotentialState {
    owner: usize,
    width: usize,
    height: usize,
    slots: Vec<Slot>,
    generation: u32,
    entries: Vec<CellPotential>,
    explored: Vec<Position>,
    kernel: Option<Arc<SourceTables>>,
}

#[derive(Debug, Clone, Copy, Default)]
struct Slot {
    stamp: u32,
    index: u32,
}

#[derive(Debug, Clone, Copy)]
struct CellPotential {
    value: f64,
    initial: f64,
}

/// Obstacle and robot source potentials tabulated by offset over the
/// sensing square.
#[derive(Debug, Clone)]
pub(crate) struct SourceTables {
    terms: Vec<PotentialTerm>,
    robot_terms: Vec<PotentialTerm>,
    radius: u32,
    values: Vec<f64>,
    robot: Vec<f64>,
    // for narrow squares: sum of each row's obstacle terms, indexed by
    // (row << side) | occupancy bits
    row_sums: Vec<f64>,
}

/// Widest sensing square that gets per-row sum tables.
const ROW_TABLE_MAX_SIDE: usize = 7;

impl SourceTables {
    fn new(params: &PotentialParams, sensor: &SensorModel) -> Self {
        let r = sensor.radius as i32;
        let origin = Position::new(0, 0);
        // terms see only |dx| and |dy|, so one quadrant fills the square
        let table = |class| {
            let q = (r + 1) as usize;
            let mut quadrant = Vec::with_capacity(q * q);
            for dy in 0..=r {
                for dx in 0..=r {
                    quadrant.push(params.phi_raw(class, origin, Position::new(dx, dy)));
                }
            }
            let mut full = Vec::with_capacity((2 * r + 1).pow(2) as usize);
            for dy in -r..=r {
                for dx in -r..=r {
                    full.push(
                        quadrant[dy.unsigned_abs() as usize * q + dx.unsigned_abs() as usize],
                    );
                }
            }
            full
        };
        let values = table(SourceClass::Obstacle);
        let side = (2 * r + 1) as usize;
        let mut row_sums = Vec::new();
        if side <= ROW_TABLE_MAX_SIDE {
            row_sums = vec![0.0; side << side];
            for (row, t) in row_sums.chunks_exact_mut(1 << side).enumerate() {
                let v = &values[row * side..(row + 1) * side];
                // masks below 2^high are done; adding bit `high` last keeps
                // the ascending summation order
                for (high, &vh) in v.iter().enumerate() {
                    let (done, rest) = t.split_at_mut(1 << high);
                    for (out, &lower) in rest[..1 << high].iter_mut().zip(done.iter()) {
                        *out = lower + vh;
                    }
                }
            }
        }
        SourceTables {
            terms: params.obstacle.clone(),
            robot_terms: params.robot.clone(),
            radius: sensor.radius,
            values,
            robot: table(SourceClass::Robot),
            row_sums,
        }
    }

    fn matches(&self, params: &PotentialParams, sensor: &SensorModel) -> bool {
        self.radius == sensor.radius
            && self.terms == params.obstacle
            && self.robot_terms == params.robot
    }

    /// Same sum as [`obstacle_potential`], read from the table.
    fn potential(
        &self,
        world: &GridWorld,
        sensor: &SensorModel,
        s: Position,
    ) -> Result<f64, PotentialError> {
        let region = sensed_region(world, sensor, s)?;
        let r = self.radius as i32;
        let side = (2 * r + 1) as usize;
        let x0 = region.min.x.max(0);
        let x_end = (region.max.x + 1).min(world.width() as i32);
        let y0 = region.min.y.max(0);
        let y_end = (region.max.y + 1).min(world.height() as i32);
        let mut sum = 0.0;
        if !self.row_sums.is_empty() {
            let shift = x0 - (s.x - r);
            let len = (x_end - x0) as usize;
            for y in y0..y_end {
                let bits = world.obstacle_bits(y as usize, x0 as usize, len) << shift;
                sum += self.row_sums[((y - s.y + r) as usize) << side | bits as usize];
            }
            return Ok(sum);
        }
        for y in y0..y_end {
            let row_start = (y - s.y + r) as usize * side;
            let mut row_sum = 0.0;
            let mut x = x0;
            while x < x_end {
                let len = (x_end - x).min(64);
                let mut bits = world.obstacle_bits(y as usize, x as usize, len as usize);
                let start = row_start + (x - s.x + r) as usize;
                while bits != 0 {
                    row_sum += self.values[start + bits.trailing_zeros() as usize];
                    bits &= bits - 1;
                }
                x += len;
            }
            sum += row_sum;
        }
        Ok(sum)
    }
}

impl PotentialState {
    pub fn new(owner: usize, world: &GridWorld) -> Self {
        PotentialState {
            owner,
            width: world.width(),
            height: world.height(),
            slots: vec![Slot::default(); world.width() * world.height()],
            generation: 1,
            entries: Vec::new(),
            explored: Vec::new(),
            kernel: None,
        }
    }

    pub fn owner(&self) -> usize {
        self.owner
    }

    /// Points this state at the fleet-wide tables, building them first if
    /// `shared` is missing or was built for other parameters.
    pub(crate) fn share_tables(
        &mut self,
        shared: &mut Option<Arc<SourceTables>>,
        params: &PotentialParams,
        sensor: &SensorModel,
    ) {
        if !shared.as_ref().is_some_and(|t| t.matches(params, sensor)) {
            *shared = Some(Arc::new(SourceTables::new(params, sensor)));
        }
        let tables = shared.as_ref().expect("set above");
        if !self.kernel.as_ref().is_some_and(|k| Arc::ptr_eq(k, tables)) {
            self.kernel = Some(Arc::clone(tables));
        }
    }

    /// Unscaled robot-source potential at `s` from a robot at `source`, read
    /// from the table built by the last [`update_neighborhood`]. `source`
    /// must lie in the sensing square of `s`.
    ///
    /// [`update_neighborhood`]: PotentialState::update_neighborhood
    pub(crate) fn robot_phi(&self, s: Position, source: Position) -> f64 {
        let k = self
            .kernel
            .as_ref()
            .expect("table built by update_neighborhood");
        let r = k.radius as i32;
        let side = 2 * r + 1;
        k.robot[((source.y - s.y + r) * side + source.x - s.x + r) as usize]
    }

    fn slot(&self, p: Position) -> Option<usize> {
        (p.x >= 0 && p.y >= 0 && (p.x as usize) < self.width && (p.y as usize) < self.height)
            .then(|| p.y as usize * self.width + p.x as usize)
    }

    fn entry(&self, p: Position) -> Option<&CellPotential> {
        let slot = self.slots[self.slot(p)?];
        (slot.stamp == self.generation).then(|| &self.entries[slot.index as usize])
    }

    pub fn is_explored(&self, p: Position) -> bool {
        self.entry(p).is_some()
    }

    /// Current recursive static potential of an explored cell.
    pub fn value(&self, p: Position) -> Option<f64> {
        self.entry(p).map(|c| c.value)
    }

    /// Value the cell was initialised with when first explored.
    pub fn initial(&self, p: Position) -> Option<f64> {
        self.entry(p).map(|c| c.initial)
    }

    /// Explored cells in discovery order.
    pub fn explored(&self) -> &[Position] {
        &self.explored
    }

    pub fn len(&self) -> usize {
        self.explored.len()
    }

    pub fn is_empty(&self) -> bool {
        self.explored.is_empty()
    }

    /// Forgets every explored cell.
    pub fn clear(&mut self) {
        self.entries.clear();
        self.explored.clear();
        self.generation = self.generation.wrapping_add(1);
        if self.generation == 0 {
            self.slots.fill(Slot::default());
            self.generation = 1;
        }
    }

    /// One pass of the recursive update over `N(robot_pos)`: cells seen for
    /// the first time are initialised, the robot's own cell is excited and
    /// the rest are relaxed toward their initial values. Returns the
    /// neighborhood in the order of [`GridWorld::neighborhood`].
    pub fn update_neighborhood(
        &mut self,
        world: &GridWorld,
        params: &PotentialParams,
        sensor: &SensorModel,
        robot_pos: Position,
        goal: Position,
    ) -> Result<ArrayVec<Position, 5>, PotentialError> {
        if !world.is_reachable(goal) {
            return Err(GridError::NotReachable(goal).into());
        }
        if !self
            .kernel
            .as_ref()
            .is_some_and(|k| k.matches(params, sensor))
        {
            self.kernel = Some(Arc::new(SourceTables::new(params, sensor)));
        }
        let kernel = self.kernel.as_ref().expect("kernel built above");
        let hood = world.neighborhood(robot_pos)?;
        for &cell in &hood {
            let i = self
                .slot(cell)
                .expect("neighborhood cells lie inside the lattice");
            let slot = self.slots[i];
            if slot.stamp != self.generation {
                let u0 = params.phi(SourceClass::Goal, cell, goal)?
                    + kernel.potential(world, sensor, cell)?;
                self.slots[i] = Slot {
                    stamp: self.generation,
                    index: self.entries.len() as u32,
                };
                self.entries.push(CellPotential {
                    value: u0,
                    initial: u0,
                });
                self.explored.push(cell);
            } else {
                let e = &mut self.entries[slot.index as usize];
                e.value = if cell == robot_pos {
                    params.excite(e.value)
                } else {
                    params.relax(e.value, e.initial)
                };
            }
        }
        Ok(hood)
    }
}

/// Outcome of the expected-growth test on a cell visited with relative
/// frequency `p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Divergence {
    Divergent,
    Bounded,
}

/// Mean growth factor `p * gamma + (1 - p)(1 - alpha)` of the recursion.
pub fn growth_factor(p: f64, gamma: f64, alpha: f64) -> f64 {
    p * gamma + (1.0 - p) * (1.0 - alpha)
}

/// Smallest excitation factor for which the expected potential diverges.
pub fn critical_excitation(p: f64, alpha: f64) -> f64 {
    1.0 - alpha + alpha / p
}

/// Classifies whether the expected potential of a cell visited with relative
/// frequency `p` grows without bound (`gamma > 1 - alpha + alpha / p`).
pub fn check_divergence_condition(
    p: f64,
    gamma: f64,
    alpha: f64,
) -> Result<Divergence, PotentialError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(PotentialError::FrequencyOutOfRange(p));
    }
    Ok(if gamma > critical_excitation(p, alpha) {
        Divergence::Divergent
    } else {
        Divergence::Bounded
    })
}

/// Closed-form expectation after `steps` Bernoulli excite/relax steps from
/// `u0` (all steps relax toward `u0`).
pub fn expected_potential(p: f64, gamma: f64, alpha: f64, steps: u32, u0: f64) -> f64 {
    let beta = growth_factor(p, gamma, alpha);
    let geometric: f64 = (0..steps).map(|i| beta.powi(i as i32)).sum();
    (beta.powi(steps as i32) + (1.0 - p) * alpha * geometric) * u0
}

/// Limit of [`expected_potential`] as steps grow, finite only when the growth
/// factor is below one.
pub fn expected_potential_limit(p: f64, gamma: f64, alpha: f64, u0: f64) -> Option<f64> {
    let beta = growth_factor(p, gamma, alpha);
    (beta < 1.0).then(|| (1.0 - p) * alpha * u0 / (1.0 - beta))
}
