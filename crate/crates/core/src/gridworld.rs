//! Grid world model: lattice positions, obstacles, p-norm metrics,
//! neighborhoods, and the warehouse shelf-layout generator / ASCII format.

use std::collections::VecDeque;
use std::fmt;

use arrayvec::ArrayVec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A lattice cell. `x` is the column, `y` the row; the origin is the top-left
/// corner of the layout document, so "up" is `y - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Position {
    pub x: i32,
    pub y: i32,
}

impl Position {
    pub const fn new(x: i32, y: i32) -> Self {
        Position { x, y }
    }

    pub fn offset(self, dx: i32, dy: i32) -> Self {
        Position::new(self.x + dx, self.y + dy)
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.x, self.y)
    }
}

/// Move offsets in tie-break order: up, right, down, left.
pub const MOVES: [(i32, i32); 4] = [(0, -1), (1, 0), (0, 1), (-1, 0)];

/// Order of a p-norm metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Norm {
    L1,
    L2,
    LInf,
}

impl Norm {
    /// Maps a numeric order (1, 2 or +inf) onto a supported norm.
    pub fn from_order(p: f64) -> Result<Norm, GridError> {
        if p == 1.0 {
            Ok(Norm::L1)
        } else if p == 2.0 {
            Ok(Norm::L2)
        } else if p == f64::INFINITY {
            Ok(Norm::LInf)
        } else {
            Err(GridError::UnsupportedNorm(p))
        }
    }

    pub fn order(self) -> f64 {
        match self {
            Norm::L1 => 1.0,
            Norm::L2 => 2.0,
            Norm::LInf => f64::INFINITY,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("unsupported norm order {0}; expected 1, 2 or inf")]
    UnsupportedNorm(f64),
    #[error("position {0} is not a reachable cell")]
    NotReachable(Position),
    #[error("invalid layout parameters: {0}")]
    InvalidLayout(String),
    #[error("layout line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
}

/// `||a - b||_p` for the given norm.
pub fn distance(a: Position, b: Position, norm: Norm) -> f64 {
    let dx = (a.x - b.x).abs() as f64;
    let dy = (a.y - b.y).abs() as f64;
    match norm {
        Norm::L1 => dx + dy,
        Norm::L2 => (dx * dx + dy * dy).sqrt(),
        Norm::LInf => dx.max(dy),
    }
}

/// [`distance`] with the norm given by its numeric order.
pub fn distance_p(a: Position, b: Position, p: f64) -> Result<f64, GridError> {
    Ok(distance(a, b, Norm::from_order(p)?))
}

pub fn manhattan(a: Position, b: Position) -> u32 {
    a.x.abs_diff(b.x) + a.y.abs_diff(b.y)
}

pub fn chebyshev(a: Position, b: Position) -> u32 {
    a.x.abs_diff(b.x).max(a.y.abs_diff(b.y))
}

/// Immutable warehouse lattice. Every cell is either an obstacle or reachable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridWorld {
    width: usize,
    height: usize,
    obstacle: Vec<bool>,
    /// Per reachable cell, bit k set when `MOVES[k]` leads to a reachable cell.
    open: Vec<u8>,
    /// Obstacle flags packed 64 per word, `words_per_row` words per row.
    packed: Vec<u64>,
    words_per_row: usize,
}

impl GridWorld {
    /// Builds a world from row-major obstacle flags. Boundary cells must all
    /// be obstacles.
    pub fn from_obstacles(
        width: usize,
        height: usize,
        obstacle: Vec<bool>,
    ) -> Result<Self, GridError> {
        if width < 3 || height < 3 {
            return Err(GridError::InvalidLayout(format!(
                "{width}x{height} is too small to hold a walled cell"
            )));
        }
        if obstacle.len() != width * height {
            return Err(GridError::InvalidLayout(format!(
                "expected {} cells, got {}",
                width * height,
                obstacle.len()
            )));
        }
        let mut world = GridWorld {
            width,
            height,
            obstacle,
            open: Vec::new(),
            packed: Vec::new(),
            words_per_row: width.div_ceil(64),
        };
        if let Some(p) = world.boundary().find(|&p| !world.is_obstacle(p)) {
            return Err(GridError::Parse {
                line: p.y as usize + 1,
                column: p.x as usize + 1,
                message: "boundary cell is not a wall".into(),
            });
        }
        world.rebuild_open();
        Ok(world)
    }

    fn rebuild_open(&mut self) {
        self.packed = vec![0; self.words_per_row * self.height];
        for (i, _) in self.obstacle.iter().enumerate().filter(|(_, &o)| o) {
            let (x, y) = (i % self.width, i / self.width);
            self.packed[y * self.words_per_row + x / 64] |= 1 << (x % 64);
        }
        self.open = (0..self.obstacle.len())
            .map(|i| {
                if self.obstacle[i] {
                    return 0;
                }
                let p = self.position_of(i);
                MOVES.iter().enumerate().fold(0u8, |bits, (k, &(dx, dy))| {
                    bits | (u8::from(self.is_reachable(p.offset(dx, dy))) << k)
                })
            })
            .collect();
    }

    /// Bit k set when `MOVES[k]` from `s` leads to a reachable cell; zero for
    /// obstacles and cells outside the lattice.
    #[inline]
    pub fn open_moves(&self, s: Position) -> u8 {
        self.index(s).map_or(0, |i| self.open[i])
    }

    /// An open room: walls on the boundary, everything inside reachable.
    pub fn open_room(width: usize, height: usize) -> Result<Self, GridError> {
        let mut obstacle = vec![false; width * height];
        for y in 0..height {
            for x in 0..width {
                if x == 0 || y == 0 || x + 1 == width || y + 1 == height {
                    obstacle[y * width + x] = true;
                }
            }
        }
        GridWorld::from_obstacles(width, height, obstacle)
    }

    /// Returns a copy with the given cells turned into obstacles.
    pub fn with_obstacles(&self, cells: impl IntoIterator<Item = Position>) -> Self {
        let mut world = self.clone();
        for p in cells {
            if let Some(i) = world.index(p) {
                world.obstacle[i] = true;
            }
        }
        world.rebuild_open();
        world
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn in_bounds(&self, p: Position) -> bool {
        p.x >= 0 && p.y >= 0 && (p.x as usize) < self.width && (p.y as usize) < self.height
    }

    /// Row-major index of an in-bounds cell.
    pub fn index(&self, p: Position) -> Option<usize> {
        self.in_bounds(p)
            .then(|| p.y as usize * self.width + p.x as usize)
    }

    pub fn position_of(&self, index: usize) -> Position {
        Position::new((index % self.width) as i32, (index / self.width) as i32)
    }

    pub fn is_obstacle(&self, p: Position) -> bool {
        self.index(p).is_some_and(|i| self.obstacle[i])
    }

    /// Obstacle flags of the `len <= 64` cells of row `y` starting at `x`,
    /// bit i for cell `x + i`. The span must lie inside the row.
    #[inline]
    pub fn obstacle_bits(&self, y: usize, x: usize, len: usize) -> u64 {
        debug_assert!(len <= 64 && x + len <= self.width && y < self.height);
        let row = &self.packed[y * self.words_per_row..(y + 1) * self.words_per_row];
        let (w, off) = (x / 64, x % 64);
        let mut bits = row[w] >> off;
        if off > 0 && w + 1 < row.len() {
            bits |= row[w + 1] << (64 - off);
        }
        if len < 64 {
            bits &= (1u64 << len) - 1;
        }
        bits
    }

    /// Obstacle flags of row `y`, indexed by x.
    pub fn obstacle_row(&self, y: usize) -> &[bool] {
        &self.obstacle[y * self.width..(y + 1) * self.width]
    }

    pub fn is_reachable(&self, p: Position) -> bool {
        self.index(p).is_some_and(|i| !self.obstacle[i])
    }

    pub fn reachable_cells(&self) -> Vec<Position> {
        (0..self.obstacle.len())
            .filter(|&i| !self.obstacle[i])
            .map(|i| self.position_of(i))
            .collect()
    }

    pub fn obstacle_cells(&self) -> Vec<Position> {
        (0..self.obstacle.len())
            .filter(|&i| self.obstacle[i])
            .map(|i| self.position_of(i))
            .collect()
    }

    pub fn reachable_count(&self) -> usize {
        self.obstacle.iter().filter(|&&o| !o).count()
    }

    pub fn obstacle_count(&self) -> usize {
        self.obstacle.len() - self.reachable_count()
    }

    fn boundary(&self) -> impl Iterator<Item = Position> + '_ {
        let (w, h) = (self.width as i32, self.height as i32);
        (0..w)
            .flat_map(move |x| [Position::new(x, 0), Position::new(x, h - 1)])
            .chain((0..h).flat_map(move |y| [Position::new(0, y), Position::new(w - 1, y)]))
    }

    /// Reachable 4-adjacent cells of `s`, in up/right/down/left order.
    /// Does not check that `s` itself is reachable.
    pub fn adjacent_cells(&self, s: Position) -> ArrayVec<Position, 4> {
        let bits = self.open_moves(s);
        let mut out = ArrayVec::new();
        for (k, (dx, dy)) in MOVES.into_iter().enumerate() {
            if bits & (1 << k) != 0 {
                out.push(s.offset(dx, dy));
            }
        }
        out
    }

    /// The closed unit 1-ball around `s` restricted to reachable cells, in
    /// up/right/down/left order followed by `s` itself.
    pub fn neighborhood(&self, s: Position) -> Result<ArrayVec<Position, 5>, GridError> {
        if !self.is_reachable(s) {
            return Err(GridError::NotReachable(s));
        }
        let bits = self.open_moves(s);
        let mut out = ArrayVec::new();
        for (k, (dx, dy)) in MOVES.into_iter().enumerate() {
            if bits & (1 << k) != 0 {
                out.push(s.offset(dx, dy));
            }
        }
        out.push(s);
        Ok(out)
    }

    /// `neighborhood(s)` without `s`.
    pub fn adjacent_neighborhood(&self, s: Position) -> Result<ArrayVec<Position, 4>, GridError> {
        if !self.is_reachable(s) {
            return Err(GridError::NotReachable(s));
        }
        Ok(self.adjacent_cells(s))
    }

    /// Reachable cells at 1-norm distance exactly one from the region.
    pub fn region_adjacent_neighborhood(&self, region: &[Position]) -> Vec<Position> {
        let mut out: Vec<Position> = region
            .iter()
            .flat_map(|&s| self.adjacent_cells(s))
            .filter(|p| !region.contains(p))
            .collect();
        out.sort();
        out.dedup();
        out
    }

    /// Connected components of reachable cells under 4-adjacency.
    pub fn component_labels(&self) -> (Vec<Option<u32>>, u32) {
        let mut labels = vec![None; self.obstacle.len()];
        let mut next = 0;
        for start in 0..self.obstacle.len() {
            if self.obstacle[start] || labels[start].is_some() {
                continue;
            }
            labels[start] = Some(next);
            let mut queue = VecDeque::from([start]);
            while let Some(i) = queue.pop_front() {
                for p in self.adjacent_cells(self.position_of(i)) {
                    let j = p.y as usize * self.width + p.x as usize;
                    if labels[j].is_none() {
                        labels[j] = Some(next);
                        queue.push_back(j);
                    }
                }
            }
            next += 1;
        }
        (labels, next)
    }

    pub fn is_connected(&self) -> bool {
        self.component_labels().1 <= 1
    }

    /// Parses the ASCII layout format: `#` obstacle, `.` reachable.
    pub fn parse(text: &str) -> Result<Self, GridError> {
        let rows: Vec<&str> = text
            .lines()
            .map(|l| l.strip_suffix('\r').unwrap_or(l))
            .collect();
        let rows = match rows.iter().rposition(|r| !r.is_empty()) {
            Some(last) => &rows[..=last],
            None => {
                return Err(GridError::Parse {
                    line: 1,
                    column: 1,
                    message: "empty layout".into(),
                })
            }
        };
        let width = rows[0].chars().count();
        let mut obstacle = Vec::with_capacity(width * rows.len());
        for (y, row) in rows.iter().enumerate() {
            let mut count = 0;
            for (x, glyph) in row.chars().enumerate() {
                obstacle.push(match glyph {
                    '#' => true,
                    '.' => false,
                    other => {
                        return Err(GridError::Parse {
                            line: y + 1,
                            column: x + 1,
                            message: format!("unknown glyph {other:?}"),
                        })
                    }
                });
                count += 1;
            }
            if count != width {
                return Err(GridError::Parse {
                    line: y + 1,
                    column: count.min(width) + 1,
                    message: format!("row has {count} cells, expected {width}"),
                });
            }
        }
        GridWorld::from_obstacles(width, rows.len(), obstacle)
    }

    /// ASCII rendering, one row per line with a trailing newline.
    pub fn serialize(&self) -> String {
        let mut out = String::with_capacity((self.width + 1) * self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                out.push(if self.obstacle[y * self.width + x] {
                    '#'
                } else {
                    '.'
                });
            }
            out.push('\n');
        }
        out
    }
}

/// Shelf-block warehouse pattern: rectangular shelf tiles separated by
/// aisles, with aisles between the outermost tiles and the boundary walls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutParams {
    pub block_rows: usize,
    pub block_cols: usize,
    pub shelf_width: usize,
    pub shelf_height: usize,
    pub aisle: usize,
    /// Extra aisle cells added to the left/right/top/bottom margins.
    pub extra_left: usize,
    pub extra_right: usize,
    pub extra_top: usize,
    pub extra_bottom: usize,
}

impl LayoutParams {
    /// Default 2-wide by 4-tall shelves with 2-cell aisles.
    pub fn new(block_rows: usize, block_cols: usize) -> Self {
        LayoutParams {
            block_rows,
            block_cols,
            shelf_width: 2,
            shelf_height: 4,
            aisle: 2,
            extra_left: 0,
            extra_right: 0,
            extra_top: 0,
            extra_bottom: 0,
        }
    }

    /// Packs as many default tiles as fit into `width` x `height` and spreads
    /// the leftover cells over the outer margin aisles.
    pub fn fit(width: usize, height: usize) -> Result<Self, GridError> {
        let mut p = LayoutParams::new(0, 0);
        let span = |pitch: usize, total: usize| -> Option<(usize, usize)> {
            let fixed = 2 + p.aisle;
            let blocks = total.checked_sub(fixed)? / pitch;
            (blocks > 0).then(|| (blocks, total - fixed - blocks * pitch))
        };
        let (cols, rem_x) = span(p.shelf_width + p.aisle, width).ok_or_else(|| {
            GridError::InvalidLayout(format!("width {width} cannot hold one shelf column"))
        })?;
        let (rows, rem_y) = span(p.shelf_height + p.aisle, height).ok_or_else(|| {
            GridError::InvalidLayout(format!("height {height} cannot hold one shelf row"))
        })?;
        p.block_cols = cols;
        p.block_rows = rows;
        p.extra_left = rem_x / 2;
        p.extra_right = rem_x - rem_x / 2;
        p.extra_top = rem_y / 2;
        p.extra_bottom = rem_y - rem_y / 2;
        Ok(p)
    }

    pub fn width(&self) -> usize {
        2 + self.aisle
            + self.block_cols * (self.shelf_width + self.aisle)
            + self.extra_left
            + self.extra_right
    }

    pub fn height(&self) -> usize {
        2 + self.aisle
            + self.block_rows * (self.shelf_height + self.aisle)
            + self.extra_top
            + self.extra_bottom
    }
}

/// Generates the shelf-pattern warehouse and checks it is connected.
pub fn generate_layout(params: &LayoutParams) -> Result<GridWorld, GridError> {
    if params.block_rows == 0 || params.block_cols == 0 {
        return Err(GridError::InvalidLayout(
            "need at least one shelf row and column".into(),
        ));
    }
    if params.shelf_width == 0 || params.shelf_height == 0 || params.aisle == 0 {
        return Err(GridError::InvalidLayout(
            "shelf dimensions and aisle width must be positive".into(),
        ));
    }
    let (width, height) = (params.width(), params.height());
    let mut world = GridWorld::open_room(width, height)?;
    let x0 = 1 + params.aisle + params.extra_left;
    let y0 = 1 + params.aisle + params.extra_top;
    for by in 0..params.block_rows {
        for bx in 0..params.block_cols {
            let left = x0 + bx * (params.shelf_width + params.aisle);
            let top = y0 + by * (params.shelf_height + params.aisle);
            for y in top..top + params.shelf_height {
                for x in left..left + params.shelf_width {
                    world.obstacle[y * width + x] = true;
                }
            }
        }
    }
    world.rebuild_open();
    if !world.is_connected() {
        return Err(GridError::InvalidLayout(
            "generated layout is not connected".into(),
        ));
    }
    Ok(world)
}

/// Shelf layout with outer dimensions exactly `width` x `height`.
pub fn generate_sized_layout(width: usize, height: usize) -> Result<GridWorld, GridError> {
    generate_layout(&LayoutParams::fit(width, height)?)
}
