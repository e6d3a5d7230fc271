//! A* shortest paths on the 4-connected grid. Used for optimal leg distances
//! and as the computation-time reference for the potential-field planner.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::time::{Duration, Instant};

use crate::gridworld::{manhattan, GridError, GridWorld, Position};

#[derive(Debug, Clone, PartialEq)]
pub struct PathResult {
    /// `None` when the goal cannot be reached.
    pub length: Option<u32>,
    pub path: Vec<Position>,
    pub expanded_nodes: usize,
    pub elapsed: Duration,
}

#[derive(Debug, PartialEq, Eq)]
struct Frontier {
    f: u32,
    g: u32,
    seq: Reverse<u64>,
    pos: Position,
}

impl Ord for Frontier {
    // max-heap: lowest f first, then larger g, then earliest insertion
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .cmp(&self.f)
            .then(self.g.cmp(&other.g))
            .then(self.seq.cmp(&other.seq))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// A* with the Manhattan heuristic.
pub fn shortest_path(
    world: &GridWorld,
    start: Position,
    goal: Position,
) -> Result<PathResult, GridError> {
    for p in [start, goal] {
        if !world.is_reachable(p) {
            return Err(GridError::NotReachable(p));
        }
    }
    let started = Instant::now();
    let mut g_score: HashMap<Position, u32> = HashMap::new();
    let mut came_from: HashMap<Position, Position> = HashMap::new();
    let mut closed: HashSet<Position> = HashSet::new();
    let mut open = BinaryHeap::new();
    let mut seq = 0u64;
    let mut expanded = 0usize;

    g_score.insert(start, 0);
    open.push(Frontier {
        f: manhattan(start, goal),
        g: 0,
        seq: Reverse(seq),
        pos: start,
    });

    while let Some(Frontier { g, pos, .. }) = open.pop() {
        if !closed.insert(pos) {
            continue;
        }
        expanded += 1;
        if pos == goal {
            let mut path = vec![goal];
            let mut cur = goal;
            while let Some(&prev) = came_from.get(&cur) {
                path.push(prev);
                cur = prev;
            }
            path.reverse();
            return Ok(PathResult {
                length: Some(g),
                path,
                expanded_nodes: expanded,
                elapsed: started.elapsed(),
            });
        }
        for next in world.adjacent_cells(pos) {
            if closed.contains(&next) {
                continue;
            }
            let tentative = g + 1;
            if g_score.get(&next).is_some_and(|&old| old <= tentative) {
                continue;
            }
            g_score.insert(next, tentative);
            came_from.insert(next, pos);
            seq += 1;
            open.push(Frontier {
                f: tentative + manhattan(next, goal),
                g: tentative,
                seq: Reverse(seq),
                pos: next,
            });
        }
    }
    Ok(PathResult {
        length: None,
        path: Vec::new(),
        expanded_nodes: expanded,
        elapsed: started.elapsed(),
    })
}

/// Optimal distance of `start -> t1 -> t2 -> ...`, with the summed search
/// time. `None` if some leg is unreachable.
pub fn optimal_sequence_distance(
    world: &GridWorld,
    start: Position,
    tasks: &[Position],
) -> Result<(Option<u64>, Duration), GridError> {
    let mut total = 0u64;
    let mut elapsed = Duration::ZERO;
    let mut from = start;
    for &t in tasks {
        let leg = shortest_path(world, from, t)?;
        elapsed += leg.elapsed;
        match leg.length {
            Some(l) => total += u64::from(l),
            None => return Ok((None, elapsed)),
        }
        from = t;
    }
    Ok((Some(total), elapsed))
}
