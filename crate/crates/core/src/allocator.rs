//! Genetic task allocation.
//!
//! A chromosome is a permutation of the task numbers `1..=K` and the
//! delimiters `-1..=-(N-1)`; the runs of tasks between delimiters are the
//! ordered task lists of robots 1..N. Fitness rewards low average and low
//! bottleneck heuristic travel distance, and the heuristic distances are
//! learned from the legs robots actually drive.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridworld::{manhattan, Position};

#[derive(Debug, Error, PartialEq)]
pub enum AllocError {
    #[error("chromosome is not a permutation of tasks 1..={tasks} and {delimiters} delimiters")]
    Malformed { tasks: usize, delimiters: usize },
    #[error("cut points ({0}, {1}) invalid for length {2}")]
    InvalidRange(usize, usize, usize),
    #[error("invalid GA configuration: {0}")]
    InvalidConfig(String),
    #[error("allocation problem needs at least one robot and one task")]
    EmptyProblem,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Chromosome(pub Vec<i32>);

impl Chromosome {
    pub fn genes(&self) -> &[i32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Identity-ordered gene set for `n_robots` robots and `n_tasks` tasks.
    pub fn base(n_robots: usize, n_tasks: usize) -> Self {
        let tasks = 1..=n_tasks as i32;
        let delimiters = (1..n_robots as i32).map(|d| -d);
        Chromosome(tasks.chain(delimiters).collect())
    }

    /// Checks the chromosome is a permutation of the expected gene set.
    pub fn validate(&self, n_robots: usize, n_tasks: usize) -> Result<(), AllocError> {
        let malformed = AllocError::Malformed {
            tasks: n_tasks,
            delimiters: n_robots.saturating_sub(1),
        };
        if n_robots == 0 || self.0.len() != n_robots + n_tasks - 1 {
            return Err(malformed);
        }
        let mut seen = vec![false; self.0.len() + 1];
        for &g in &self.0 {
            let slot = match g {
                g if g > 0 && g as usize <= n_tasks => g as usize,
                g if g < 0 && (g.unsigned_abs() as usize) < n_robots => {
                    n_tasks + g.unsigned_abs() as usize
                }
                _ => return Err(malformed),
            };
            if std::mem::replace(&mut seen[slot], true) {
                return Err(malformed);
            }
        }
        Ok(())
    }

    /// Splits into per-robot ordered task numbers. Any negative gene acts as
    /// a delimiter.
    pub fn decode(&self, n_robots: usize) -> Result<Vec<Vec<usize>>, AllocError> {
        let n_tasks = self.0.iter().filter(|&&g| g > 0).count();
        self.validate(n_robots, n_tasks)?;
        Ok(self.decode_unchecked(n_robots))
    }

    fn decode_unchecked(&self, n_robots: usize) -> Vec<Vec<usize>> {
        let mut lists = Vec::with_capacity(n_robots);
        let mut current = Vec::new();
        for &g in &self.0 {
            if g < 0 {
                lists.push(std::mem::take(&mut current));
            } else {
                current.push(g as usize);
            }
        }
        lists.push(current);
        lists
    }

    /// Inverse of [`decode`](Self::decode); delimiters are relabelled
    /// `-1, -2, ...` in order.
    pub fn encode(lists: &[Vec<usize>]) -> Self {
        let mut genes = Vec::new();
        for (i, list) in lists.iter().enumerate() {
            if i > 0 {
                genes.push(-(i as i32));
            }
            genes.extend(list.iter().map(|&t| t as i32));
        }
        Chromosome(genes)
    }
}

/// Learned pairwise distance estimates. Pairs never updated fall back to the
/// Manhattan distance.
#[derive(Debug, Clone, PartialEq)]
pub struct HeuristicStore {
    estimates: HashMap<(Position, Position), f64>,
    learning_rate: f64,
}

fn pair_key(a: Position, b: Position) -> (Position, Position) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

impl HeuristicStore {
    pub fn new(learning_rate: f64) -> Result<Self, AllocError> {
        if !(learning_rate > 0.0 && learning_rate <= 1.0) {
            return Err(AllocError::InvalidConfig(format!(
                "learning rate {learning_rate} must lie in (0, 1]"
            )));
        }
        Ok(HeuristicStore {
            estimates: HashMap::new(),
            learning_rate,
        })
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn estimate(&self, a: Position, b: Position) -> f64 {
        if a == b {
            return 0.0;
        }
        self.estimates
            .get(&pair_key(a, b))
            .copied()
            .unwrap_or_else(|| f64::from(manhattan(a, b)))
    }

    /// Number of pairs with a learned estimate.
    pub fn learned_pairs(&self) -> usize {
        self.estimates.len()
    }

    /// Gradient step toward the realized distance when `received` is set:
    /// `d <- d + eta (a - d)` with `a = D` if received, else `a = d`.
    pub fn learn(&mut self, a: Position, b: Position, realized: f64, received: bool) {
        if a == b || !received {
            return;
        }
        let current = self.estimate(a, b);
        let target = realized;
        let updated = current + self.learning_rate * (target - current);
        self.estimates.insert(pair_key(a, b), updated);
    }
}

/// Robot start cells and task cells (task `k` is at `task_positions[k - 1]`).
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationProblem {
    pub starts: Vec<Position>,
    pub task_positions: Vec<Position>,
}

impl AllocationProblem {
    pub fn n_robots(&self) -> usize {
        self.starts.len()
    }

    pub fn n_tasks(&self) -> usize {
        self.task_positions.len()
    }

    /// Heuristic route length of each robot under the given task lists.
    pub fn heuristic_distances(&self, lists: &[Vec<usize>], h: &HeuristicStore) -> Vec<f64> {
        lists
            .iter()
            .zip(&self.starts)
            .map(|(list, &start)| {
                let mut from = start;
                let mut total = 0.0;
                for &t in list {
                    let to = self.task_positions[t - 1];
                    total += h.estimate(from, to);
                    from = to;
                }
                total
            })
            .collect()
    }
}

/// Fitness reported when every heuristic route is empty.
pub const ZERO_DISTANCE_FITNESS: f64 = 1e12;

/// `(sum D / (K N) + max D / K)^-1` over the decoded allocation.
pub fn fitness(
    c: &Chromosome,
    problem: &AllocationProblem,
    h: &HeuristicStore,
) -> Result<f64, AllocError> {
    c.validate(problem.n_robots(), problem.n_tasks())?;
    Ok(fitness_unchecked(c, problem, h))
}

fn fitness_unchecked(c: &Chromosome, problem: &AllocationProblem, h: &HeuristicStore) -> f64 {
    let lists = c.decode_unchecked(problem.n_robots());
    let d = problem.heuristic_distances(&lists, h);
    let (n, k) = (problem.n_robots() as f64, problem.n_tasks() as f64);
    let sum: f64 = d.iter().sum();
    let max = d.iter().copied().fold(0.0, f64::max);
    let cost = sum / (k * n) + max / k;
    if cost > 0.0 {
        1.0 / cost
    } else {
        ZERO_DISTANCE_FITNESS
    }
}

/// Keeps `p1[i..=j]` (1-based) in place and fills the remaining slots left
/// to right with the genes of `p2` not already kept, in `p2` order.
pub fn crossover(
    p1: &Chromosome,
    p2: &Chromosome,
    i: usize,
    j: usize,
) -> Result<Chromosome, AllocError> {
    let len = p1.len();
    if p2.len() != len || i == 0 || i > j || j > len {
        return Err(AllocError::InvalidRange(i, j, len));
    }
    let kept = &p1.0[i - 1..j];
    let mut fill = p2.0.iter().filter(|g| !kept.contains(g));
    let child = (1..=len)
        .map(|pos| {
            if (i..=j).contains(&pos) {
                Some(p1.0[pos - 1])
            } else {
                fill.next().copied()
            }
        })
        .collect::<Option<Vec<i32>>>()
        .ok_or(AllocError::InvalidRange(i, j, len))?;
    Ok(Chromosome(child))
}

/// Scramble mutation: shuffles genes `m..=n` (1-based).
pub fn mutate<R: Rng + ?Sized>(
    c: &Chromosome,
    m: usize,
    n: usize,
    rng: &mut R,
) -> Result<Chromosome, AllocError> {
    if m == 0 || m > n || n > c.len() {
        return Err(AllocError::InvalidRange(m, n, c.len()));
    }
    let mut out = c.clone();
    out.0[m - 1..n].shuffle(rng);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaConfig {
    pub population_size: usize,
    pub max_generations: usize,
    pub mutation_probability: f64,
    pub parent_fraction: f64,
    pub rng_seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population_size: 100,
            max_generations: 200,
            mutation_probability: 0.2,
            parent_fraction: 0.5,
            rng_seed: 0,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<(), AllocError> {
        let bad = |m: &str| Err(AllocError::InvalidConfig(m.into()));
        if self.population_size < 2 {
            return bad("population size must be at least 2");
        }
        if self.max_generations == 0 {
            return bad("generation count must be positive");
        }
        if !(0.0..=1.0).contains(&self.mutation_probability) {
            return bad("mutation probability must lie in [0, 1]");
        }
        if !(self.parent_fraction > 0.0 && self.parent_fraction <= 1.0) {
            return bad("parent fraction must lie in (0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolveResult {
    pub best: Chromosome,
    pub best_fitness: f64,
    /// Best fitness after initialisation (index 0) and after each generation.
    pub history: Vec<f64>,
}

/// Runs the generational loop from a random initial population.
pub fn evolve(
    cfg: &GaConfig,
    problem: &AllocationProblem,
    h: &HeuristicStore,
) -> Result<EvolveResult, AllocError> {
    cfg.validate()?;
    if problem.n_robots() == 0 || problem.n_tasks() == 0 {
        return Err(AllocError::EmptyProblem);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let base = Chromosome::base(problem.n_robots(), problem.n_tasks());
    let population = (0..cfg.population_size)
        .map(|_| {
            let mut c = base.clone();
            c.0.shuffle(&mut rng);
            c
        })
        .collect();
    evolve_population(cfg, problem, h, population, &mut rng)
}

/// Runs the generational loop from a given initial population.
pub fn evolve_from(
    cfg: &GaConfig,
    problem: &AllocationProblem,
    h: &HeuristicStore,
    population: Vec<Chromosome>,
) -> Result<EvolveResult, AllocError> {
    cfg.validate()?;
    for c in &population {
        c.validate(problem.n_robots(), problem.n_tasks())?;
    }
    if population.is_empty() {
        return Err(AllocError::InvalidConfig(
            "initial population is empty".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    evolve_population(cfg, problem, h, population, &mut rng)
}

fn evolve_population(
    cfg: &GaConfig,
    problem: &AllocationProblem,
    h: &HeuristicStore,
    population: Vec<Chromosome>,
    rng: &mut ChaCha8Rng,
) -> Result<EvolveResult, AllocError> {
    let len = population[0].len();
    let mut scored: Vec<(f64, Chromosome)> = population
        .into_iter()
        .map(|c| (fitness_unchecked(&c, problem, h), c))
        .collect();
    sort_by_fitness(&mut scored);
    let mut history = vec![scored[0].0];

    let n_parents = ((cfg.parent_fraction * scored.len() as f64).ceil() as usize)
        .clamp(2.min(scored.len()), scored.len());
    // rank weights n, n-1, ..., 1 over the parent pool
    let total_weight = n_parents * (n_parents + 1) / 2;
    let pick_parent = |rng: &mut ChaCha8Rng| {
        let mut ticket = rng.gen_range(0..total_weight);
        for rank in 0..n_parents {
            let w = n_parents - rank;
            if ticket < w {
                return rank;
            }
            ticket -= w;
        }
        n_parents - 1
    };

    for _ in 0..cfg.max_generations {
        let mut children = Vec::with_capacity(cfg.population_size);
        while children.len() < cfg.population_size {
            let a = &scored[pick_parent(rng)].1;
            let b = &scored[pick_parent(rng)].1;
            let i = rng.gen_range(1..=len);
            let j = rng.gen_range(i..=len);
            children.push(crossover(a, b, i, j)?);
            if children.len() < cfg.population_size {
                children.push(crossover(b, a, i, j)?);
            }
        }
        for child in &mut children {
            if rng.gen_bool(cfg.mutation_probability) {
                let m = rng.gen_range(1..=len);
                let n = rng.gen_range(m..=len);
                *child = mutate(child, m, n, rng)?;
            }
        }
        scored.extend(
            children
                .into_iter()
                .map(|c| (fitness_unchecked(&c, problem, h), c)),
        );
        sort_by_fitness(&mut scored);
        scored.truncate(cfg.population_size);
        history.push(scored[0].0);
    }

    let (best_fitness, best) = scored.swap_remove(0);
    Ok(EvolveResult {
        best,
        best_fitness,
        history,
    })
}

/// Descending fitness; the sort is stable so earlier members win ties.
fn sort_by_fitness(scored: &mut [(f64, Chromosome)]) {
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(x: i32, y: i32) -> Position {
        Position::new(x, y)
    }

    #[test]
    fn decode_examples() {
        let c = Chromosome(vec![3, 5, 1, -1, 4, 6, -2, 2, 7, -3]);
        assert_eq!(
            c.decode(4).unwrap(),
            vec![vec![3, 5, 1], vec![4, 6], vec![2, 7], vec![]]
        );
        let leading = Chromosome(vec![-1, -2, -3, 1, 2]);
        assert_eq!(
            leading.decode(4).unwrap(),
            vec![vec![], vec![], vec![], vec![1, 2]]
        );
        assert_eq!(
            Chromosome(vec![2, 1, 3]).decode(1).unwrap(),
            vec![vec![2, 1, 3]]
        );
    }

    #[test]
    fn malformed_chromosomes_rejected() {
        assert!(Chromosome(vec![1, 1, -1]).decode(2).is_err());
        assert!(Chromosome(vec![1, 2, -2]).decode(2).is_err());
        assert!(Chromosome(vec![1, 3, -1]).validate(2, 2).is_err());
        assert!(Chromosome(vec![1, -1]).validate(3, 1).is_err());
    }

    #[test]
    fn encode_inverts_decode() {
        let lists = vec![vec![3, 5, 1], vec![4, 6], vec![2, 7], vec![]];
        assert_eq!(Chromosome::encode(&lists).decode(4).unwrap(), lists);
    }

    #[test]
    fn fitness_examples() {
        let h = HeuristicStore::new(0.5).unwrap();
        let one = AllocationProblem {
            starts: vec![p(0, 0)],
            task_positions: vec![p(4, 6)],
        };
        assert_eq!(fitness(&Chromosome(vec![1]), &one, &h).unwrap(), 0.05);

        // robot 1 takes both tasks for a route of 10, robot 2 idles
        let two = AllocationProblem {
            starts: vec![p(0, 0), p(20, 20)],
            task_positions: vec![p(3, 0), p(3, 7)],
        };
        let f = fitness(&Chromosome(vec![1, 2, -1]), &two, &h).unwrap();
        assert!((f - 2.0 / 15.0).abs() < 1e-15);

        let zero = AllocationProblem {
            starts: vec![p(1, 1)],
            task_positions: vec![p(1, 1)],
        };
        assert_eq!(
            fitness(&Chromosome(vec![1]), &zero, &h).unwrap(),
            ZERO_DISTANCE_FITNESS
        );
    }

    #[test]
    fn crossover_worked_example() {
        let p1 = Chromosome(vec![3, -2, 1, 2, 5, 6, 4, -1, 7, -3]);
        let p2 = Chromosome(vec![6, 2, -1, 4, 3, -3, 7, -2, 5, 1]);
        let c1 = crossover(&p1, &p2, 3, 6).unwrap();
        assert_eq!(c1.0, vec![-1, 4, 1, 2, 5, 6, 3, -3, 7, -2]);
        let c2 = crossover(&p2, &p1, 3, 6).unwrap();
        assert_eq!(c2.0[2..6], p2.0[2..6]);
        c2.validate(4, 7).unwrap();
        assert_eq!(crossover(&p1, &p2, 1, 10).unwrap(), p1);
        assert!(crossover(&p1, &p2, 0, 3).is_err());
        assert!(crossover(&p1, &p2, 4, 3).is_err());
        assert!(crossover(&p1, &p2, 3, 11).is_err());
    }

    #[test]
    fn mutation_examples() {
        let c = Chromosome(vec![3, -2, 1, 2, 5, 6, 4, -1, 7, -3]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        assert_eq!(mutate(&c, 4, 4, &mut rng).unwrap(), c);
        // frozen outputs of the seeded shuffle; regenerate if the rng changes
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let full = mutate(&c, 1, 10, &mut rng).unwrap();
        assert_eq!(full.0, vec![6, 5, 1, 3, 2, 4, -1, 7, -3, -2]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let inner = mutate(&c, 3, 6, &mut rng).unwrap();
        assert_eq!(inner.0, vec![3, -2, 6, 1, 5, 2, 4, -1, 7, -3]);
        assert!(mutate(&c, 0, 2, &mut rng).is_err());
        assert!(mutate(&c, 3, 11, &mut rng).is_err());
    }

    #[test]
    fn learning_rule() {
        let mut h = HeuristicStore::new(0.5).unwrap();
        let (a, b) = (p(0, 0), p(6, 4));
        h.learn(a, b, 14.0, true);
        assert_eq!(h.estimate(a, b), 12.0);
        assert_eq!(h.estimate(b, a), 12.0);
        h.learn(b, a, 100.0, false);
        assert_eq!(h.estimate(a, b), 12.0);
        h.learn(a, a, 5.0, true);
        assert_eq!(h.estimate(a, a), 0.0);
        assert!(HeuristicStore::new(0.0).is_err());
        assert!(HeuristicStore::new(1.5).is_err());
    }

    #[test]
    fn identical_population_without_mutation_is_static() {
        let problem = AllocationProblem {
            starts: vec![p(0, 0), p(9, 9)],
            task_positions: vec![p(3, 1), p(5, 5), p(8, 2)],
        };
        let h = HeuristicStore::new(0.5).unwrap();
        let cfg = GaConfig {
            population_size: 10,
            max_generations: 20,
            mutation_probability: 0.0,
            ..GaConfig::default()
        };
        let c = Chromosome(vec![2, -1, 3, 1]);
        let f = fitness(&c, &problem, &h).unwrap();
        let out = evolve_from(&cfg, &problem, &h, vec![c.clone(); 10]).unwrap();
        assert!(out.history.iter().all(|&x| x == f));
        assert_eq!(out.best, c);
    }

    #[test]
    fn single_task_goes_to_nearest_robot() {
        let problem = AllocationProblem {
            starts: vec![p(0, 0), p(10, 10), p(4, 9), p(20, 0)],
            task_positions: vec![p(5, 7)],
        };
        let h = HeuristicStore::new(0.5).unwrap();
        let out = evolve(&GaConfig::default(), &problem, &h).unwrap();
        let lists = out.best.decode(4).unwrap();
        assert_eq!(lists[2], vec![1]);
    }

    #[test]
    fn evolve_is_deterministic_and_elitist() {
        let problem = AllocationProblem {
            starts: vec![p(0, 0), p(10, 10), p(4, 9)],
            task_positions: vec![p(5, 7), p(1, 8), p(9, 2), p(3, 3), p(7, 7)],
        };
        let h = HeuristicStore::new(0.5).unwrap();
        let cfg = GaConfig {
            max_generations: 50,
            rng_seed: 11,
            ..GaConfig::default()
        };
        let a = evolve(&cfg, &problem, &h).unwrap();
        let b = evolve(&cfg, &problem, &h).unwrap();
        assert_eq!(a, b);
        assert!(a.history.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(a.best_fitness, fitness(&a.best, &problem, &h).unwrap());
    }
}
