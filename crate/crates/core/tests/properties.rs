use std::collections::VecDeque;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use warehouse_sim::allocator::{crossover, mutate, Chromosome, HeuristicStore};
use warehouse_sim::baseline::shortest_path;
use warehouse_sim::gridworld::{distance, manhattan, Norm};
use warehouse_sim::potential::PotentialParams;
use warehouse_sim::{GridWorld, Position};

fn p(x: i32, y: i32) -> Position {
    Position::new(x, y)
}

/// Walled room of the given size with interior cells blocked where `fill`
/// says so (cycled if short).
fn room(width: usize, height: usize, fill: &[bool]) -> GridWorld {
    let mut k = 0;
    let obstacle = (0..width * height)
        .map(|i| {
            let (x, y) = (i % width, i / width);
            if x == 0 || y == 0 || x + 1 == width || y + 1 == height {
                return true;
            }
            k += 1;
            fill[k % fill.len()]
        })
        .collect();
    GridWorld::from_obstacles(width, height, obstacle).unwrap()
}

fn world_strategy() -> impl Strategy<Value = GridWorld> {
    (
        3usize..24,
        3usize..24,
        prop::collection::vec(prop::bool::weighted(0.3), 1..64),
    )
        .prop_map(|(w, h, fill)| room(w, h, &fill))
}

fn bfs(world: &GridWorld, a: Position, b: Position) -> Option<u32> {
    let mut dist = vec![u32::MAX; world.width() * world.height()];
    let mut queue = VecDeque::from([a]);
    dist[world.index(a).unwrap()] = 0;
    while let Some(c) = queue.pop_front() {
        let d = dist[world.index(c).unwrap()];
        if c == b {
            return Some(d);
        }
        for n in world.adjacent_cells(c) {
            let slot = &mut dist[world.index(n).unwrap()];
            if *slot == u32::MAX {
                *slot = d + 1;
                queue.push_back(n);
            }
        }
    }
    None
}

fn coord() -> impl Strategy<Value = Position> {
    (-50i32..50, -50i32..50).prop_map(|(x, y)| p(x, y))
}

proptest! {
    #[test]
    fn distances_are_metrics(a in coord(), b in coord(), c in coord()) {
        for norm in [Norm::L1, Norm::L2, Norm::LInf] {
            prop_assert_eq!(distance(a, a, norm), 0.0);
            prop_assert_eq!(distance(a, b, norm), distance(b, a, norm));
            prop_assert!(distance(a, c, norm) <= distance(a, b, norm) + distance(b, c, norm) + 1e-9);
        }
        prop_assert!(distance(a, b, Norm::LInf) <= distance(a, b, Norm::L2));
        prop_assert!(distance(a, b, Norm::L2) <= distance(a, b, Norm::L1));
    }

    #[test]
    fn neighborhoods_and_bit_views_agree(world in world_strategy(), seed in any::<u64>()) {
        for s in world.reachable_cells() {
            let hood = world.neighborhood(s).unwrap();
            prop_assert!((1..=5).contains(&hood.len()));
            prop_assert_eq!(*hood.last().unwrap(), s);
            for &n in &hood {
                prop_assert!(world.is_reachable(n));
                prop_assert!(manhattan(s, n) <= 1);
            }
            prop_assert_eq!(world.open_moves(s).count_ones() as usize, hood.len() - 1);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let y = rng.gen_range(0..world.height());
            let x = rng.gen_range(0..world.width());
            let len = rng.gen_range(0..=(world.width() - x).min(64));
            let bits = world.obstacle_bits(y, x, len);
            for i in 0..len {
                let cell = p((x + i) as i32, y as i32);
                prop_assert_eq!((bits >> i) & 1 == 1, world.is_obstacle(cell));
            }
            if len < 64 {
                prop_assert_eq!(bits >> len, 0);
            }
        }
    }

    #[test]
    fn layouts_round_trip(world in world_strategy()) {
        let text = world.serialize();
        prop_assert_eq!(GridWorld::parse(&text).unwrap(), world);
    }

    #[test]
    fn relaxation_contracts(u in 0.0f64..1e6, u0 in 0.0f64..1e6, alpha in 0.001f64..0.999) {
        let params = PotentialParams::with_factors(15.0, alpha);
        let next = params.relax(u, u0);
        prop_assert!((next - u0).abs() <= (1.0 - alpha) * (u - u0).abs() * (1.0 + 1e-12) + 1e-9);
        prop_assert!(next >= u.min(u0) && next <= u.max(u0));
    }

    #[test]
    fn learning_is_a_convex_step(
        eta in 0.01f64..=1.0,
        realized in prop::collection::vec(0.0f64..500.0, 1..20),
    ) {
        let mut h = HeuristicStore::new(eta).unwrap();
        let (a, b) = (p(0, 0), p(7, 3));
        for d in realized {
            let before = h.estimate(a, b);
            h.learn(a, b, d, true);
            let after = h.estimate(a, b);
            prop_assert!(after >= before.min(d) - 1e-12 && after <= before.max(d) + 1e-12);
            prop_assert!((after - (before + eta * (d - before))).abs() <= 1e-12 * before.max(d).max(1.0));
        }
    }

    #[test]
    fn astar_is_exact(world in world_strategy(), seed in any::<u64>()) {
        let cells = world.reachable_cells();
        prop_assume!(!cells.is_empty());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..10 {
            let a = cells[rng.gen_range(0..cells.len())];
            let b = cells[rng.gen_range(0..cells.len())];
            let r = shortest_path(&world, a, b).unwrap();
            prop_assert_eq!(r.length, bfs(&world, a, b));
            if let Some(len) = r.length {
                prop_assert!(len >= manhattan(a, b));
                prop_assert_eq!(r.path.len(), len as usize + 1);
                prop_assert_eq!((r.path[0], *r.path.last().unwrap()), (a, b));
                for w in r.path.windows(2) {
                    prop_assert_eq!(manhattan(w[0], w[1]), 1);
                    prop_assert!(world.is_reachable(w[1]));
                }
            }
        }
    }

    #[test]
    fn crossover_keeps_segment_and_validity(
        n in 1usize..8,
        k in 1usize..12,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = Chromosome::base(n, k);
        let shuffled = |rng: &mut ChaCha8Rng| mutate(&base, 1, base.len(), rng).unwrap();
        let (p1, p2) = (shuffled(&mut rng), shuffled(&mut rng));
        let i = rng.gen_range(1..=base.len());
        let j = rng.gen_range(i..=base.len());
        let child = crossover(&p1, &p2, i, j).unwrap();
        child.validate(n, k).unwrap();
        prop_assert_eq!(&child.0[i - 1..j], &p1.0[i - 1..j]);
        let decoded = child.decode(n).unwrap();
        prop_assert_eq!(decoded.len(), n);
        prop_assert_eq!(decoded.iter().map(Vec::len).sum::<usize>(), k);
        prop_assert_eq!(Chromosome::encode(&decoded).decode(n).unwrap(), decoded);
    }
}

#[test]
fn long_operator_chains_stay_valid() {
    let (n, k) = (6, 15);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut pool: Vec<Chromosome> = (0..8)
        .map(|_| {
            let base = Chromosome::base(n, k);
            mutate(&base, 1, base.len(), &mut rng).unwrap()
        })
        .collect();
    let len = pool[0].len();
    for _ in 0..10_000 {
        let a = rng.gen_range(0..pool.len());
        let b = rng.gen_range(0..pool.len());
        let i = rng.gen_range(1..=len);
        let j = rng.gen_range(i..=len);
        let child = if rng.gen_bool(0.5) {
            crossover(&pool[a], &pool[b], i, j).unwrap()
        } else {
            mutate(&pool[a], i, j, &mut rng).unwrap()
        };
        child.validate(n, k).unwrap();
        pool[b] = child;
    }
}
