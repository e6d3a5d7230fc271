use std::collections::VecDeque;

use warehouse_sim::engine::{run_scenario, LayoutSource, Scenario};
use warehouse_sim::planner::check_trace_safety;
use warehouse_sim::{GridWorld, Position};

fn small(seed: u64, n: usize, k: usize) -> Scenario {
    let mut sc = Scenario {
        layout: LayoutSource::Generated {
            width: 41,
            height: 40,
        },
        n_robots: n,
        n_tasks: k,
        seed,
        ..Scenario::default()
    };
    sc.ga.population_size = 40;
    sc.ga.max_generations = 40;
    sc
}

fn bfs(world: &GridWorld, a: Position, b: Position) -> u64 {
    let mut dist = vec![u64::MAX; world.width() * world.height()];
    let mut queue = VecDeque::from([a]);
    dist[world.index(a).unwrap()] = 0;
    while let Some(c) = queue.pop_front() {
        let d = dist[world.index(c).unwrap()];
        if c == b {
            return d;
        }
        for n in world.adjacent_cells(c) {
            let slot = &mut dist[world.index(n).unwrap()];
            if *slot == u64::MAX {
                *slot = d + 1;
                queue.push_back(n);
            }
        }
    }
    panic!("{b} unreachable from {a}");
}

#[test]
fn same_seed_same_run() {
    for seed in 0..4 {
        let a = run_scenario(&small(seed, 4, 7)).unwrap();
        let b = run_scenario(&small(seed, 4, 7)).unwrap();
        assert_eq!(a.trace.positions, b.trace.positions);
        assert_eq!(a.allocation, b.allocation);
        assert_eq!(a.fitness_history, b.fitness_history);
        let strip = |mut r: warehouse_sim::engine::MetricsReport| {
            r.planner_time = Default::default();
            r.astar_time = Default::default();
            r
        };
        assert_eq!(strip(a.report), strip(b.report));
    }
}

#[test]
fn reports_agree_with_traces() {
    let world = small(0, 1, 1).layout.build().unwrap();
    for seed in 0..6 {
        let (n, k) = (1 + seed as usize % 4, 2 + seed as usize);
        let run = run_scenario(&small(seed, n, k)).unwrap();
        check_trace_safety(&run.trace).unwrap();
        let r = &run.report;
        assert!(!r.cap_reached);
        assert_eq!(r.completed_tasks, k);
        assert_eq!(r.k_total, run.trace.ticks());

        // every task allocated once, and served in list order
        let mut all: Vec<usize> = run.allocation.concat();
        all.sort();
        assert_eq!(all, (1..=k).collect::<Vec<_>>());
        for (i, list) in run.allocation.iter().enumerate() {
            let segs = &run.trace.segments[i];
            assert_eq!(segs.iter().map(|s| s.task).collect::<Vec<_>>(), *list);
            let mut from = run.starts[i];
            let mut optimal = 0;
            for s in segs {
                assert_eq!(s.end, run.task_positions[s.task - 1]);
                assert_eq!(run.trace.positions[s.end_tick as usize][i], s.end);
                optimal += bfs(&world, from, s.end);
                from = s.end;
            }
            assert_eq!(r.per_robot[i].optimal, optimal);
            assert!(r.per_robot[i].distance >= optimal);
        }

        let realized: u64 = r.per_robot.iter().map(|m| m.distance).sum();
        let optimal: u64 = r.per_robot.iter().map(|m| m.optimal).sum();
        if optimal > 0 {
            assert_eq!(r.j1, realized as f64 / optimal as f64);
        }
        assert_eq!(r.j2, realized as f64 / (k * n) as f64);
        assert_eq!(r.j4, k as f64 / r.k_total as f64);
    }
}
