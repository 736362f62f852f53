use std::sync::atomic::{AtomicU64, AtomicU8, Ordering};
use std::sync::Arc;

use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};
use xtask::{team_run, Strategy, TeamConfig, Worker};

/// Task tree shape drawn from a seed, so every run of one seed spawns the
/// same number of tasks no matter who executes them.
#[derive(Clone, Copy)]
struct Shape {
    seed: u64,
    depth: u32,
    fanout: u32,
}

fn tree_size(shape: Shape, node: u64, depth: u32) -> u64 {
    1 + children(shape, node, depth)
        .map(|c| tree_size(shape, c, depth + 1))
        .sum::<u64>()
}

fn children(shape: Shape, node: u64, depth: u32) -> impl Iterator<Item = u64> {
    let n = if depth >= shape.depth {
        0
    } else {
        SmallRng::seed_from_u64(shape.seed ^ node.wrapping_mul(0x9e37_79b9_7f4a_7c15))
            .gen_range(0..=shape.fanout)
    };
    (0..n as u64).map(move |i| node * 8 + i + 1)
}

struct Ledger {
    next_id: AtomicU64,
    runs: Vec<AtomicU8>,
}

fn grow(w: &Worker<'_>, shape: Shape, node: u64, depth: u32, ledger: &Arc<Ledger>, wait: bool) {
    let id = ledger.next_id.fetch_add(1, Ordering::Relaxed);
    ledger.runs[id as usize].fetch_add(1, Ordering::Relaxed);
    for c in children(shape, node, depth) {
        let ledger = Arc::clone(ledger);
        w.spawn(move |w| grow(w, shape, c, depth + 1, &ledger, !wait));
    }
    // Alternate levels join their children; the others leave it to the barrier.
    if wait {
        w.taskwait();
    }
}

fn run_once(strategy: Strategy, seed: u64) {
    let mut rng = SmallRng::seed_from_u64(seed);
    let shape = Shape {
        seed,
        depth: rng.gen_range(1..=6),
        fanout: rng.gen_range(1..=4),
    };
    let expected = tree_size(shape, 0, 0);
    let mut config = TeamConfig::new(rng.gen_range(1..=6));
    config.queue_capacity = [2, 4, 8, 64][rng.gen_range(0..4)];
    config.zones = rng.gen_range(1..=config.n_workers.min(3));
    config.dlb.strategy = strategy;
    config.dlb.t_interval = rng.gen_range(1..=64);
    config.dlb.n_steal = rng.gen_range(1..=8);
    config.dlb.n_victim = rng.gen_range(1..=4);
    config.dlb.p_local = rng.gen_range(0.0..=1.0);
    config.seed = seed;

    let ledger = Arc::new(Ledger {
        next_id: AtomicU64::new(0),
        runs: (0..expected).map(|_| AtomicU8::new(0)).collect(),
    });
    let l = Arc::clone(&ledger);
    let (_, report) = team_run(config, move |w| grow(w, shape, 0, 0, &l, true)).unwrap();

    assert_eq!(
        ledger.next_id.load(Ordering::Relaxed),
        expected,
        "seed {seed}"
    );
    assert!(
        ledger.runs.iter().all(|r| r.load(Ordering::Relaxed) == 1),
        "seed {seed}: a task ran twice or never"
    );
    // The tree root is the team's root task.
    assert_eq!(report.tasks_created(), expected, "seed {seed}");
    assert_eq!(report.tasks_executed(), expected, "seed {seed}");
    report.check_conservation().unwrap();
}

#[test]
fn every_task_runs_once_static() {
    for seed in 0..150 {
        run_once(Strategy::Static, seed);
    }
}

#[test]
fn every_task_runs_once_redirect_push() {
    for seed in 1000..1150 {
        run_once(Strategy::RedirectPush, seed);
    }
}

#[test]
fn every_task_runs_once_work_stealing() {
    for seed in 2000..2150 {
        run_once(Strategy::WorkStealing, seed);
    }
}
