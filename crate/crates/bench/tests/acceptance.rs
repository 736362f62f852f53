//! Acceptance suite: one PASS / FAIL / UNVERIFIED line per criterion.
//!
//! Timing criteria that need four physical cores report UNVERIFIED on
//! smaller hosts, together with what was measured. Set
//! `XTASK_ACCEPT_STRICT=1` to count UNVERIFIED as a failure.

use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::ptr::NonNull;
use std::sync::atomic::{AtomicU64, AtomicU8, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Instant;

use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};
use xtask::barrier::{simulate_clean_epoch, TreeBarrier};
use xtask::dlb::{decode_request, encode_request, VictimPicker, ROUND_MASK, THIEF_LIMIT};
use xtask::profiler::{load_dump, state_durations};
use xtask::queue::SpscRing;
use xtask::{
    team_run, CounterSet, EventKind, Strategy, Team, TeamConfig, TeamReport, Worker, ZoneMap,
    AUDIT_ENABLED,
};
use xtask_bench::hw::physical_cores;
use xtask_bench::kernels::hashbucket::HashKind;
use xtask_bench::kernels::imbalance::ImbalanceSpec;
use xtask_bench::{run_experiment, BenchSpec, ExperimentReport, KernelSpec};

enum Verdict {
    Pass(String),
    Fail(String),
    Unverified(String),
}

/// Facts gathered across criteria for the run-wide checks.
#[derive(Default)]
struct Tally {
    runs: AtomicU64,
    nonzero_final_count: AtomicU64,
    round_violations: AtomicU64,
    steal_bound_violations: AtomicU64,
    handled: AtomicU64,
}

impl Tally {
    fn observe(&self, report: &TeamReport) {
        self.runs.fetch_add(1, Ordering::Relaxed);
        if report.final_task_count != 0 {
            self.nonzero_final_count.fetch_add(1, Ordering::Relaxed);
        }
        for (w, &(start, end)) in report.workers.iter().zip(&report.rounds) {
            if end < start || end - start != w.counters.nrounds_advanced {
                self.round_violations.fetch_add(1, Ordering::Relaxed);
            }
            if w.counters.max_steal_per_request > report.config.dlb.n_steal as u64 {
                self.steal_bound_violations.fetch_add(1, Ordering::Relaxed);
            }
            self.handled
                .fetch_add(w.counters.nreq_handled, Ordering::Relaxed);
        }
    }

    fn observe_experiment(&self, r: &ExperimentReport) {
        self.runs.fetch_add(r.runs.len() as u64, Ordering::Relaxed);
        self.handled
            .fetch_add(r.counters().nreq_handled, Ordering::Relaxed);
        if let Some(f) = &r.failure {
            if f.contains("round") {
                self.round_violations.fetch_add(1, Ordering::Relaxed);
            }
            if f.contains("moved for one request") {
                self.steal_bound_violations.fetch_add(1, Ordering::Relaxed);
            }
            if f.contains("after release") {
                self.nonzero_final_count.fetch_add(1, Ordering::Relaxed);
            }
        }
    }
}

fn strict() -> bool {
    std::env::var("XTASK_ACCEPT_STRICT").is_ok_and(|v| v == "1")
}

fn team(n: usize, strategy: Strategy, seed: u64) -> TeamConfig {
    let mut c = TeamConfig::new(n);
    c.dlb.strategy = strategy;
    c.dlb.t_interval = 16;
    c.seed = seed;
    c
}

fn bench(kernel: KernelSpec, team: TeamConfig, repeat: usize) -> BenchSpec {
    BenchSpec {
        kernel,
        repeat,
        team,
        profile_dir: None,
    }
}

// 1. Every kernel agrees with its oracle for all strategies, team sizes and seeds.
fn oracle_equivalence(tally: &Tally) -> Verdict {
    let start = Instant::now();
    let kernels = [
        KernelSpec::Fib { n: 22, cutoff: 8 },
        KernelSpec::NQueens { n: 8, depth: 3 },
        KernelSpec::Msort {
            n: 20_000,
            leaf: 256,
        },
        KernelSpec::Strassen { n: 64, cutoff: 16 },
    ];
    let mut runs = 0;
    for kernel in &kernels {
        for seed in 0..20u64 {
            let mut value = None;
            for strategy in Strategy::ALL {
                for n in [1, 2, 4, 8] {
                    let r = match run_experiment(&bench(kernel.clone(), team(n, strategy, seed), 1))
                    {
                        Ok(r) => r,
                        Err(e) => {
                            return Verdict::Fail(format!(
                                "{} {strategy} n={n}: {e}",
                                kernel.name()
                            ))
                        }
                    };
                    tally.observe_experiment(&r);
                    runs += 1;
                    if let Some(f) = &r.failure {
                        return Verdict::Fail(format!(
                            "{} {strategy} n={n} seed={seed}: {f}",
                            kernel.name()
                        ));
                    }
                    let v = r.runs[0].value;
                    if *value.get_or_insert(v) != v {
                        return Verdict::Fail(format!(
                            "{} seed={seed}: {strategy} n={n} gave a different result",
                            kernel.name()
                        ));
                    }
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let msg =
        format!("{runs} runs (4 kernels x 3 strategies x 4 team sizes x 20 seeds) in {secs:.1}s");
    if secs < 600.0 {
        Verdict::Pass(msg)
    } else {
        Verdict::Fail(format!("{msg}, over the 10 minute budget"))
    }
}

/// Random task tree; `children` depends only on (seed, node), so the tree
/// is the same whichever worker expands a node.
#[derive(Clone, Copy)]
struct Tree {
    seed: u64,
    depth: u32,
    fanout: u32,
}

impl Tree {
    fn children(self, node: u64, depth: u32) -> impl Iterator<Item = u64> {
        let n = if depth >= self.depth {
            0
        } else {
            SmallRng::seed_from_u64(self.seed ^ node.wrapping_mul(0xff51_afd7_ed55_8ccd))
                .gen_range(0..=self.fanout)
        };
        (0..n as u64).map(move |i| node * 8 + i + 1)
    }

    fn size(self, node: u64, depth: u32) -> u64 {
        1 + self
            .children(node, depth)
            .map(|c| self.size(c, depth + 1))
            .sum::<u64>()
    }
}

struct Ids {
    next: AtomicU64,
    seen: Vec<AtomicU8>,
}

fn expand(w: &Worker<'_>, tree: Tree, node: u64, depth: u32, ids: &Arc<Ids>) {
    let id = ids.next.fetch_add(1, Ordering::Relaxed) as usize;
    if let Some(slot) = ids.seen.get(id) {
        slot.fetch_add(1, Ordering::Relaxed);
    }
    for c in tree.children(node, depth) {
        let ids = Arc::clone(ids);
        w.spawn(move |w| expand(w, tree, c, depth + 1, &ids));
    }
    if depth.is_multiple_of(2) {
        w.taskwait();
    }
}

// 2. Created == executed with no duplicates, 1000 random runs per strategy.
fn exactly_once(tally: &Tally) -> Verdict {
    let mut total_tasks = 0;
    for strategy in Strategy::ALL {
        for i in 0..1000u64 {
            let seed = i * 3 + strategy as u64;
            let mut rng = SmallRng::seed_from_u64(seed);
            let tree = Tree {
                seed,
                depth: rng.gen_range(1..=5),
                fanout: rng.gen_range(1..=4),
            };
            let expected = tree.size(0, 0);
            let n = rng.gen_range(1..=6);
            let mut config = team(n, strategy, seed);
            config.queue_capacity = [2, 4, 16, 64][rng.gen_range(0..4)];
            config.zones = rng.gen_range(1..=n.min(3));
            config.dlb.t_interval = rng.gen_range(1..=32);
            config.dlb.n_steal = rng.gen_range(1..=8);
            config.dlb.n_victim = rng.gen_range(1..=4);
            config.dlb.p_local = rng.gen_range(0.0..=1.0);
            let ids = Arc::new(Ids {
                next: AtomicU64::new(0),
                seen: (0..expected).map(|_| AtomicU8::new(0)).collect(),
            });
            let root_ids = Arc::clone(&ids);
            let report = match team_run(config, move |w| expand(w, tree, 0, 0, &root_ids)) {
                Ok((_, r)) => r,
                Err(e) => return Verdict::Fail(format!("{strategy} seed {seed}: {e}")),
            };
            tally.observe(&report);
            let issued = ids.next.load(Ordering::Relaxed);
            let bad = ids
                .seen
                .iter()
                .filter(|s| s.load(Ordering::Relaxed) != 1)
                .count();
            if issued != expected || bad != 0 {
                return Verdict::Fail(format!(
                    "{strategy} seed {seed}: {issued} ids for {expected} tasks, {bad} not run exactly once"
                ));
            }
            if report.tasks_created() != expected || report.tasks_executed() != expected {
                return Verdict::Fail(format!(
                    "{strategy} seed {seed}: counters say created {} executed {}, tree has {expected}",
                    report.tasks_created(),
                    report.tasks_executed()
                ));
            }
            if let Err(e) = report.check_conservation() {
                return Verdict::Fail(format!("{strategy} seed {seed}: {e}"));
            }
            total_tasks += expected;
        }
    }
    Verdict::Pass(format!(
        "3000 runs, {total_tasks} tasks, each id executed exactly once"
    ))
}

fn ring_stress(capacity: usize, items: usize) -> Result<(), String> {
    let ring = SpscRing::<u64>::new(capacity);
    let slots: Vec<u64> = (0..items as u64).collect();
    let base = slots.as_ptr() as usize;
    std::thread::scope(|s| {
        s.spawn(|| {
            for x in &slots {
                let mut p = NonNull::from(x);
                while let Err(back) = ring.push(1, p) {
                    p = back;
                    std::thread::yield_now();
                }
            }
        });
        let mut expect = 0usize;
        while expect < items {
            match ring.pop(0) {
                Some(p) => {
                    let idx = (p.as_ptr() as usize - base) / std::mem::size_of::<u64>();
                    if idx != expect {
                        return Err(format!(
                            "cap {capacity}: got element {idx}, expected {expect}"
                        ));
                    }
                    expect += 1;
                }
                None => std::thread::yield_now(),
            }
        }
        if ring.pop(0).is_some() {
            return Err(format!("cap {capacity}: extra element after {items}"));
        }
        Ok(())
    })
}

// 3. Ring order and count under a real producer/consumer pair; the identity
// audit is compiled in and no benchmark run tripped it.
fn spsc_stress(tally: &Tally) -> Verdict {
    if !AUDIT_ENABLED {
        return Verdict::Fail("ring identity audit is not compiled in".into());
    }
    for cap in [2, 64, 1024] {
        if let Err(e) = ring_stress(cap, 1_000_000) {
            return Verdict::Fail(e);
        }
    }
    // The audit really fires on a second producer.
    let ring = SpscRing::<u64>::new(4);
    let x = 7u64;
    let _ = ring.push(1, NonNull::from(&x));
    let prev = panic::take_hook();
    panic::set_hook(Box::new(|_| {}));
    let caught = panic::catch_unwind(AssertUnwindSafe(|| ring.push(2, NonNull::from(&x)))).is_err();
    panic::set_hook(prev);
    if !caught {
        return Verdict::Fail("second producer on one ring went unnoticed".into());
    }
    Verdict::Pass(format!(
        "10^6 items through rings of capacity 2, 64 and 1024 in order; audit live, never fired in {} runs",
        tally.runs.load(Ordering::Relaxed)
    ))
}

// 4. N-1 swaps to gather, N plain stores and no RMW to release.
fn barrier_census(tally: &Tally) -> Verdict {
    for n in [1usize, 4, 7, 8] {
        let mut t = match Team::new(TeamConfig::new(n)) {
            Ok(t) => t,
            Err(e) => return Verdict::Fail(e.to_string()),
        };
        for epoch in 0..5 {
            let count = Arc::new(AtomicUsize::new(0));
            let c = Arc::clone(&count);
            let report = match t.run(move |w| {
                for _ in 0..64 {
                    let c = Arc::clone(&c);
                    w.spawn(move |_| {
                        c.fetch_add(1, Ordering::Relaxed);
                    });
                }
            }) {
                Ok((_, r)) => r,
                Err(e) => return Verdict::Fail(e.to_string()),
            };
            tally.observe(&report);
            let b = report.barrier;
            if (b.gather_rmw, b.release_stores, b.release_rmw) != (n as u64 - 1, n as u64, 0) {
                return Verdict::Fail(format!("N={n} epoch {epoch}: census {b:?}"));
            }
            if count.load(Ordering::Relaxed) != 64 {
                return Verdict::Fail(format!("N={n}: region ended before its tasks"));
            }
        }
    }
    let sim = TreeBarrier::new(192);
    let c = simulate_clean_epoch(&sim, 1);
    if (c.gather_rmw, c.release_stores, c.release_rmw) != (191, 192, 0) {
        return Verdict::Fail(format!("N=192 simulated: {c:?}"));
    }
    let nonzero = tally.nonzero_final_count.load(Ordering::Relaxed);
    if nonzero > 0 {
        return Verdict::Fail(format!("{nonzero} regions released with live tasks"));
    }
    Verdict::Pass(format!(
        "N in {{1,4,7,8}} x 5 epochs and N=192 simulated: N-1 gather swaps, 0 release RMW; \
         task count 0 at every release ({} runs)",
        tally.runs.load(Ordering::Relaxed)
    ))
}

// 5. Request encoding, round monotonicity, steal bound and victim locality.
fn protocol_algebra(tally: &Tally) -> Verdict {
    let mut rng = SmallRng::seed_from_u64(5);
    for _ in 0..10_000 {
        let thief = rng.gen_range(0..THIEF_LIMIT);
        let round = rng.gen_range(0..=ROUND_MASK);
        match encode_request(thief, round) {
            Ok(word) if decode_request(word) == (thief, round) => {}
            other => return Verdict::Fail(format!("({thief}, {round}) -> {other:?}")),
        }
    }
    let rv = tally.round_violations.load(Ordering::Relaxed);
    let sv = tally.steal_bound_violations.load(Ordering::Relaxed);
    if rv + sv > 0 {
        return Verdict::Fail(format!("{rv} round and {sv} steal-bound violations"));
    }
    let zones = ZoneMap::new(16, 4);
    let mut worst: f64 = 0.0;
    for p_local in [0.0, 0.25, 0.5, 0.8, 1.0] {
        let me = 5;
        let picker = VictimPicker::new(zones, me, p_local);
        let mut local = 0;
        let draws = 100_000;
        for _ in 0..draws {
            let v = picker.pick(&mut rng);
            if v == me {
                return Verdict::Fail("picked itself as victim".into());
            }
            if zones.zone_of(v) == zones.zone_of(me) {
                local += 1;
            }
        }
        let frac = local as f64 / draws as f64;
        worst = worst.max((frac - p_local).abs());
        if (frac - p_local).abs() > 0.01 {
            return Verdict::Fail(format!("p_local {p_local}: local fraction {frac:.4}"));
        }
    }
    Verdict::Pass(format!(
        "10^4 round trips; rounds monotone and <= n_steal per request over {} runs ({} requests handled); \
         locality error <= {worst:.4}",
        tally.runs.load(Ordering::Relaxed),
        tally.handled.load(Ordering::Relaxed)
    ))
}

fn gate(cores: usize, pass: bool, msg: String) -> Verdict {
    if cores < 4 {
        Verdict::Unverified(format!(
            "host has {cores} physical core(s), needs 4; measured {msg}"
        ))
    } else if pass {
        Verdict::Pass(msg)
    } else {
        Verdict::Fail(msg)
    }
}

// 6. NA-WS cuts STALL time on a skewed workload without slowing it down.
fn dlb_effectiveness(cores: usize) -> Verdict {
    let kernel = KernelSpec::Imbalance(ImbalanceSpec {
        skew: 0.9,
        ..ImbalanceSpec::default()
    });
    let mut results = Vec::new();
    for strategy in [Strategy::Static, Strategy::WorkStealing] {
        let mut t = team(4, strategy, 6);
        t.dlb.t_interval = 1000;
        match run_experiment(&bench(kernel.clone(), t, 10)) {
            Ok(r) if r.ok() => results.push(r),
            Ok(r) => {
                return Verdict::Fail(format!("{strategy}: {}", r.failure.unwrap_or_default()))
            }
            Err(e) => return Verdict::Fail(e.to_string()),
        }
    }
    let (slb, ws) = (&results[0], &results[1]);
    if slb.counters().ntasks_executed != ws.counters().ntasks_executed {
        return Verdict::Fail("task totals differ between SLB and NA-WS".into());
    }
    let stall_cut = 1.0 - ws.mean_stall_ticks() / slb.mean_stall_ticks().max(1.0);
    let wall_ratio = ws.mean_ms() / slb.mean_ms();
    let msg = format!(
        "stall reduction {:.1}% (need >= 20%), wall NA-WS/SLB {wall_ratio:.3} (need <= 1.05), 10-run means",
        stall_cut * 100.0
    );
    gate(cores, stall_cut >= 0.20 && wall_ratio <= 1.05, msg)
}

// 7. fib(30, 10) speeds up at least 2x from 1 to 4 workers under NA-WS.
fn speedup(cores: usize) -> Verdict {
    let mut means = Vec::new();
    for n in [1, 4] {
        match run_experiment(&bench(
            KernelSpec::Fib { n: 30, cutoff: 10 },
            team(n, Strategy::WorkStealing, 7),
            10,
        )) {
            Ok(r) if r.ok() => means.push(r.mean_ms()),
            Ok(r) => return Verdict::Fail(r.failure.unwrap_or_default()),
            Err(e) => return Verdict::Fail(e.to_string()),
        }
    }
    let s = means[0] / means[1];
    let msg = format!(
        "1 worker {:.2} ms, 4 workers {:.2} ms, speedup {s:.2}x (need >= 2)",
        means[0], means[1]
    );
    gate(cores, s >= 2.0, msg)
}

// 8. Batching amortizes per-task overhead.
fn batch_shape() -> Verdict {
    let mut tput = Vec::new();
    for batch in [1, 1024] {
        let kernel = KernelSpec::HashBucket {
            k: 20,
            batch,
            hash: HashKind::SplitMix,
        };
        match run_experiment(&bench(kernel, team(4, Strategy::WorkStealing, 8), 3)) {
            Ok(r) if r.ok() => tput.push(r.mean_throughput().unwrap_or(0.0)),
            Ok(r) => return Verdict::Fail(r.failure.unwrap_or_default()),
            Err(e) => return Verdict::Fail(e.to_string()),
        }
    }
    let ratio = tput[1] / tput[0];
    let msg = format!(
        "4 workers: batch 1 {:.3e} rec/s (need > 1e5), batch 1024 {:.3e} rec/s, ratio {ratio:.1}x (need >= 2)",
        tput[0], tput[1]
    );
    if ratio >= 2.0 && tput[0] > 1e5 {
        Verdict::Pass(msg)
    } else {
        Verdict::Fail(msg)
    }
}

fn check_dump(dir: &Path) -> Result<CounterSet, String> {
    let d = load_dump(dir).map_err(|e| e.to_string())?;
    let wall: u64 = d
        .manifest
        .get("wall_time_ticks")
        .and_then(|v| v.parse().ok())
        .ok_or("manifest lacks wall_time_ticks")?;
    let mut total = CounterSet::default();
    for w in &d.workers {
        let s = state_durations(&w.events).map_err(|e| format!("worker {}: {e}", w.worker))?;
        if s.total() > wall {
            return Err(format!(
                "worker {}: states sum to {} > wall {wall}",
                w.worker,
                s.total()
            ));
        }
        w.counters
            .check_identities()
            .map_err(|e| format!("worker {}: {e}", w.worker))?;
        let task_events = w
            .events
            .iter()
            .filter(|e| e.kind == EventKind::Task)
            .count() as u64;
        if task_events != w.counters.ntasks_executed {
            return Err(format!(
                "worker {}: {task_events} TASK events, {} executed",
                w.worker, w.counters.ntasks_executed
            ));
        }
        if w.counters.ntasks_stolen() < w.counters.nreq_has_steal {
            return Err(format!(
                "worker {}: fewer stolen tasks than successful requests",
                w.worker
            ));
        }
        total.merge(&w.counters);
    }
    Ok(total)
}

// 9. Every dump is internally consistent and matches the in-process totals.
fn profiler_conservation() -> Verdict {
    let root = match tempfile::tempdir() {
        Ok(d) => d,
        Err(e) => return Verdict::Fail(e.to_string()),
    };
    let kernels = [
        KernelSpec::Fib { n: 20, cutoff: 6 },
        KernelSpec::Msort {
            n: 50_000,
            leaf: 512,
        },
        KernelSpec::Imbalance(ImbalanceSpec {
            n_tasks: 512,
            work_per_task: 5_000,
            ..ImbalanceSpec::default()
        }),
        KernelSpec::HashBucket {
            k: 12,
            batch: 8,
            hash: HashKind::SplitMix,
        },
    ];
    let mut dumps = 0;
    for (i, kernel) in kernels.iter().enumerate() {
        for strategy in Strategy::ALL {
            let dir = root
                .path()
                .join(format!("{}_{}", kernel.name(), strategy.cli_name()));
            let mut spec = bench(kernel.clone(), team(4, strategy, i as u64), 2);
            spec.team.zones = 2;
            spec.profile_dir = Some(dir);
            let r = match run_experiment(&spec) {
                Ok(r) if r.ok() => r,
                Ok(r) => return Verdict::Fail(r.failure.unwrap_or_default()),
                Err(e) => return Verdict::Fail(e.to_string()),
            };
            let mut merged = CounterSet::default();
            for run in &r.runs {
                let Some(d) = &run.dump else {
                    return Verdict::Fail("profiled run wrote no dump".into());
                };
                match check_dump(d) {
                    Ok(c) => merged.merge(&c),
                    Err(e) => return Verdict::Fail(format!("{}: {e}", d.display())),
                }
                dumps += 1;
            }
            if merged != r.counters() {
                return Verdict::Fail(format!(
                    "{} {strategy}: dump counters differ from report",
                    kernel.name()
                ));
            }
        }
    }
    Verdict::Pass(format!(
        "{dumps} dumps: states <= wall, self+local+remote == executed, steal funnel holds"
    ))
}

fn main() {
    let tally = Tally::default();
    let cores = physical_cores();
    println!(
        "acceptance: {cores} physical core(s), ring audit {}",
        if AUDIT_ENABLED { "on" } else { "off" }
    );

    type Check<'a> = Box<dyn Fn() -> Verdict + 'a>;
    let criteria: Vec<(&str, Check)> = vec![
        (
            "oracle equivalence",
            Box::new(|| oracle_equivalence(&tally)),
        ),
        ("exactly-once execution", Box::new(|| exactly_once(&tally))),
        ("SPSC stress", Box::new(|| spsc_stress(&tally))),
        (
            "barrier atomic-op census",
            Box::new(|| barrier_census(&tally)),
        ),
        ("protocol algebra", Box::new(|| protocol_algebra(&tally))),
        ("DLB effectiveness", Box::new(|| dlb_effectiveness(cores))),
        ("speedup smoke test", Box::new(|| speedup(cores))),
        ("batch-size shape", Box::new(batch_shape)),
        ("profiler conservation", Box::new(profiler_conservation)),
    ];

    let (mut failed, mut unverified) = (0, 0);
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let verdict = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Verdict::Fail(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        let (tag, msg) = match verdict {
            Verdict::Pass(m) => ("PASS", m),
            Verdict::Fail(m) => {
                failed += 1;
                ("FAIL", m)
            }
            Verdict::Unverified(m) => {
                unverified += 1;
                ("UNVERIFIED", m)
            }
        };
        println!("[{tag}] {} {name}: {msg} ({secs:.1}s)", i + 1);
    }
    println!(
        "acceptance: {} passed, {failed} failed, {unverified} unverified",
        criteria.len() - failed - unverified
    );
    if failed > 0 || (strict() && unverified > 0) {
        std::process::exit(1);
    }
}
