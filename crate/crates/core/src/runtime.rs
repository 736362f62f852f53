//! Worker team, task creation and execution, scheduling points, taskwait and
//! the end-of-region barrier.

use std::any::Any;
use std::cell::{Cell, RefCell};
use std::marker::PhantomData;
use std::panic::{self, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use crossbeam_utils::CachePadded;
use rand::rngs::SmallRng;
use rand::SeedableRng;
use thiserror::Error;

use crate::barrier::{BarrierCensus, TreeBarrier};
use crate::config::{ConfigError, Strategy, TeamConfig, ZoneMap};
use crate::dlb::{self, DlbCells, Redirect, StealSession, StopReason, VictimPicker};
use crate::profiler::{
    self, timestamp_now, CounterSet, DumpError, EventKind, EventLog, Manifest, WorkerProfile,
    TICKS_PER_SECOND,
};
use crate::queue::{dequeue_next, PlacementCursor, QueueMatrix, ScanState};
use crate::task::{Task, TaskBody, TaskPool, TaskRef};

/// Consecutive idle passes spent spinning before a worker starts yielding.
const SPIN_LIMIT: u32 = 32;

#[derive(Debug, Error)]
pub enum TeamError {
    #[error("invalid team configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("failed to start worker {worker}: {source}")]
    Spawn {
        worker: usize,
        #[source]
        source: std::io::Error,
    },
}

/// Where a newly spawned task went.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    /// Pushed to a ring consumed by this worker.
    Queued(usize),
    /// The chosen ring was full; the task already ran on the spawning worker.
    ExecutedImmediately,
}

/// Outcome of one scheduling point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchedAction {
    RanTask,
    /// Idle, and the timeout elapsed so steal requests went out.
    Requested,
    Idle,
}

struct Shared {
    config: TeamConfig,
    zones: ZoneMap,
    matrix: QueueMatrix<Task>,
    cells: Box<[CachePadded<DlbCells>]>,
    barrier: TreeBarrier,
    task_count: CachePadded<AtomicUsize>,
    dock_arrived: AtomicUsize,
    dock_abort: AtomicBool,
    panic: Mutex<Option<Box<dyn Any + Send>>>,
}

impl Shared {
    fn store_panic(&self, payload: Box<dyn Any + Send>) {
        let mut slot = self.panic.lock().unwrap_or_else(|e| e.into_inner());
        slot.get_or_insert(payload);
    }
}

/// A reusable team of workers. Queue rows, DLB cells and the barrier persist
/// across [`run`](Team::run) calls; worker threads live for one run.
pub struct Team {
    shared: Shared,
    epoch: u64,
}

impl Team {
    pub fn new(config: TeamConfig) -> Result<Self, TeamError> {
        config.validate()?;
        let n = config.n_workers;
        Ok(Team {
            shared: Shared {
                zones: config.zone_map(),
                matrix: QueueMatrix::new(n, config.queue_capacity),
                cells: dlb::cell_array(n),
                barrier: TreeBarrier::new(n),
                task_count: CachePadded::new(AtomicUsize::new(0)),
                dock_arrived: AtomicUsize::new(0),
                dock_abort: AtomicBool::new(false),
                panic: Mutex::new(None),
                config,
            },
            epoch: 0,
        })
    }

    pub fn config(&self) -> &TeamConfig {
        &self.shared.config
    }

    /// Current round cell of every worker.
    pub fn rounds(&self) -> Vec<u64> {
        self.shared.cells.iter().map(|c| c.round.read()).collect()
    }

    /// Runs `root` as the initial task on worker 0 (the calling thread) with
    /// the rest of the team on fresh threads, and returns once the team
    /// barrier has released, i.e. every task spawned during the region has
    /// run. A panic in any task is re-raised here after the region ends.
    pub fn run<F, R>(&mut self, root: F) -> Result<(R, TeamReport), TeamError>
    where
        F: FnOnce(&Worker<'_>) -> R,
    {
        self.epoch += 1;
        let epoch = self.epoch;
        let shared = &self.shared;
        let n = shared.config.n_workers;
        shared.dock_arrived.store(0, Ordering::Relaxed);
        shared.dock_abort.store(false, Ordering::Relaxed);
        // The root task is live from the start.
        shared.task_count.store(1, Ordering::Release);
        let census_before = shared.barrier.census();
        let rounds_before: Vec<u64> = shared.cells.iter().map(|c| c.round.read()).collect();

        let origin = timestamp_now();
        let wall_start = Instant::now();
        let outcome = std::thread::scope(|s| {
            let mut handles = Vec::with_capacity(n.saturating_sub(1));
            for id in 1..n {
                let spawned = std::thread::Builder::new()
                    .name(format!("xtask-worker-{id}"))
                    .spawn_scoped(s, move || {
                        let w = Worker::new(shared, id, epoch);
                        if !w.dock() {
                            return None;
                        }
                        w.barrier_wait();
                        Some(w.finish(origin))
                    });
                match spawned {
                    Ok(h) => handles.push(h),
                    Err(source) => {
                        shared.dock_abort.store(true, Ordering::Release);
                        for h in handles {
                            let _ = h.join();
                        }
                        return Err(TeamError::Spawn { worker: id, source });
                    }
                }
            }

            let w0 = Worker::new(shared, 0, epoch);
            w0.dock();
            let out = w0.run_root(root);
            w0.barrier_wait();
            let mut profiles = vec![w0.finish(origin)];
            for h in handles {
                match h.join() {
                    Ok(p) => profiles.push(p.expect("dock completed")),
                    Err(payload) => panic::resume_unwind(payload),
                }
            }
            Ok((out, profiles))
        });
        let wall = wall_start.elapsed();
        let (out, workers) = outcome?;

        if let Some(payload) = shared
            .panic
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .take()
        {
            panic::resume_unwind(payload);
        }
        let out = match out {
            Ok(v) => v,
            Err(payload) => panic::resume_unwind(payload),
        };

        let rounds_after: Vec<u64> = shared.cells.iter().map(|c| c.round.read()).collect();
        let report = TeamReport {
            config: shared.config.clone(),
            epoch,
            wall,
            wall_ticks: wall.as_nanos() as u64,
            workers,
            barrier: shared.barrier.census() - census_before,
            rounds: rounds_before.into_iter().zip(rounds_after).collect(),
            final_task_count: shared.task_count.load(Ordering::Acquire),
        };
        Ok((out, report))
    }
}

/// Builds a team for `config`, runs `root` once and returns its value and
/// the team's report.
pub fn team_run<F, R>(config: TeamConfig, root: F) -> Result<(R, TeamReport), TeamError>
where
    F: FnOnce(&Worker<'_>) -> R,
{
    Team::new(config)?.run(root)
}

/// What a finished region reports.
#[derive(Debug, Clone)]
pub struct TeamReport {
    pub config: TeamConfig,
    pub epoch: u64,
    pub wall: Duration,
    pub wall_ticks: u64,
    /// One entry per worker, in ID order; events are relative to region start.
    pub workers: Vec<WorkerProfile>,
    /// Barrier operations performed during this region.
    pub barrier: BarrierCensus,
    /// Round cell of each worker at region start and end.
    pub rounds: Vec<(u64, u64)>,
    /// Global task count after release; always zero.
    pub final_task_count: usize,
}

impl TeamReport {
    pub fn totals(&self) -> CounterSet {
        let mut total = CounterSet::default();
        for w in &self.workers {
            total.merge(&w.counters);
        }
        total
    }

    pub fn tasks_created(&self) -> u64 {
        self.totals().ntasks_created
    }

    pub fn tasks_executed(&self) -> u64 {
        self.totals().ntasks_executed
    }

    /// Exclusive STALL ticks summed over workers (needs profiling).
    pub fn stall_ticks(&self) -> u64 {
        self.workers
            .iter()
            .map(|w| {
                profiler::state_durations(&w.events)
                    .map(|d| d.get(EventKind::Stall))
                    .unwrap_or(0)
            })
            .sum()
    }

    /// Checks the counter identities that hold for every finished region.
    pub fn check_conservation(&self) -> Result<(), String> {
        for w in &self.workers {
            w.counters
                .check_identities()
                .map_err(|e| format!("worker {}: {e}", w.worker))?;
        }
        let t = self.totals();
        if t.ntasks_created != t.ntasks_executed {
            return Err(format!(
                "created {} != executed {}",
                t.ntasks_created, t.ntasks_executed
            ));
        }
        // The root task is the one record not created through placement.
        let placed = t.ntasks_static_push + t.ntasks_imm_exec + t.ntasks_redirected + 1;
        if placed != t.ntasks_created {
            return Err(format!(
                "static {} + imm {} + redirected {} + root != created {}",
                t.ntasks_static_push, t.ntasks_imm_exec, t.ntasks_redirected, t.ntasks_created
            ));
        }
        if self.final_task_count != 0 {
            return Err(format!(
                "task count {} after release",
                self.final_task_count
            ));
        }
        Ok(())
    }

    /// Manifest describing this region; callers append benchmark details.
    pub fn manifest(&self) -> Manifest {
        let c = &self.config;
        let mut m = Manifest::default();
        m.push("n_workers", c.n_workers);
        m.push("zones", c.zones);
        m.push("ticks_per_second", TICKS_PER_SECOND);
        m.push(
            "timestamp_overhead_ticks",
            format!("{:.2}", profiler::timestamp_overhead(10_000)),
        );
        m.push("queue_capacity", c.queue_capacity);
        m.push("dlb", c.dlb.strategy.cli_name());
        m.push("n_victim", c.dlb.n_victim);
        m.push("n_steal", c.dlb.n_steal);
        m.push("t_interval", c.dlb.t_interval);
        m.push("p_local", c.dlb.p_local);
        m.push("seed", c.seed);
        m.push("profiling", c.profiling);
        m.push("wall_time_ticks", self.wall_ticks);
        m
    }

    pub fn dump(
        &self,
        dir: &std::path::Path,
        manifest: &Manifest,
    ) -> Result<Vec<std::path::PathBuf>, DumpError> {
        profiler::dump(dir, manifest, &self.workers)
    }
}

/// A worker's view of the team, handed to every task body it runs.
///
/// All per-worker state lives here and is never shared; only the queue rings
/// and DLB cells are touched by other workers.
pub struct Worker<'t> {
    shared: &'t Shared,
    id: usize,
    zone: usize,
    epoch: u64,
    strategy: Strategy,
    current: Cell<Option<TaskRef>>,
    cursor: RefCell<PlacementCursor>,
    scan: RefCell<ScanState>,
    pool: RefCell<TaskPool>,
    counters: RefCell<CounterSet>,
    log: RefCell<EventLog>,
    rng: RefCell<SmallRng>,
    picker: VictimPicker,
    victims: RefCell<Vec<usize>>,
    session: Cell<StealSession>,
    round: Cell<u64>,
    timeout: Cell<u64>,
    idle: Cell<bool>,
    stall_start: Cell<u64>,
}

impl<'t> Worker<'t> {
    fn new(shared: &'t Shared, id: usize, epoch: u64) -> Self {
        let config = &shared.config;
        let seed = config
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add((id as u64) << 32 | epoch);
        Worker {
            shared,
            id,
            zone: shared.zones.zone_of(id),
            epoch,
            strategy: config.dlb.strategy,
            current: Cell::new(None),
            cursor: RefCell::new(PlacementCursor::new(id, config.n_workers)),
            scan: RefCell::new(ScanState::default()),
            pool: RefCell::new(TaskPool::new()),
            counters: RefCell::new(CounterSet::default()),
            log: RefCell::new(EventLog::new(config.profiling)),
            rng: RefCell::new(SmallRng::seed_from_u64(seed)),
            picker: VictimPicker::new(shared.zones, id, config.dlb.p_local),
            victims: RefCell::new(Vec::new()),
            session: Cell::new(StealSession::default()),
            round: Cell::new(shared.cells[id].round.read()),
            timeout: Cell::new(0),
            idle: Cell::new(false),
            stall_start: Cell::new(0),
        }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn zone(&self) -> usize {
        self.zone
    }

    pub fn n_workers(&self) -> usize {
        self.shared.config.n_workers
    }

    pub fn config(&self) -> &TeamConfig {
        &self.shared.config
    }

    /// Spawned, not-yet-completed children of the current task.
    pub fn unfinished_children(&self) -> usize {
        self.current.get().map_or(0, |t| t.unfinished_children())
    }

    /// Global count of live tasks (created, not yet completed).
    pub fn live_tasks(&self) -> usize {
        self.shared.task_count.load(Ordering::Acquire)
    }

    #[inline]
    fn count(&self, f: impl FnOnce(&mut CounterSet)) {
        f(&mut self.counters.borrow_mut());
    }

    #[inline]
    fn now(&self) -> u64 {
        if self.shared.config.profiling {
            timestamp_now()
        } else {
            0
        }
    }

    #[inline]
    fn record(&self, kind: EventKind, start: u64) {
        if self.shared.config.profiling {
            self.log.borrow_mut().record(kind, start, timestamp_now());
        }
    }

    fn dock(&self) -> bool {
        let n = self.shared.config.n_workers;
        self.shared.dock_arrived.fetch_add(1, Ordering::AcqRel);
        loop {
            if self.shared.dock_abort.load(Ordering::Acquire) {
                return false;
            }
            if self.shared.dock_arrived.load(Ordering::Acquire) >= n {
                return true;
            }
            std::thread::yield_now();
        }
    }

    fn run_root<F, R>(&self, root: F) -> std::thread::Result<R>
    where
        F: FnOnce(&Worker<'_>) -> R,
    {
        let task = self.pool.borrow_mut().make(None, None, self.id, self.zone);
        self.count(|c| {
            c.ntasks_created += 1;
            c.ntasks_executed += 1;
            c.ntasks_self += 1;
        });
        self.current.set(Some(task));
        let start = self.now();
        let out = panic::catch_unwind(AssertUnwindSafe(|| root(self)));
        // Children of the root still pending are waited for by the barrier.
        self.record(EventKind::Task, start);
        self.current.set(None);
        self.complete(task);
        out
    }

    fn finish(self, origin: u64) -> WorkerProfile {
        let mut events = self.log.into_inner().into_events();
        for e in &mut events {
            e.start -= origin;
            e.end -= origin;
        }
        WorkerProfile {
            worker: self.id,
            zone: self.zone,
            counters: self.counters.into_inner(),
            events,
        }
    }

    /// Creates a child of the current task running `body`.
    ///
    /// Placement follows the redirect session when one is active, otherwise
    /// the round-robin cycle; a full ring makes the body run right here.
    pub fn spawn<F>(&self, body: F) -> Placement
    where
        F: FnOnce(&Worker<'_>) + Send + 'static,
    {
        self.spawn_boxed(Box::new(body))
    }

    fn spawn_boxed(&self, body: TaskBody) -> Placement {
        let start = self.now();
        let parent = self
            .current
            .get()
            .expect("spawn called outside a running task");
        parent.add_child();
        self.shared.task_count.fetch_add(1, Ordering::AcqRel);
        let task = self
            .pool
            .borrow_mut()
            .make(Some(body), Some(parent), self.id, self.zone);
        self.count(|c| c.ntasks_created += 1);
        let placement = self.place(task);
        self.record(EventKind::TaskCreate, start);
        if placement == Placement::ExecutedImmediately {
            self.execute(task);
        }
        placement
    }

    fn place(&self, task: TaskRef) -> Placement {
        let matrix = &self.shared.matrix;
        if self.strategy == Strategy::RedirectPush {
            let mut session = self.session.get();
            let outcome = session.try_redirect(
                matrix,
                self.id,
                self.shared.config.dlb.n_steal,
                task.as_ptr(),
            );
            self.session.set(session);
            match outcome {
                Redirect::Redirected(thief) => {
                    let local = self.shared.zones.zone_of(thief) == self.zone;
                    self.count(|c| {
                        c.ntasks_redirected += 1;
                        if local {
                            c.ntasks_stolen_local += 1;
                        } else {
                            c.ntasks_stolen_remote += 1;
                        }
                    });
                    return Placement::Queued(thief);
                }
                Redirect::SessionEnded { pushed, stop, .. } => self.close_session(pushed, stop),
                Redirect::NotRedirected(_) => {}
            }
        }
        let target = self.cursor.borrow_mut().next_target();
        match matrix
            .ring(target, self.id)
            .push(self.id as u32, task.as_ptr())
        {
            Ok(()) => {
                self.count(|c| c.ntasks_static_push += 1);
                Placement::Queued(target)
            }
            Err(_) => {
                self.count(|c| c.ntasks_imm_exec += 1);
                Placement::ExecutedImmediately
            }
        }
    }

    fn execute(&self, task: TaskRef) {
        let (creator, creator_zone) = task.creator();
        self.count(|c| {
            c.ntasks_executed += 1;
            if creator == self.id {
                c.ntasks_self += 1;
            } else if creator_zone == self.zone {
                c.ntasks_local += 1;
            } else {
                c.ntasks_remote += 1;
            }
        });
        let body = task.take_body().expect("task executed twice");
        let prev = self.current.replace(Some(task));
        let start = self.now();
        let result = panic::catch_unwind(AssertUnwindSafe(|| body(self)));
        self.record(EventKind::Task, start);
        self.current.set(prev);
        if let Err(payload) = result {
            self.shared.store_panic(payload);
        }
        self.complete(task);
    }

    fn complete(&self, task: TaskRef) {
        if let Some(parent) = task.parent() {
            if let Some(rec) = parent.release() {
                self.pool.borrow_mut().recycle(rec);
            }
        }
        if let Some(rec) = task.release() {
            self.pool.borrow_mut().recycle(rec);
        }
        let prev = self.shared.task_count.fetch_sub(1, Ordering::AcqRel);
        assert!(prev > 0, "global task count underflow");
    }

    /// Waits until every child spawned so far by the current task has
    /// completed, running other tasks (and stealing) in the meantime.
    pub fn taskwait(&self) {
        let Some(task) = self.current.get() else {
            return;
        };
        if task.unfinished_children() == 0 {
            return;
        }
        let start = self.now();
        let mut streak = 0;
        while task.unfinished_children() > 0 {
            match self.scheduling_point() {
                SchedAction::RanTask => streak = 0,
                _ => backoff(&mut streak),
            }
        }
        self.leave_idle();
        self.record(EventKind::Taskwait, start);
    }

    /// Runs `f` with a [`Scope`] whose tasks may borrow from the caller's
    /// stack, then waits for all children of the current task.
    pub fn scope<'env, F, R>(&self, f: F) -> R
    where
        F: for<'scope> FnOnce(&'scope Scope<'scope, 'env>) -> R,
    {
        struct WaitOnDrop<'a, 'b>(&'a Worker<'b>);
        impl Drop for WaitOnDrop<'_, '_> {
            fn drop(&mut self) {
                self.0.taskwait();
            }
        }
        let scope = Scope {
            worker: self,
            _scope: PhantomData,
            _env: PhantomData,
        };
        let guard = WaitOnDrop(self);
        let out = f(&scope);
        drop(guard);
        out
    }

    /// One pass of the worker loop: run the next task from this worker's row
    /// (handling a pending steal request first), or go idle and, once the
    /// idle timeout elapses, send steal requests.
    pub fn scheduling_point(&self) -> SchedAction {
        let found = dequeue_next(&self.shared.matrix, self.id, &mut self.scan.borrow_mut());
        if let Some(ptr) = found {
            self.leave_idle();
            self.victim_handle();
            self.execute(TaskRef::from_ptr(ptr));
            return SchedAction::RanTask;
        }
        self.enter_idle();
        if self.strategy == Strategy::RedirectPush && self.session.get().is_active() {
            // Nothing left to create tasks from; give the thief up.
            let mut s = self.session.get();
            let (_, pushed) = s.end().expect("active");
            self.session.set(s);
            self.close_session(pushed, StopReason::SourceEmpty);
        }
        if self.strategy == Strategy::Static || self.n_workers() < 2 {
            return SchedAction::Idle;
        }
        let waited = self.timeout.get();
        if waited >= self.shared.config.dlb.t_interval {
            self.timeout.set(0);
            self.thief_request_round();
            return SchedAction::Requested;
        }
        self.timeout.set(waited + 1);
        SchedAction::Idle
    }

    fn enter_idle(&self) {
        if !self.idle.replace(true) {
            self.stall_start.set(self.now());
        }
    }

    fn leave_idle(&self) {
        if self.idle.replace(false) {
            self.timeout.set(0);
            self.record(EventKind::Stall, self.stall_start.get());
        }
    }

    /// Sends requests to up to `n_victim` distinct victims; returns how many
    /// request cells were written.
    pub fn thief_request_round(&self) -> usize {
        let k = self.shared.config.dlb.n_victim.min(self.n_workers() - 1);
        let mut victims = self.victims.borrow_mut();
        self.picker
            .pick_distinct(k, &mut self.rng.borrow_mut(), &mut victims);
        let sent = victims
            .iter()
            .filter(|&&v| dlb::send_request(&self.shared.cells[v], self.id))
            .count();
        self.count(|c| c.nreq_sent += sent as u64);
        sent
    }

    /// Handles a valid request addressed to this worker's current round.
    /// Returns whether one was handled.
    fn victim_handle(&self) -> bool {
        if self.strategy == Strategy::Static {
            return false;
        }
        let cells = &self.shared.cells[self.id];
        let Some(thief) = dlb::pending_thief(cells, self.round.get()) else {
            return false;
        };
        if thief == self.id || thief >= self.n_workers() {
            return false;
        }
        match self.strategy {
            Strategy::WorkStealing => {
                let m = dlb::migrate_to_thief(
                    &self.shared.matrix,
                    self.id,
                    thief,
                    self.shared.config.dlb.n_steal,
                    &mut self.scan.borrow_mut(),
                    |_| {},
                );
                let local = self.shared.zones.zone_of(thief) == self.zone;
                self.count(|c| {
                    c.nreq_handled += 1;
                    let moved = m.moved as u64;
                    if moved > 0 {
                        c.nreq_has_steal += 1;
                    }
                    if local {
                        c.ntasks_stolen_local += moved;
                    } else {
                        c.ntasks_stolen_remote += moved;
                    }
                    match m.stop {
                        StopReason::SourceEmpty => c.nreq_src_empty += 1,
                        StopReason::TargetFull => c.nreq_target_full += 1,
                        StopReason::LimitReached => {}
                    }
                    c.max_steal_per_request = c.max_steal_per_request.max(moved);
                });
                self.advance_round();
            }
            Strategy::RedirectPush => {
                let mut s = self.session.get();
                if s.is_active() {
                    return false;
                }
                s.start(thief);
                self.session.set(s);
                self.count(|c| c.nreq_handled += 1);
            }
            Strategy::Static => unreachable!(),
        }
        true
    }

    fn close_session(&self, pushed: usize, stop: StopReason) {
        self.count(|c| {
            if pushed > 0 {
                c.nreq_has_steal += 1;
            }
            match stop {
                StopReason::SourceEmpty => c.nreq_src_empty += 1,
                StopReason::TargetFull => c.nreq_target_full += 1,
                StopReason::LimitReached => {}
            }
            c.max_steal_per_request = c.max_steal_per_request.max(pushed as u64);
        });
        self.advance_round();
    }

    fn advance_round(&self) {
        let next = self.round.get() + 1;
        self.round.set(next);
        self.shared.cells[self.id].round.write(next);
        self.count(|c| c.nrounds_advanced += 1);
    }

    /// Team barrier: keep scheduling until this subtree has gathered, then
    /// wait for the release broadcast (the root instead waits for the global
    /// task count to reach zero).
    fn barrier_wait(&self) {
        let start = self.now();
        let barrier = &self.shared.barrier;
        let epoch = self.epoch;
        let mut gathered = false;
        let mut streak = 0;
        loop {
            if self.scheduling_point() == SchedAction::RanTask {
                streak = 0;
                continue;
            }
            if !gathered {
                if self.unfinished_children() == 0 && barrier.children_gathered(self.id, epoch) {
                    if self.id == 0 {
                        if self.live_tasks() == 0 {
                            barrier.release_root(epoch);
                            break;
                        }
                    } else {
                        barrier.signal_parent(self.id, epoch);
                        gathered = true;
                    }
                }
            } else if barrier.is_released(self.id, epoch) {
                barrier.release_children(self.id, epoch);
                break;
            }
            backoff(&mut streak);
        }
        assert_eq!(self.live_tasks(), 0, "barrier released with live tasks");
        let mut s = self.session.get();
        if let Some((_, pushed)) = s.end() {
            self.session.set(s);
            self.close_session(pushed, StopReason::SourceEmpty);
        }
        self.leave_idle();
        self.record(EventKind::Barrier, start);
    }
}

#[inline]
fn backoff(streak: &mut u32) {
    *streak += 1;
    if *streak > SPIN_LIMIT {
        std::thread::yield_now();
    } else {
        std::hint::spin_loop();
    }
}

/// Spawning handle whose tasks may borrow anything that outlives the
/// [`Worker::scope`] call. The scope ends with a taskwait.
pub struct Scope<'scope, 'env: 'scope> {
    worker: &'scope Worker<'scope>,
    _scope: PhantomData<&'scope mut &'scope ()>,
    _env: PhantomData<&'env mut &'env ()>,
}

impl<'scope> Scope<'scope, '_> {
    pub fn spawn<F>(&'scope self, body: F) -> Placement
    where
        F: FnOnce(&Worker<'_>) + Send + 'scope,
    {
        let body: Box<dyn for<'a, 'b> FnOnce(&'a Worker<'b>) + Send + 'scope> = Box::new(body);
        // Safety: the scope ends with a taskwait on the current task, and every
        // task spawned here is a direct child of it, so the body has run (or
        // been dropped after a panic) before anything it borrows goes away.
        let body: TaskBody = unsafe { std::mem::transmute(body) };
        self.worker.spawn_boxed(body)
    }

    pub fn worker(&self) -> &Worker<'scope> {
        self.worker
    }
}
