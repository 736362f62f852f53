//! Per-worker event timelines, statistical counters and the end-of-run dump.
//!
//! Events are whole intervals and nest the way the runtime's call stack does:
//! a `TASK` may contain `TASK_CREATE` and `TASKWAIT`, a `TASKWAIT` contains the
//! `TASK`s and `STALL`s run while waiting, and `BARRIER` spans a worker's whole
//! stay in the team barrier. [`state_durations`] turns a nested timeline into
//! exclusive per-state time by charging every tick to the innermost open
//! event.
//!
//! Dump layout (one directory per run):
//!
//! * `events_<id>.csv`: `worker_id,kind,start_ticks,end_ticks`
//! * `counters_<id>.csv`: `counter,value`
//! * `manifest.txt`: `key=value` lines, written last

use std::fmt;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::OnceLock;
use std::time::Instant;

use thiserror::Error;

/// Environment variable naming the dump directory when none is given.
pub const PERFLOG_DIR_ENV: &str = "XTASK_PERFLOG_DIR";

/// Ticks are nanoseconds of a monotonic clock.
pub const TICKS_PER_SECOND: u64 = 1_000_000_000;

fn anchor() -> Instant {
    static ANCHOR: OnceLock<Instant> = OnceLock::new();
    *ANCHOR.get_or_init(Instant::now)
}

/// Monotonic tick count since the first call in this process.
#[inline]
pub fn timestamp_now() -> u64 {
    anchor().elapsed().as_nanos() as u64
}

/// Mean cost of one [`timestamp_now`] call, in ticks, over `calls` calls.
pub fn timestamp_overhead(calls: u32) -> f64 {
    let calls = calls.max(1);
    let start = timestamp_now();
    let mut last = start;
    for _ in 0..calls {
        last = std::hint::black_box(timestamp_now());
    }
    (last - start) as f64 / calls as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EventKind {
    Task,
    TaskCreate,
    Taskwait,
    Barrier,
    Stall,
}

impl EventKind {
    pub const ALL: [EventKind; 5] = [
        EventKind::Task,
        EventKind::TaskCreate,
        EventKind::Taskwait,
        EventKind::Barrier,
        EventKind::Stall,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Task => "TASK",
            EventKind::TaskCreate => "TASK_CREATE",
            EventKind::Taskwait => "TASKWAIT",
            EventKind::Barrier => "BARRIER",
            EventKind::Stall => "STALL",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EventKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown event kind {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PerfEvent {
    pub kind: EventKind,
    pub start: u64,
    pub end: u64,
}

impl PerfEvent {
    pub fn duration(&self) -> u64 {
        self.end - self.start
    }
}

/// Worker-private event buffer.
#[derive(Debug, Default)]
pub struct EventLog {
    enabled: bool,
    events: Vec<PerfEvent>,
}

const EVENT_CHUNK: usize = 4096;

impl EventLog {
    pub fn new(enabled: bool) -> Self {
        EventLog {
            enabled,
            events: if enabled {
                Vec::with_capacity(EVENT_CHUNK)
            } else {
                Vec::new()
            },
        }
    }

    #[inline]
    pub fn enabled(&self) -> bool {
        self.enabled
    }

    #[inline]
    pub fn record(&mut self, kind: EventKind, start: u64, end: u64) {
        if !self.enabled {
            return;
        }
        debug_assert!(end >= start);
        if self.events.len() == self.events.capacity() {
            self.events.reserve(EVENT_CHUNK);
        }
        self.events.push(PerfEvent { kind, start, end });
    }

    pub fn events(&self) -> &[PerfEvent] {
        &self.events
    }

    pub fn into_events(self) -> Vec<PerfEvent> {
        self.events
    }
}

/// Exclusive ticks per state, indexed like [`EventKind::ALL`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StateDurations(pub [u64; 5]);

impl StateDurations {
    pub fn get(&self, kind: EventKind) -> u64 {
        self.0[kind.index()]
    }

    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TimelineError {
    #[error("event {index} ends before it starts")]
    Inverted { index: usize },
    #[error("event {index} partially overlaps an enclosing event")]
    Crossing { index: usize },
}

/// Charges every tick to the innermost open event. Events must be properly
/// nested (disjoint or contained); partial overlap is an error.
pub fn state_durations(events: &[PerfEvent]) -> Result<StateDurations, TimelineError> {
    let mut order: Vec<usize> = (0..events.len()).collect();
    for (i, e) in events.iter().enumerate() {
        if e.end < e.start {
            return Err(TimelineError::Inverted { index: i });
        }
    }
    // Outer events first when they share a start.
    order.sort_by(|&a, &b| {
        let (ea, eb) = (&events[a], &events[b]);
        ea.start.cmp(&eb.start).then(eb.end.cmp(&ea.end))
    });

    let mut out = [0u64; 5];
    // Stack of (event index, cursor): cursor is where unattributed time of
    // that event starts.
    let mut stack: Vec<(usize, u64)> = Vec::new();
    let close_until = |stack: &mut Vec<(usize, u64)>, out: &mut [u64; 5], t: u64| {
        while let Some(&(top, cursor)) = stack.last() {
            let e = &events[top];
            if e.end > t {
                break;
            }
            out[e.kind.index()] += e.end - cursor;
            stack.pop();
            if let Some(parent) = stack.last_mut() {
                parent.1 = e.end;
            }
        }
    };
    for &i in &order {
        let e = &events[i];
        close_until(&mut stack, &mut out, e.start);
        if let Some(&(top, cursor)) = stack.last() {
            let parent = &events[top];
            if e.end > parent.end {
                return Err(TimelineError::Crossing { index: i });
            }
            out[parent.kind.index()] += e.start - cursor;
        }
        stack.push((i, e.start));
    }
    close_until(&mut stack, &mut out, u64::MAX);
    Ok(StateDurations(out))
}

macro_rules! counters {
    ($($(#[$doc:meta])* $field:ident),* $(,)?) => {
        /// Per-worker statistics.
        #[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
        pub struct CounterSet {
            $($(#[$doc])* pub $field: u64,)*
        }

        impl CounterSet {
            pub const NAMES: &'static [&'static str] = &[$(stringify!($field)),*];

            pub fn entries(&self) -> Vec<(&'static str, u64)> {
                vec![$((stringify!($field), self.$field)),*]
            }

            pub fn set(&mut self, name: &str, value: u64) -> bool {
                match name {
                    $(stringify!($field) => { self.$field = value; true })*
                    _ => false,
                }
            }

            /// Sums every counter except `max_steal_per_request`, which
            /// takes the maximum.
            pub fn merge(&mut self, other: &CounterSet) {
                let max_steal = self.max_steal_per_request.max(other.max_steal_per_request);
                $(self.$field += other.$field;)*
                self.max_steal_per_request = max_steal;
            }
        }
    };
}

counters! {
    /// Tasks run by the worker that created them.
    ntasks_self,
    /// Tasks run by another worker in the creator's zone.
    ntasks_local,
    /// Tasks run in a different zone than the creator's.
    ntasks_remote,
    /// Successful round-robin placements, master queue included.
    ntasks_static_push,
    /// Tasks run inline because the chosen ring was full.
    ntasks_imm_exec,
    /// Tasks a victim redirected to a thief at creation.
    ntasks_redirected,
    ntasks_created,
    ntasks_executed,
    nreq_sent,
    nreq_handled,
    nreq_has_steal,
    nreq_src_empty,
    nreq_target_full,
    /// Tasks this victim handed to thieves in its own zone.
    ntasks_stolen_local,
    /// Tasks this victim handed to thieves in other zones.
    ntasks_stolen_remote,
    /// Round-cell increments performed by this worker.
    nrounds_advanced,
    /// Largest number of tasks moved for a single handled request.
    max_steal_per_request,
}

impl CounterSet {
    pub fn ntasks_stolen(&self) -> u64 {
        self.ntasks_stolen_local + self.ntasks_stolen_remote
    }

    /// Checks the identities every worker's counters must satisfy.
    pub fn check_identities(&self) -> Result<(), String> {
        let by_origin = self.ntasks_self + self.ntasks_local + self.ntasks_remote;
        if by_origin != self.ntasks_executed {
            return Err(format!(
                "self+local+remote = {by_origin} but executed = {}",
                self.ntasks_executed
            ));
        }
        if self.nreq_has_steal > self.nreq_handled {
            return Err(format!(
                "requests with steal {} exceed handled {}",
                self.nreq_has_steal, self.nreq_handled
            ));
        }
        if self.ntasks_stolen_local > self.ntasks_stolen() {
            return Err("local steals exceed total steals".into());
        }
        Ok(())
    }
}

/// Everything one worker contributes to a dump.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WorkerProfile {
    pub worker: usize,
    pub zone: usize,
    pub counters: CounterSet,
    pub events: Vec<PerfEvent>,
}

/// Run-level metadata written to `manifest.txt`, in order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

#[derive(Debug, Error)]
pub enum DumpError {
    #[error("no dump directory given and {PERFLOG_DIR_ENV} is not set")]
    NoDirectory,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DumpError + '_ {
    move |source| DumpError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Resolves the dump directory: explicit argument first, then the
/// environment.
pub fn resolve_dump_dir(explicit: Option<&Path>) -> Result<PathBuf, DumpError> {
    match explicit {
        Some(p) => Ok(p.to_path_buf()),
        None => std::env::var_os(PERFLOG_DIR_ENV)
            .filter(|v| !v.is_empty())
            .map(PathBuf::from)
            .ok_or(DumpError::NoDirectory),
    }
}

fn write_file(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<fs::File>) -> io::Result<()>,
) -> Result<(), DumpError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    body(&mut w).and_then(|_| w.flush()).map_err(io_err(path))
}

/// Writes per-worker events and counters, then the manifest. Existing files
/// are overwritten. The manifest goes through a temporary file and a rename,
/// so a failed dump never leaves a manifest behind.
pub fn dump(
    dir: &Path,
    manifest: &Manifest,
    workers: &[WorkerProfile],
) -> Result<Vec<PathBuf>, DumpError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::with_capacity(2 * workers.len() + 1);
    for w in workers {
        let path = dir.join(format!("events_{}.csv", w.worker));
        let mut events = w.events.clone();
        events.sort_by_key(|e| (e.start, std::cmp::Reverse(e.end)));
        write_file(&path, |out| {
            writeln!(out, "worker_id,kind,start_ticks,end_ticks")?;
            for e in &events {
                writeln!(out, "{},{},{},{}", w.worker, e.kind, e.start, e.end)?;
            }
            Ok(())
        })?;
        written.push(path);

        let path = dir.join(format!("counters_{}.csv", w.worker));
        write_file(&path, |out| {
            writeln!(out, "counter,value")?;
            for (name, value) in w.counters.entries() {
                writeln!(out, "{name},{value}")?;
            }
            Ok(())
        })?;
        written.push(path);
    }
    let tmp = dir.join(".manifest.txt.tmp");
    write_file(&tmp, |out| {
        for (k, v) in &manifest.entries {
            writeln!(out, "{k}={v}")?;
        }
        Ok(())
    })?;
    let path = dir.join("manifest.txt");
    fs::rename(&tmp, &path).map_err(io_err(&path))?;
    written.push(path);
    Ok(written)
}

/// A dump read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedDump {
    pub manifest: Manifest,
    pub workers: Vec<WorkerProfile>,
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> DumpError {
    DumpError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads a dump written by [`dump`].
pub fn load_dump(dir: &Path) -> Result<LoadedDump, DumpError> {
    let path = dir.join("manifest.txt");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let mut manifest = Manifest::default();
    for (i, line) in text.lines().enumerate() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| parse_err(&path, i + 1, "expected key=value"))?;
        manifest.push(k, v);
    }
    let n: usize = manifest
        .get("n_workers")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| parse_err(&path, 0, "missing or invalid n_workers"))?;
    let zones: usize = manifest
        .get("zones")
        .and_then(|v| v.parse().ok())
        .unwrap_or(1);
    let zone_map = crate::config::ZoneMap::new(n, zones.clamp(1, n.max(1)));

    let mut workers = Vec::with_capacity(n);
    for id in 0..n {
        let path = dir.join(format!("events_{id}.csv"));
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let mut events = Vec::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            let fields: Vec<&str> = line.split(',').collect();
            let [w, kind, start, end] = fields[..] else {
                return Err(parse_err(&path, i + 1, "expected 4 fields"));
            };
            let num = |s: &str| {
                s.parse::<u64>()
                    .map_err(|e| parse_err(&path, i + 1, format!("{s:?}: {e}")))
            };
            if num(w)? != id as u64 {
                return Err(parse_err(&path, i + 1, "worker id does not match file"));
            }
            events.push(PerfEvent {
                kind: kind
                    .parse()
                    .map_err(|m: String| parse_err(&path, i + 1, m))?,
                start: num(start)?,
                end: num(end)?,
            });
        }

        let path = dir.join(format!("counters_{id}.csv"));
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let mut counters = CounterSet::default();
        for (i, line) in text.lines().enumerate().skip(1) {
            let (name, value) = line
                .split_once(',')
                .ok_or_else(|| parse_err(&path, i + 1, "expected counter,value"))?;
            let value = value
                .parse()
                .map_err(|e| parse_err(&path, i + 1, format!("{value:?}: {e}")))?;
            if !counters.set(name, value) {
                return Err(parse_err(&path, i + 1, format!("unknown counter {name:?}")));
            }
        }
        workers.push(WorkerProfile {
            worker: id,
            zone: zone_map.zone_of(id),
            counters,
            events,
        });
    }
    Ok(LoadedDump { manifest, workers })
}
