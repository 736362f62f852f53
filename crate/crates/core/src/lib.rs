//! A task-parallel runtime built on a lock-less queue matrix.
//!
//! Every worker owns one row of an `N x N` matrix of single-producer
//! single-consumer rings and places new tasks round-robin across the
//! workers' rows, starting with its own master ring. Idle workers ask busy
//! ones for work through a pair of plain 64-bit cells per worker, and busy
//! workers answer either by redirecting newly created tasks
//! ([`Strategy::RedirectPush`]) or by migrating queued ones
//! ([`Strategy::WorkStealing`]). A team region ends at a binary-tree barrier
//! that gathers with one atomic update per non-root worker and releases with
//! plain stores.
//!
//! ```
//! use xtask::{team_run, TeamConfig, Worker};
//!
//! fn fib(w: &Worker<'_>, n: u64) -> u64 {
//!     if n < 2 {
//!         return n;
//!     }
//!     let (mut a, mut b) = (0, 0);
//!     w.scope(|s| {
//!         s.spawn(|w| a = fib(w, n - 1));
//!         s.spawn(|w| b = fib(w, n - 2));
//!     });
//!     a + b
//! }
//!
//! let (value, report) = team_run(TeamConfig::new(2), |w| fib(w, 15)).unwrap();
//! assert_eq!(value, 610);
//! assert_eq!(report.tasks_created(), report.tasks_executed());
//! ```

pub mod barrier;
pub mod config;
pub mod dlb;
pub mod profiler;
pub mod queue;
mod runtime;
mod task;

pub use config::{ConfigError, DlbConfig, Strategy, TeamConfig, ZoneMap};
pub use profiler::{CounterSet, EventKind, PerfEvent};
pub use queue::AUDIT_ENABLED;
pub use runtime::{team_run, Placement, SchedAction, Scope, Team, TeamError, TeamReport, Worker};
