//! Lock-less steal-request messaging and the two NUMA-aware balancing
//! strategies.
//!
//! Each worker owns two 64-bit cells. The *round* cell is written only by the
//! worker itself (as a victim) and counts handled requests, starting at 1.
//! The *request* cell is written by thieves: `(thief_id << 40) | round`. A
//! thief only writes when the round embedded in the current request is older
//! than the victim's round, i.e. when no request is pending for this round.
//! Competing thieves may overwrite each other; the loser's idle timeout
//! eventually retries. No cell is ever updated with a read-modify-write.

use std::ptr::NonNull;
use std::sync::atomic::{AtomicU64, Ordering};

use crossbeam_utils::CachePadded;
use rand::rngs::SmallRng;
use rand::Rng;
use thiserror::Error;

use crate::config::ZoneMap;
use crate::queue::{dequeue_next, QueueMatrix, ScanState};

pub const ROUND_BITS: u32 = 40;
pub const ROUND_MASK: u64 = (1 << ROUND_BITS) - 1;
pub const THIEF_LIMIT: u64 = 1 << 24;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DlbError {
    #[error("thief id {0} does not fit in 24 bits")]
    ThiefOutOfRange(u64),
    #[error("round {0} does not fit in 40 bits")]
    RoundOutOfRange(u64),
}

pub fn encode_request(thief: u64, round: u64) -> Result<u64, DlbError> {
    if thief >= THIEF_LIMIT {
        return Err(DlbError::ThiefOutOfRange(thief));
    }
    if round > ROUND_MASK {
        return Err(DlbError::RoundOutOfRange(round));
    }
    Ok((thief << ROUND_BITS) | round)
}

/// Splits a request word into `(thief, round)`.
#[inline]
pub fn decode_request(word: u64) -> (u64, u64) {
    (word >> ROUND_BITS, word & ROUND_MASK)
}

/// A word that only supports plain loads and stores.
#[derive(Debug, Default)]
pub struct WordCell(AtomicU64);

impl WordCell {
    pub fn new(v: u64) -> Self {
        WordCell(AtomicU64::new(v))
    }

    #[inline]
    pub fn read(&self) -> u64 {
        self.0.load(Ordering::Acquire)
    }

    #[inline]
    pub fn write(&self, v: u64) {
        self.0.store(v, Ordering::Release)
    }
}

#[derive(Debug)]
pub struct DlbCells {
    pub round: WordCell,
    pub request: WordCell,
}

impl Default for DlbCells {
    fn default() -> Self {
        DlbCells {
            round: WordCell::new(1),
            request: WordCell::new(0),
        }
    }
}

/// One cache line per worker.
pub fn cell_array(n: usize) -> Box<[CachePadded<DlbCells>]> {
    (0..n)
        .map(|_| CachePadded::new(DlbCells::default()))
        .collect()
}

/// Thief side of one request: write a request for the victim's current round
/// unless one is already pending. Returns whether a request was written.
pub fn send_request(victim: &DlbCells, thief: usize) -> bool {
    let req = victim.request.read();
    let round = victim.round.read();
    let (_, curr) = decode_request(req);
    if curr < round {
        // Round and thief ranges are enforced by config validation.
        victim
            .request
            .write(((thief as u64) << ROUND_BITS) | (round & ROUND_MASK));
        true
    } else {
        false
    }
}

/// Victim side: the thief of a request addressed to `round`, if there is one.
pub fn pending_thief(own: &DlbCells, round: u64) -> Option<usize> {
    let req = own.request.read();
    if req == 0 {
        return None;
    }
    let (thief, r) = decode_request(req);
    (r == round).then_some(thief as usize)
}

/// Random victim choice with a NUMA-local bias.
pub struct VictimPicker {
    zones: ZoneMap,
    me: usize,
    p_local: f64,
}

impl VictimPicker {
    pub fn new(zones: ZoneMap, me: usize, p_local: f64) -> Self {
        VictimPicker { zones, me, p_local }
    }

    fn local_count(&self) -> usize {
        self.zones.members(self.zones.zone_of(self.me)).len() - 1
    }

    fn remote_count(&self) -> usize {
        self.zones.n_workers() - self.zones.members(self.zones.zone_of(self.me)).len()
    }

    /// Draws one victim. Requires at least two workers.
    pub fn pick(&self, rng: &mut SmallRng) -> usize {
        let n_local = self.local_count();
        let n_remote = self.remote_count();
        debug_assert!(n_local + n_remote > 0, "pick_victim needs two workers");
        let want_local = rng.gen_bool(self.p_local);
        let use_local = if want_local {
            n_local > 0
        } else {
            n_remote == 0
        };
        let zone = self.zones.members(self.zones.zone_of(self.me));
        if use_local {
            let k = rng.gen_range(0..n_local);
            let w = zone.start + k;
            if w >= self.me {
                w + 1
            } else {
                w
            }
        } else {
            let k = rng.gen_range(0..n_remote);
            if k < zone.start {
                k
            } else {
                k + zone.len()
            }
        }
    }

    /// Up to `k` distinct victims, drawn with [`pick`](Self::pick) and
    /// duplicate rejection.
    pub fn pick_distinct(&self, k: usize, rng: &mut SmallRng, out: &mut Vec<usize>) {
        out.clear();
        let available = self.local_count() + self.remote_count();
        let k = k.min(available);
        let mut attempts = 0;
        while out.len() < k && attempts < 4 * k + 8 {
            let v = self.pick(rng);
            if !out.contains(&v) {
                out.push(v);
            }
            attempts += 1;
        }
    }
}

/// Why a migration or redirect session stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    SourceEmpty,
    TargetFull,
    LimitReached,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Migration {
    pub moved: usize,
    pub stop: StopReason,
}

/// Work-stealing body: move up to `n_steal` tasks from `victim`'s row into the
/// ring the victim produces for `thief`.
pub fn migrate_to_thief<T>(
    matrix: &QueueMatrix<T>,
    victim: usize,
    thief: usize,
    n_steal: usize,
    scan: &mut ScanState,
    mut on_move: impl FnMut(NonNull<T>),
) -> Migration {
    let target = matrix.ring(thief, victim);
    let mut moved = 0;
    let stop = loop {
        if moved >= n_steal {
            break StopReason::LimitReached;
        }
        if target.is_full() {
            break StopReason::TargetFull;
        }
        let Some(task) = dequeue_next(matrix, victim, scan) else {
            break StopReason::SourceEmpty;
        };
        on_move(task);
        if target.push(victim as u32, task).is_err() {
            unreachable!("target ring filled while its only producer was checking it");
        }
        moved += 1;
    };
    Migration { moved, stop }
}

/// Redirect-push state a victim keeps while serving one thief.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StealSession {
    thief: Option<usize>,
    pushed: usize,
}

#[derive(Debug, PartialEq, Eq)]
pub enum Redirect<T> {
    /// The task went to the thief's ring.
    Redirected(usize),
    /// No session; place the task normally.
    NotRedirected(NonNull<T>),
    /// The session just ended; place the task normally.
    SessionEnded {
        task: NonNull<T>,
        thief: usize,
        pushed: usize,
        stop: StopReason,
    },
}

impl StealSession {
    pub fn thief(&self) -> Option<usize> {
        self.thief
    }

    pub fn pushed(&self) -> usize {
        self.pushed
    }

    pub fn is_active(&self) -> bool {
        self.thief.is_some()
    }

    pub fn start(&mut self, thief: usize) {
        self.thief = Some(thief);
        self.pushed = 0;
    }

    /// Ends the session, returning `(thief, pushed)` if one was active.
    pub fn end(&mut self) -> Option<(usize, usize)> {
        let thief = self.thief.take()?;
        Some((thief, std::mem::take(&mut self.pushed)))
    }

    /// Redirects `task` to the session's thief when the session allows it.
    pub fn try_redirect<T>(
        &mut self,
        matrix: &QueueMatrix<T>,
        victim: usize,
        n_steal: usize,
        task: NonNull<T>,
    ) -> Redirect<T> {
        let Some(thief) = self.thief else {
            return Redirect::NotRedirected(task);
        };
        let ring = matrix.ring(thief, victim);
        let stop = if self.pushed >= n_steal {
            Some(StopReason::LimitReached)
        } else if ring.is_full() {
            Some(StopReason::TargetFull)
        } else {
            None
        };
        if let Some(stop) = stop {
            let (thief, pushed) = self.end().expect("session active");
            return Redirect::SessionEnded {
                task,
                thief,
                pushed,
                stop,
            };
        }
        if ring.push(victim as u32, task).is_err() {
            unreachable!("ring filled while its only producer was checking it");
        }
        self.pushed += 1;
        Redirect::Redirected(thief)
    }
}
