//! Binary-tree team barrier with lock-free gathering and lock-less release.
//!
//! Worker `i` has parent `(i - 1) / 2` and children `2i + 1`, `2i + 2`. A
//! gathered child marks its slot in the parent's node with one atomic swap;
//! each slot has exactly one writer and one reader. Release travels down the
//! tree as plain stores of the epoch into each node's release word. All flags
//! carry the epoch they belong to, so a barrier can be reused for any number
//! of team regions without resetting.
//!
//! Every node also counts the writes it performs, so the number of
//! read-modify-write operations per epoch can be audited. The counters are
//! single-writer and updated with load/store.

use std::sync::atomic::{AtomicU64, Ordering};

use crossbeam_utils::CachePadded;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("worker {id} is outside a team of {n}")]
pub struct TopologyError {
    pub id: usize,
    pub n: usize,
}

/// Position of one worker in the barrier tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Topology {
    pub parent: Option<usize>,
    children: [Option<usize>; 2],
}

impl Topology {
    pub fn of(id: usize, n: usize) -> Result<Self, TopologyError> {
        if id >= n {
            return Err(TopologyError { id, n });
        }
        let child = |c: usize| (c < n).then_some(c);
        Ok(Topology {
            parent: (id > 0).then(|| (id - 1) / 2),
            children: [child(2 * id + 1), child(2 * id + 2)],
        })
    }

    pub fn children(&self) -> impl Iterator<Item = usize> + '_ {
        self.children.iter().flatten().copied()
    }
}

#[derive(Default)]
struct Node {
    child_complete: [AtomicU64; 2],
    release: AtomicU64,
    gather_rmw: AtomicU64,
    release_stores: AtomicU64,
    release_rmw: AtomicU64,
}

impl Node {
    fn bump(counter: &AtomicU64) {
        counter.store(counter.load(Ordering::Relaxed) + 1, Ordering::Relaxed);
    }
}

/// Operation counts accumulated by the barrier.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BarrierCensus {
    /// Indivisible read-modify-write updates of child-complete flags.
    pub gather_rmw: u64,
    /// Plain stores of release flags.
    pub release_stores: u64,
    /// Read-modify-write operations in the release phase.
    pub release_rmw: u64,
}

impl std::ops::Sub for BarrierCensus {
    type Output = BarrierCensus;

    fn sub(self, rhs: Self) -> Self {
        BarrierCensus {
            gather_rmw: self.gather_rmw - rhs.gather_rmw,
            release_stores: self.release_stores - rhs.release_stores,
            release_rmw: self.release_rmw - rhs.release_rmw,
        }
    }
}

pub struct TreeBarrier {
    nodes: Box<[CachePadded<Node>]>,
}

impl TreeBarrier {
    pub fn new(n: usize) -> Self {
        TreeBarrier {
            nodes: (0..n).map(|_| CachePadded::new(Node::default())).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn topo(&self, id: usize) -> Topology {
        Topology::of(id, self.nodes.len()).expect("worker id in range")
    }

    /// Whether every child of `id` has gathered in `epoch`.
    pub fn children_gathered(&self, id: usize, epoch: u64) -> bool {
        let node = &self.nodes[id];
        self.topo(id)
            .children()
            .enumerate()
            .all(|(slot, _)| node.child_complete[slot].load(Ordering::Acquire) >= epoch)
    }

    /// Marks `id` as gathered in its parent's node. No-op for the root.
    pub fn signal_parent(&self, id: usize, epoch: u64) {
        let Some(parent) = self.topo(id).parent else {
            return;
        };
        let slot = (id - 1) % 2;
        let prev = self.nodes[parent].child_complete[slot].swap(epoch, Ordering::AcqRel);
        debug_assert!(prev < epoch, "child {id} gathered twice in epoch {epoch}");
        Node::bump(&self.nodes[id].gather_rmw);
    }

    /// Root entry point of the release broadcast.
    pub fn release_root(&self, epoch: u64) {
        self.nodes[0].release.store(epoch, Ordering::Release);
        Node::bump(&self.nodes[0].release_stores);
        self.release_children(0, epoch);
    }

    /// Forwards the release of `epoch` to the children of `id`.
    pub fn release_children(&self, id: usize, epoch: u64) {
        for child in self.topo(id).children() {
            self.nodes[child].release.store(epoch, Ordering::Release);
            Node::bump(&self.nodes[id].release_stores);
        }
    }

    pub fn is_released(&self, id: usize, epoch: u64) -> bool {
        self.nodes[id].release.load(Ordering::Acquire) >= epoch
    }

    /// Totals over all nodes. Exact once the workers have quiesced.
    pub fn census(&self) -> BarrierCensus {
        self.nodes
            .iter()
            .fold(BarrierCensus::default(), |acc, n| BarrierCensus {
                gather_rmw: acc.gather_rmw + n.gather_rmw.load(Ordering::Relaxed),
                release_stores: acc.release_stores + n.release_stores.load(Ordering::Relaxed),
                release_rmw: acc.release_rmw + n.release_rmw.load(Ordering::Relaxed),
            })
    }
}

/// Drives one clean epoch of an `n`-node barrier on the calling thread:
/// leaves gather first (highest ID to lowest), then the root releases and
/// every node forwards the release. Returns the census delta for the epoch.
pub fn simulate_clean_epoch(barrier: &TreeBarrier, epoch: u64) -> BarrierCensus {
    let before = barrier.census();
    let n = barrier.len();
    for id in (0..n).rev() {
        assert!(
            barrier.children_gathered(id, epoch),
            "node {id} gathered early"
        );
        barrier.signal_parent(id, epoch);
    }
    barrier.release_root(epoch);
    for id in 1..n {
        assert!(barrier.is_released(id, epoch));
        barrier.release_children(id, epoch);
    }
    barrier.census() - before
}
