//! The queue matrix: an `N x N` grid of bounded single-producer
//! single-consumer rings.
//!
//! Ring `(i, j)` is consumed by worker `i` and produced by worker `j`; the
//! diagonal ring `(i, i)` is worker `i`'s master queue and the rest of row `i`
//! are its auxiliary queues. Every cross-worker transfer (static placement,
//! redirect push, steal migration) goes through the ring whose producer is the
//! pushing worker, so each ring keeps exactly one producer and one consumer
//! for its whole lifetime.
//!
//! Push and pop use only loads and stores on the head/tail indices. Each side
//! keeps a private copy of the other side's index and only re-reads the shared
//! one when the cached value says the ring is full (producer) or empty
//! (consumer), which batches cross-core traffic in the manner of B-queue.

use std::cell::UnsafeCell;
use std::ptr::NonNull;
use std::sync::atomic::{AtomicPtr, AtomicUsize, Ordering};

use crossbeam_utils::CachePadded;

#[cfg(any(debug_assertions, feature = "audit"))]
use std::sync::atomic::AtomicU32;

/// Whether ring identity auditing is compiled in.
pub const AUDIT_ENABLED: bool = cfg!(any(debug_assertions, feature = "audit"));

#[cfg(any(debug_assertions, feature = "audit"))]
const UNCLAIMED: u32 = u32::MAX;

struct ProducerSide {
    tail: AtomicUsize,
    cached_head: UnsafeCell<usize>,
}

struct ConsumerSide {
    head: AtomicUsize,
    cached_tail: UnsafeCell<usize>,
}

/// A bounded SPSC ring of non-null pointers.
///
/// Capacity is a power of two and at least 2. Indices grow without wrapping
/// in practice (64-bit) and are masked into the slot array.
pub struct SpscRing<T> {
    producer: CachePadded<ProducerSide>,
    consumer: CachePadded<ConsumerSide>,
    slots: Box<[AtomicPtr<T>]>,
    mask: usize,
    #[cfg(any(debug_assertions, feature = "audit"))]
    audit: RingAudit,
}

// Safety: the UnsafeCell caches are each touched by exactly one side (the
// producer's cache only from push/is_full, the consumer's only from pop/
// is_empty). Callers uphold the single-producer single-consumer contract,
// which the audit build verifies.
unsafe impl<T: Send> Send for SpscRing<T> {}
unsafe impl<T: Send> Sync for SpscRing<T> {}

impl<T> SpscRing<T> {
    /// Creates a ring holding up to `capacity` elements.
    ///
    /// Panics if `capacity` is not a power of two or is smaller than 2.
    pub fn new(capacity: usize) -> Self {
        assert!(
            capacity >= 2 && capacity.is_power_of_two(),
            "ring capacity must be a power of two >= 2, got {capacity}"
        );
        let slots = (0..capacity)
            .map(|_| AtomicPtr::new(std::ptr::null_mut()))
            .collect();
        SpscRing {
            producer: CachePadded::new(ProducerSide {
                tail: AtomicUsize::new(0),
                cached_head: UnsafeCell::new(0),
            }),
            consumer: CachePadded::new(ConsumerSide {
                head: AtomicUsize::new(0),
                cached_tail: UnsafeCell::new(0),
            }),
            slots,
            mask: capacity - 1,
            #[cfg(any(debug_assertions, feature = "audit"))]
            audit: RingAudit::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.mask + 1
    }

    /// Pushes `item`, or hands it back if the ring is full.
    ///
    /// `producer` identifies the calling context for the identity audit.
    #[inline]
    pub fn push(&self, producer: u32, item: NonNull<T>) -> Result<(), NonNull<T>> {
        #[cfg(any(debug_assertions, feature = "audit"))]
        self.audit.claim(&self.audit.producer, producer, "producer");
        #[cfg(not(any(debug_assertions, feature = "audit")))]
        let _ = producer;

        let tail = self.producer.tail.load(Ordering::Relaxed);
        // Safety: only the producer touches cached_head.
        let cached_head = unsafe { &mut *self.producer.cached_head.get() };
        if tail.wrapping_sub(*cached_head) > self.mask {
            *cached_head = self.consumer.head.load(Ordering::Acquire);
            if tail.wrapping_sub(*cached_head) > self.mask {
                return Err(item);
            }
        }
        self.slots[tail & self.mask].store(item.as_ptr(), Ordering::Relaxed);
        self.producer
            .tail
            .store(tail.wrapping_add(1), Ordering::Release);
        Ok(())
    }

    /// Pops the oldest element, if any.
    #[inline]
    pub fn pop(&self, consumer: u32) -> Option<NonNull<T>> {
        #[cfg(any(debug_assertions, feature = "audit"))]
        self.audit.claim(&self.audit.consumer, consumer, "consumer");
        #[cfg(not(any(debug_assertions, feature = "audit")))]
        let _ = consumer;

        let head = self.consumer.head.load(Ordering::Relaxed);
        // Safety: only the consumer touches cached_tail.
        let cached_tail = unsafe { &mut *self.consumer.cached_tail.get() };
        if head == *cached_tail {
            *cached_tail = self.producer.tail.load(Ordering::Acquire);
            if head == *cached_tail {
                return None;
            }
        }
        let ptr = self.slots[head & self.mask].load(Ordering::Relaxed);
        self.consumer
            .head
            .store(head.wrapping_add(1), Ordering::Release);
        NonNull::new(ptr)
    }

    /// Producer-side fullness probe. Only the producer may call this.
    pub fn is_full(&self) -> bool {
        let tail = self.producer.tail.load(Ordering::Relaxed);
        // Safety: producer-only, see `push`.
        let cached_head = unsafe { &mut *self.producer.cached_head.get() };
        if tail.wrapping_sub(*cached_head) > self.mask {
            *cached_head = self.consumer.head.load(Ordering::Acquire);
        }
        tail.wrapping_sub(*cached_head) > self.mask
    }

    /// Consumer-side emptiness probe. Only the consumer may call this.
    pub fn is_empty(&self) -> bool {
        let head = self.consumer.head.load(Ordering::Relaxed);
        // Safety: consumer-only, see `pop`.
        let cached_tail = unsafe { &mut *self.consumer.cached_tail.get() };
        if head == *cached_tail {
            *cached_tail = self.producer.tail.load(Ordering::Acquire);
        }
        head == *cached_tail
    }

    /// Approximate occupancy, exact when neither side is running.
    pub fn len(&self) -> usize {
        let tail = self.producer.tail.load(Ordering::Acquire);
        let head = self.consumer.head.load(Ordering::Acquire);
        tail.wrapping_sub(head)
    }
}

#[cfg(any(debug_assertions, feature = "audit"))]
struct RingAudit {
    producer: AtomicU32,
    consumer: AtomicU32,
}

#[cfg(any(debug_assertions, feature = "audit"))]
impl RingAudit {
    fn new() -> Self {
        RingAudit {
            producer: AtomicU32::new(UNCLAIMED),
            consumer: AtomicU32::new(UNCLAIMED),
        }
    }

    #[inline]
    fn claim(&self, slot: &AtomicU32, id: u32, role: &str) {
        let owner = slot.load(Ordering::Relaxed);
        if owner == id {
            return;
        }
        if owner == UNCLAIMED {
            match slot.compare_exchange(UNCLAIMED, id, Ordering::Relaxed, Ordering::Relaxed) {
                Ok(_) => return,
                Err(winner) if winner == id => return,
                Err(winner) => {
                    panic!("SPSC violation: ring {role} claimed by {winner}, used by {id}")
                }
            }
        }
        panic!("SPSC violation: ring {role} claimed by {owner}, used by {id}");
    }
}

/// `N x N` grid of rings; `ring(consumer, producer)`.
pub struct QueueMatrix<T> {
    n: usize,
    rings: Box<[SpscRing<T>]>,
}

impl<T> QueueMatrix<T> {
    pub fn new(n_workers: usize, capacity: usize) -> Self {
        let rings = (0..n_workers * n_workers)
            .map(|_| SpscRing::new(capacity))
            .collect();
        QueueMatrix {
            n: n_workers,
            rings,
        }
    }

    pub fn n_workers(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn ring(&self, consumer: usize, producer: usize) -> &SpscRing<T> {
        &self.rings[consumer * self.n + producer]
    }

    #[inline]
    pub fn master(&self, worker: usize) -> &SpscRing<T> {
        self.ring(worker, worker)
    }

    /// Consumer-side check that every ring in `worker`'s row is empty.
    pub fn row_is_empty(&self, worker: usize) -> bool {
        (0..self.n).all(|p| self.ring(worker, p).is_empty())
    }

    /// Sum of approximate occupancies over the whole matrix.
    pub fn total_len(&self) -> usize {
        self.rings.iter().map(SpscRing::len).sum()
    }
}

/// Round-robin placement cursor: self first, then every other worker.
#[derive(Debug, Clone)]
pub struct PlacementCursor {
    worker: usize,
    n: usize,
    offset: usize,
}

impl PlacementCursor {
    pub fn new(worker: usize, n_workers: usize) -> Self {
        PlacementCursor {
            worker,
            n: n_workers,
            offset: 0,
        }
    }

    /// Returns the next target and advances.
    #[inline]
    pub fn next_target(&mut self) -> usize {
        let target = (self.worker + self.offset) % self.n;
        self.offset += 1;
        if self.offset == self.n {
            self.offset = 0;
        }
        target
    }

    pub fn reset(&mut self) {
        self.offset = 0;
    }
}

/// Per-consumer scan state for [`dequeue_next`].
#[derive(Debug, Clone, Default)]
pub struct ScanState {
    last_producer: usize,
}

/// Takes the next task from `worker`'s row: master first, then the auxiliary
/// rings in rotating order starting after the last producer that yielded one.
pub fn dequeue_next<T>(
    matrix: &QueueMatrix<T>,
    worker: usize,
    scan: &mut ScanState,
) -> Option<NonNull<T>> {
    let id = worker as u32;
    if let Some(t) = matrix.master(worker).pop(id) {
        return Some(t);
    }
    let n = matrix.n_workers();
    for step in 1..=n {
        let producer = (scan.last_producer + step) % n;
        if producer == worker {
            continue;
        }
        if let Some(t) = matrix.ring(worker, producer).pop(id) {
            scan.last_producer = producer;
            return Some(t);
        }
    }
    None
}
