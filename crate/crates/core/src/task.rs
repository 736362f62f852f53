//! Task records and the per-worker record pool.

use std::cell::UnsafeCell;
use std::ptr::NonNull;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::runtime::Worker;

pub(crate) type TaskBody = Box<dyn for<'a, 'b> FnOnce(&'a Worker<'b>) + Send + 'static>;

/// A runnable closure plus its place in the task tree.
///
/// `pending` is one reference for the task's own body plus one per
/// spawned, not-yet-completed child. The record is recycled when it drops
/// to zero, so a parent outlives every child that still has to decrement it.
pub(crate) struct Task {
    body: UnsafeCell<Option<TaskBody>>,
    parent: Option<TaskRef>,
    pending: AtomicUsize,
    creator_worker: u32,
    creator_zone: u32,
}

impl Task {
    fn empty() -> Self {
        Task {
            body: UnsafeCell::new(None),
            parent: None,
            pending: AtomicUsize::new(1),
            creator_worker: 0,
            creator_zone: 0,
        }
    }
}

/// Single-word handle to a live task record; this is what the rings carry.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub(crate) struct TaskRef(NonNull<Task>);

// Safety: a TaskRef is handed between workers through the rings, whose
// release/acquire pairing publishes the record. Each field is either
// immutable after publication, atomic, or (the body) taken by the single
// worker that dequeued the task.
unsafe impl Send for TaskRef {}

impl TaskRef {
    pub(crate) fn from_ptr(ptr: NonNull<Task>) -> Self {
        TaskRef(ptr)
    }

    pub(crate) fn as_ptr(self) -> NonNull<Task> {
        self.0
    }

    fn get(&self) -> &Task {
        // Safety: a TaskRef only exists while its record holds at least one
        // pending reference.
        unsafe { self.0.as_ref() }
    }

    pub(crate) fn creator(&self) -> (usize, usize) {
        let t = self.get();
        (t.creator_worker as usize, t.creator_zone as usize)
    }

    pub(crate) fn parent(&self) -> Option<TaskRef> {
        self.get().parent
    }

    /// Takes the body. Only the worker executing the task may call this.
    pub(crate) fn take_body(&self) -> Option<TaskBody> {
        // Safety: exactly one worker dequeues (or inline-runs) a task.
        unsafe { (*self.get().body.get()).take() }
    }

    /// Number of spawned children that have not completed.
    pub(crate) fn unfinished_children(&self) -> usize {
        self.get().pending.load(Ordering::Acquire) - 1
    }

    pub(crate) fn add_child(&self) {
        self.get().pending.fetch_add(1, Ordering::Relaxed);
    }

    /// Drops one pending reference; returns the record when it was the last.
    #[must_use]
    pub(crate) fn release(self) -> Option<Box<Task>> {
        if self.get().pending.fetch_sub(1, Ordering::AcqRel) == 1 {
            // Safety: records are created by `TaskPool::make` via Box::into_raw
            // and this was the last reference.
            Some(unsafe { Box::from_raw(self.0.as_ptr()) })
        } else {
            None
        }
    }
}

const POOL_CHUNK: usize = 64;
const POOL_MAX: usize = 4096;

/// Worker-private free list of task records, refilled in chunks.
#[allow(clippy::vec_box)] // records are handed out by address
pub(crate) struct TaskPool {
    free: Vec<Box<Task>>,
}

impl TaskPool {
    pub(crate) fn new() -> Self {
        TaskPool { free: Vec::new() }
    }

    pub(crate) fn make(
        &mut self,
        body: Option<TaskBody>,
        parent: Option<TaskRef>,
        creator_worker: usize,
        creator_zone: usize,
    ) -> TaskRef {
        if self.free.is_empty() {
            self.free
                .extend((0..POOL_CHUNK).map(|_| Box::new(Task::empty())));
        }
        let mut rec = self.free.pop().expect("pool refilled");
        *rec.body.get_mut() = body;
        rec.parent = parent;
        *rec.pending.get_mut() = 1;
        rec.creator_worker = creator_worker as u32;
        rec.creator_zone = creator_zone as u32;
        TaskRef(NonNull::from(Box::leak(rec)))
    }

    pub(crate) fn recycle(&mut self, mut rec: Box<Task>) {
        debug_assert!(rec.body.get_mut().is_none());
        if self.free.len() < POOL_MAX {
            rec.parent = None;
            self.free.push(rec);
        }
    }
}
