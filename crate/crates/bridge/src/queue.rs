//! A bounded multi-producer multi-consumer queue with blocking push.
//!
//! This is the hand-off between the record-producing side of a pipeline and
//! the dedicated batch workers: the producer blocks when the queue is full
//! (back-pressure; batches are never dropped), workers block when it is
//! empty, and closing wakes everyone. Depth and blocking are instrumented so
//! tests can assert the back-pressure actually engaged.

use std::collections::VecDeque;
use std::sync::{Condvar, Mutex};

/// Counters describing what a queue experienced over its lifetime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct QueueStats {
    /// Highest number of items simultaneously queued.
    pub max_depth: usize,
    /// Number of times a push found the queue full and had to wait.
    pub block_events: usize,
}

/// Error returned when pushing to a queue that has been closed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueueClosed;

impl std::fmt::Display for QueueClosed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("queue closed")
    }
}

impl std::error::Error for QueueClosed {}

struct Inner<T> {
    items: VecDeque<T>,
    closed: bool,
    stats: QueueStats,
}

/// Fixed-capacity blocking queue. Capacity must be at least 1.
pub struct BoundedQueue<T> {
    cap: usize,
    inner: Mutex<Inner<T>>,
    not_full: Condvar,
    not_empty: Condvar,
}

impl<T> BoundedQueue<T> {
    pub fn new(cap: usize) -> BoundedQueue<T> {
        assert!(cap >= 1, "queue capacity must be at least 1");
        BoundedQueue {
            cap,
            inner: Mutex::new(Inner {
                items: VecDeque::with_capacity(cap),
                closed: false,
                stats: QueueStats::default(),
            }),
            not_full: Condvar::new(),
            not_empty: Condvar::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.cap
    }

    /// Enqueue one item, blocking while the queue is full. Fails only if the
    /// queue has been closed.
    pub fn push(&self, item: T) -> Result<(), QueueClosed> {
        let mut g = self.inner.lock().unwrap();
        if g.items.len() >= self.cap && !g.closed {
            g.stats.block_events += 1;
            while g.items.len() >= self.cap && !g.closed {
                g = self.not_full.wait(g).unwrap();
            }
        }
        if g.closed {
            return Err(QueueClosed);
        }
        g.items.push_back(item);
        let depth = g.items.len();
        if depth > g.stats.max_depth {
            g.stats.max_depth = depth;
        }
        drop(g);
        self.not_empty.notify_one();
        Ok(())
    }

    /// Dequeue one item, blocking while the queue is empty and open. `None`
    /// means the queue is closed and drained.
    pub fn pop(&self) -> Option<T> {
        let mut g = self.inner.lock().unwrap();
        loop {
            if let Some(item) = g.items.pop_front() {
                drop(g);
                self.not_full.notify_one();
                return Some(item);
            }
            if g.closed {
                return None;
            }
            g = self.not_empty.wait(g).unwrap();
        }
    }

    /// Close the queue: pending items stay poppable, new pushes fail, and all
    /// waiters wake.
    pub fn close(&self) {
        let mut g = self.inner.lock().unwrap();
        g.closed = true;
        drop(g);
        self.not_full.notify_all();
        self.not_empty.notify_all();
    }

    pub fn stats(&self) -> QueueStats {
        self.inner.lock().unwrap().stats
    }
}
