//! Deterministic discrete-event queue.
//!
//! One cycle is one nanosecond (the modeled engine runs at 1 GHz). Events are
//! totally ordered by `(fire_time, seq)`, where `seq` is the insertion
//! sequence number, so equal-time events fire in the order they were scheduled.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Simulation time in 1 ns cycles.
pub type SimTime = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventId(pub u64);

struct Scheduled<E> {
    at: SimTime,
    seq: u64,
    action: E,
}

impl<E> PartialEq for Scheduled<E> {
    fn eq(&self, other: &Self) -> bool {
        self.at == other.at && self.seq == other.seq
    }
}

impl<E> Eq for Scheduled<E> {}

impl<E> PartialOrd for Scheduled<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Scheduled<E> {
    // BinaryHeap is a max-heap; invert so the earliest (at, seq) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

pub struct EventQueue<E> {
    heap: BinaryHeap<Scheduled<E>>,
    now: SimTime,
    next_seq: u64,
    fired: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        Self {
            heap: BinaryHeap::new(),
            now: 0,
            next_seq: 0,
            fired: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Schedules `action` at absolute time `at`.
    ///
    /// Panics if `at` lies in the past: that is a simulator bug, not a
    /// recoverable condition.
    pub fn schedule(&mut self, at: SimTime, action: E) -> EventId {
        assert!(
            at >= self.now,
            "event scheduled in the past (at={at}, now={})",
            self.now
        );
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Scheduled { at, seq, action });
        EventId(seq)
    }

    pub fn schedule_in(&mut self, delay: SimTime, action: E) -> EventId {
        self.schedule(self.now + delay, action)
    }

    /// Pops the next event and advances the clock to its fire time.
    pub fn pop(&mut self) -> Option<(SimTime, E)> {
        let ev = self.heap.pop()?;
        debug_assert!(ev.at >= self.now);
        self.now = ev.at;
        self.fired += 1;
        Some((ev.at, ev.action))
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|e| e.at)
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn fired(&self) -> u64 {
        self.fired
    }
}

/// Termination condition for a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunUntil {
    Quiescence,
    Time(SimTime),
}
