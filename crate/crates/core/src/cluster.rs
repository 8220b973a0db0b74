//! Processing cluster: the cluster-local scheduler (CSCHED), HPU drivers and
//! the per-cluster feedback and command arbiters.

use std::collections::VecDeque;

use crate::engine::SimTime;
use crate::hpu_runtime::IssuedCommand;
use crate::nic_inbound::{RingAlloc, RingAllocator};
use crate::scheduler::Task;
use crate::types::{Outcome, TaskId};

/// Round-robin arbiter over `n` requesters. The search starts one past the
/// last grant.
#[derive(Debug, Clone)]
pub struct RoundRobinArbiter {
    n: usize,
    next: usize,
    pub grants: u64,
}

impl RoundRobinArbiter {
    pub fn new(n: usize) -> Self {
        Self { n, next: 0, grants: 0 }
    }

    pub fn grant(&mut self, mut requesting: impl FnMut(usize) -> bool) -> Option<usize> {
        let g = (0..self.n).map(|i| (self.next + i) % self.n).find(|&i| requesting(i))?;
        self.next = (g + 1) % self.n;
        self.grants += 1;
        Some(g)
    }
}

/// A task accepted by a cluster.
#[derive(Debug, Clone)]
pub struct ClusterTask {
    pub task: Task,
    /// L1 packet-region reservation (none if nothing is staged).
    pub l1: Option<RingAlloc>,
    pub staged_bytes: u32,
    pub dispatched: SimTime,
    pub arrived: SimTime,
    pub dma_done: SimTime,
}

/// A task that left its HPU, with its timeline, on its way to the
/// scheduler as a completion notification.
#[derive(Debug, Clone)]
pub struct FinishedTask {
    pub task: Task,
    /// `None` for tasks notified without running (no handler to run).
    pub cluster: Option<usize>,
    pub hpu: Option<usize>,
    pub l1: Option<RingAlloc>,
    pub staged_bytes: u32,
    pub dispatched: SimTime,
    pub arrived: SimTime,
    pub dma_done: SimTime,
    pub assigned: SimTime,
    pub handler_start: SimTime,
    pub handler_end: SimTime,
    /// Doorbell written; the notification may leave the HPU driver.
    pub done: SimTime,
    pub compute_cycles: u64,
    pub mem_cycles: u64,
    pub commands: u32,
    pub outcome: Outcome,
}

impl FinishedTask {
    pub fn unrun(task: Task, at: SimTime, outcome: Outcome) -> Self {
        Self {
            task,
            cluster: None,
            hpu: None,
            l1: None,
            staged_bytes: 0,
            dispatched: at,
            arrived: at,
            dma_done: at,
            assigned: at,
            handler_start: at,
            handler_end: at,
            done: at,
            compute_cycles: 0,
            mem_cycles: 0,
            commands: 0,
            outcome,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct HpuDriver {
    /// Task on the core. Its handler has already run for timing; the core
    /// is released by the simulator's done event.
    pub running: Option<Box<FinishedTask>>,
    /// Generation of the running task, to ignore stale done events.
    pub generation: u64,
    /// Commands of the running task not yet accepted by an engine.
    pub unissued: u32,
    /// The handler body ended but commands are still waiting for an engine.
    pub release_pending: bool,
    /// Completed tasks waiting for the feedback arbiter, in order. The head
    /// is the buffered completion; while a second one waits the core stays
    /// blocked.
    pub feedback: VecDeque<Box<FinishedTask>>,
    /// Completed tasks whose commands have not all responded.
    pub awaiting_responses: Vec<Box<FinishedTask>>,
}

impl HpuDriver {
    /// Ready to take a task: the core is free and the completion buffer has room.
    pub fn eligible(&self) -> bool {
        self.running.is_none() && self.feedback.len() + self.awaiting_responses.len() < 2
    }
}

#[derive(Debug, Clone)]
pub struct PendingCommand {
    pub issued: IssuedCommand,
    pub task: TaskId,
}

pub struct Cluster {
    pub id: usize,
    pub hpus: Vec<HpuDriver>,
    fifo_depth: usize,
    /// Accepted tasks not yet on a core (staging or runnable).
    pub queued: usize,
    /// Queued tasks without an L1 reservation.
    pub queued_unstaged: usize,
    /// Accepted tasks not yet notified.
    pub outstanding: usize,
    pub runnable: VecDeque<ClusterTask>,
    pub l1_ring: RingAllocator,
    pub feedback_arb: RoundRobinArbiter,
    pub command_arb: RoundRobinArbiter,
    pub commands: Vec<VecDeque<PendingCommand>>,
    pub accepted: u64,
    pub refused: u64,
}

impl Cluster {
    pub fn new(id: usize, hpus: usize, fifo_depth: usize, l1_pkt_region: u64, align: u64) -> Self {
        Self {
            id,
            hpus: vec![HpuDriver::default(); hpus],
            fifo_depth,
            queued: 0,
            queued_unstaged: 0,
            outstanding: 0,
            runnable: VecDeque::new(),
            l1_ring: RingAllocator::new(l1_pkt_region, align),
            feedback_arb: RoundRobinArbiter::new(hpus),
            command_arb: RoundRobinArbiter::new(hpus),
            commands: vec![VecDeque::new(); hpus],
            accepted: 0,
            refused: 0,
        }
    }

    /// Load metric for spilling: accepted work first, then reserved L1 bytes.
    pub fn load(&self) -> (usize, u64) {
        (self.outstanding, self.l1_ring.used())
    }

    /// Accepts a task needing `staged` bytes of L1 if the packet region has
    /// room. Tasks staging nothing hold no L1 space and are bounded by the
    /// task FIFO depth instead. `Some(alloc)` means accepted.
    pub fn try_accept(&mut self, staged: u32) -> Option<Option<RingAlloc>> {
        let alloc = if staged > 0 {
            match self.l1_ring.alloc(u64::from(staged)) {
                Some(a) => Some(a),
                None => {
                    self.refused += 1;
                    return None;
                }
            }
        } else {
            if self.queued_unstaged >= self.fifo_depth {
                self.refused += 1;
                return None;
            }
            self.queued_unstaged += 1;
            None
        };
        self.queued += 1;
        self.outstanding += 1;
        self.accepted += 1;
        Some(alloc)
    }

    /// A queued task moved to a core.
    pub fn dequeue(&mut self, t: &ClusterTask) {
        self.queued -= 1;
        if t.l1.is_none() {
            self.queued_unstaged -= 1;
        }
    }

    /// Lowest-id HPU that can take a task.
    pub fn idle_hpu(&self) -> Option<usize> {
        self.hpus.iter().position(HpuDriver::eligible)
    }

    pub fn busy_hpus(&self) -> usize {
        self.hpus.iter().filter(|h| h.running.is_some()).count()
    }

    /// Earliest time a buffered completion can be granted.
    pub fn next_feedback(&self) -> Option<SimTime> {
        self.hpus
            .iter()
            .filter_map(|h| h.feedback.front().map(|f| f.done))
            .min()
    }

    /// Grants one buffered completion that is ready at `now`, round-robin.
    pub fn grant_feedback(&mut self, now: SimTime) -> Option<(usize, Box<FinishedTask>)> {
        let hpus = &self.hpus;
        let g = self
            .feedback_arb
            .grant(|i| hpus[i].feedback.front().is_some_and(|f| f.done <= now))?;
        let f = self.hpus[g].feedback.pop_front().unwrap();
        Some((g, f))
    }

    pub fn has_commands(&self) -> bool {
        self.commands.iter().any(|q| !q.is_empty())
    }

    /// Grants one queued command that `ready` admits, round-robin.
    pub fn grant_command(&mut self, mut ready: impl FnMut(&PendingCommand) -> bool) -> Option<(usize, PendingCommand)> {
        let queues = &self.commands;
        let g = self.command_arb.grant(|i| queues[i].front().is_some_and(&mut ready))?;
        Some((g, self.commands[g].pop_front().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_robin_pattern() {
        let mut a = RoundRobinArbiter::new(2);
        // Requester 0 always asks, requester 1 asks once.
        let mut asks = [true, true];
        let mut grants = Vec::new();
        for _ in 0..3 {
            let g = a.grant(|i| asks[i]).unwrap();
            grants.push(g);
            if g == 1 {
                asks[1] = false;
            }
        }
        assert_eq!(grants, vec![0, 1, 0]);
    }

    #[test]
    fn eight_simultaneous_requests_take_eight_cycles() {
        let mut a = RoundRobinArbiter::new(8);
        let mut pending = [true; 8];
        let mut order = Vec::new();
        while let Some(g) = a.grant(|i| pending[i]) {
            pending[g] = false;
            order.push(g);
        }
        assert_eq!(order, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn single_requester_granted_immediately() {
        let mut a = RoundRobinArbiter::new(8);
        assert_eq!(a.grant(|i| i == 5), Some(5));
        assert_eq!(a.grant(|i| i == 5), Some(5));
    }

    #[test]
    fn l1_region_holds_512_small_tasks() {
        let mut c = Cluster::new(0, 8, 16, 32 * 1024, 64);
        let mut n = 0;
        while c.try_accept(64).is_some() {
            n += 1;
        }
        assert_eq!(n, 512);
    }

    #[test]
    fn accept_refuses_without_room() {
        let mut c = Cluster::new(0, 8, 16, 32 * 1024, 64);
        assert!(c.try_accept(32 * 1024 - 128).is_some());
        assert!(c.try_accept(512).is_none());
        assert_eq!(c.queued, 1);
        // Tasks staging nothing need no L1 space but fill the FIFO.
        assert_eq!(c.try_accept(0), Some(None));
        for _ in 0..15 {
            c.try_accept(0).unwrap();
        }
        assert!(c.try_accept(0).is_none());
        assert!(c.try_accept(64).is_some());
    }
}
