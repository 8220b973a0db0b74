//! Packet scheduler: message-processing queues (MPQs) and task dispatch.
//!
//! Each in-flight message owns an MPQ. The header task runs alone; payload
//! HERs that arrive meanwhile wait in the MPQ and are released together
//! once it finishes. After the last payload task of a message completes,
//! the completion task (if any) runs, then the MPQ goes idle and returns
//! to the pool. MPQs that stop receiving packets before their end of
//! message are reset by a periodic LRU scan.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use crate::engine::SimTime;
use crate::types::{CtxId, Her, MpqId, MsgId, TaskId, TaskKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MpqPhase {
    Idle,
    HeaderRunning,
    Flowing,
    Completing,
    /// Reset while tasks were still running; freed once they finish.
    Zombie,
}

#[derive(Debug, Clone)]
pub struct Task {
    pub id: TaskId,
    pub kind: TaskKind,
    pub mpq: MpqId,
    pub ctx: CtxId,
    pub msg_id: MsgId,
    pub home: usize,
    /// Packet of header and payload tasks.
    pub her: Option<Her>,
    /// Cycle the task became ready for dispatch.
    pub ready_at: SimTime,
}

#[derive(Debug, Clone)]
pub enum SchedAction {
    Ready(Task),
    /// HER discarded without running; its buffer must be freed.
    Drop(Her),
    /// The message went idle: unmap it at the NIC and return its MPQ.
    Idle {
        mpq: MpqId,
        msg: MsgId,
    },
    /// Stale message reset: unmap at the NIC and flag the context.
    Reset {
        mpq: MpqId,
        msg: MsgId,
        ctx: CtxId,
    },
    /// A reset MPQ has drained and may be reused.
    Release(MpqId),
}

#[derive(Debug, Clone)]
struct Mpq {
    phase: MpqPhase,
    msg: MsgId,
    ctx: CtxId,
    home: usize,
    pending: VecDeque<Her>,
    in_flight: u32,
    eom_seen: bool,
    has_completion: bool,
    touched: SimTime,
    idle_threshold: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SchedCounters {
    pub tasks: u64,
    pub resets: u64,
    pub dropped_hers: u64,
    pub max_pending: usize,
}

pub struct MpqEngine {
    mpqs: HashMap<MpqId, Mpq>,
    /// Receiving MPQs ordered by last packet arrival.
    lru: BTreeSet<(SimTime, MpqId)>,
    clusters: usize,
    next_task: u64,
    /// HERs sent by the NIC that have not reached the scheduler yet. A
    /// reset MPQ stays reserved until these drain.
    in_transit: HashMap<MpqId, u32>,
    pub counters: SchedCounters,
}

/// Per-context parameters the scheduler needs.
#[derive(Debug, Clone, Copy)]
pub struct CtxParams {
    pub has_completion: bool,
    pub idle_threshold: u64,
}

impl MpqEngine {
    pub fn new(clusters: usize) -> Self {
        Self {
            mpqs: HashMap::new(),
            lru: BTreeSet::new(),
            clusters,
            next_task: 0,
            in_transit: HashMap::new(),
            counters: SchedCounters::default(),
        }
    }

    pub fn home_cluster(&self, msg: MsgId) -> usize {
        home_cluster(msg, self.clusters)
    }

    pub fn phase(&self, mpq: MpqId) -> MpqPhase {
        self.mpqs.get(&mpq).map_or(MpqPhase::Idle, |m| m.phase)
    }

    pub fn active(&self) -> usize {
        self.mpqs.len()
    }

    pub fn receiving(&self) -> usize {
        self.lru.len()
    }

    /// The NIC sent a HER for `mpq`; it reaches `on_her` later.
    pub fn her_sent(&mut self, mpq: MpqId) {
        *self.in_transit.entry(mpq).or_default() += 1;
    }

    fn transit(&self, mpq: MpqId) -> u32 {
        self.in_transit.get(&mpq).copied().unwrap_or(0)
    }

    /// Releases a reset MPQ once nothing refers to it any more.
    fn release_if_drained(&mut self, mpq: MpqId, out: &mut Vec<SchedAction>) {
        if self.mpqs[&mpq].in_flight == 0 && self.transit(mpq) == 0 {
            self.mpqs.remove(&mpq);
            out.push(SchedAction::Release(mpq));
        }
    }

    fn task(&mut self, kind: TaskKind, m: &Mpq, mpq: MpqId, her: Option<Her>, now: SimTime) -> SchedAction {
        let id = TaskId(self.next_task);
        self.next_task += 1;
        self.counters.tasks += 1;
        SchedAction::Ready(Task {
            id,
            kind,
            mpq,
            ctx: m.ctx,
            msg_id: m.msg,
            home: m.home,
            her,
            ready_at: now,
        })
    }

    fn touch(&mut self, mpq: MpqId, now: SimTime) {
        let m = self.mpqs.get_mut(&mpq).expect("touch of unknown MPQ");
        self.lru.remove(&(m.touched, mpq));
        m.touched = now;
        if m.eom_seen {
            // Fully received messages cannot go stale.
            return;
        }
        self.lru.insert((now, mpq));
    }

    /// A HER reached the scheduler.
    pub fn on_her(&mut self, her: Her, ctx: CtxParams, now: SimTime) -> Vec<SchedAction> {
        let mpq = her.mpq;
        if let Some(n) = self.in_transit.get_mut(&mpq) {
            *n -= 1;
            if *n == 0 {
                self.in_transit.remove(&mpq);
            }
        }
        let phase = self.phase(mpq);
        let mut out = Vec::new();
        match phase {
            MpqPhase::Idle => {
                let m = Mpq {
                    phase: MpqPhase::HeaderRunning,
                    msg: her.msg_id,
                    ctx: her.ctx,
                    home: self.home_cluster(her.msg_id),
                    pending: VecDeque::new(),
                    in_flight: 1,
                    eom_seen: her.eom,
                    has_completion: ctx.has_completion,
                    touched: now,
                    idle_threshold: ctx.idle_threshold,
                };
                let a = self.task(TaskKind::Header, &m, mpq, Some(her), now);
                self.mpqs.insert(mpq, m);
                self.touch(mpq, now);
                out.push(a);
            }
            MpqPhase::Zombie => {
                self.counters.dropped_hers += 1;
                out.push(SchedAction::Drop(her));
                self.release_if_drained(mpq, &mut out);
            }
            MpqPhase::HeaderRunning | MpqPhase::Flowing => {
                let m = self.mpqs.get_mut(&mpq).unwrap();
                assert_eq!(m.msg, her.msg_id, "HER routed to another message's MPQ");
                assert!(!m.eom_seen, "packet after end of message");
                m.eom_seen = her.eom;
                if phase == MpqPhase::HeaderRunning {
                    m.pending.push_back(her);
                    let depth = m.pending.len();
                    self.counters.max_pending = self.counters.max_pending.max(depth);
                } else {
                    m.in_flight += 1;
                    let m = m.clone();
                    out.push(self.task(TaskKind::Payload, &m, mpq, Some(her), now));
                }
                self.touch(mpq, now);
            }
            MpqPhase::Completing => panic!("HER for a message already completing"),
        }
        out
    }

    /// A task of `mpq` finished.
    pub fn on_complete(&mut self, mpq: MpqId, kind: TaskKind, now: SimTime) -> Vec<SchedAction> {
        let mut out = Vec::new();
        let m = self.mpqs.get_mut(&mpq).expect("completion for unknown MPQ");
        m.in_flight = m.in_flight.checked_sub(1).expect("MPQ in-flight underflow");
        match (m.phase, kind) {
            (MpqPhase::Zombie, _) => {
                self.release_if_drained(mpq, &mut out);
                return out;
            }
            (MpqPhase::HeaderRunning, TaskKind::Header) => {
                m.phase = MpqPhase::Flowing;
                let pending: Vec<Her> = m.pending.drain(..).collect();
                m.in_flight += pending.len() as u32;
                let snapshot = m.clone();
                for her in pending {
                    out.push(self.task(TaskKind::Payload, &snapshot, mpq, Some(her), now));
                }
            }
            (MpqPhase::Flowing, TaskKind::Payload) => {}
            (MpqPhase::Completing, TaskKind::Completion) => {
                let msg = m.msg;
                self.mpqs.remove(&mpq);
                out.push(SchedAction::Idle { mpq, msg });
                return out;
            }
            (p, k) => panic!("{k:?} task finished while MPQ {} is {p:?}", mpq.0),
        }
        let m = self.mpqs.get_mut(&mpq).unwrap();
        if m.phase == MpqPhase::Flowing && m.eom_seen && m.in_flight == 0 && m.pending.is_empty() {
            if m.has_completion {
                m.phase = MpqPhase::Completing;
                m.in_flight = 1;
                let snapshot = m.clone();
                out.push(self.task(TaskKind::Completion, &snapshot, mpq, None, now));
            } else {
                let msg = m.msg;
                self.mpqs.remove(&mpq);
                out.push(SchedAction::Idle { mpq, msg });
            }
        }
        out
    }

    /// Resets every MPQ that has not received a packet within its
    /// context's idle threshold, oldest first.
    pub fn lru_scan(&mut self, now: SimTime) -> Vec<SchedAction> {
        let stale: Vec<MpqId> = self
            .lru
            .iter()
            .filter(|(t, mpq)| now.saturating_sub(*t) >= self.mpqs[mpq].idle_threshold)
            .map(|&(_, mpq)| mpq)
            .collect();
        let mut out = Vec::new();
        for mpq in stale {
            let m = self.mpqs.get_mut(&mpq).unwrap();
            self.lru.remove(&(m.touched, mpq));
            self.counters.resets += 1;
            m.phase = MpqPhase::Zombie;
            out.push(SchedAction::Reset {
                mpq,
                msg: m.msg,
                ctx: m.ctx,
            });
            for her in m.pending.drain(..) {
                self.counters.dropped_hers += 1;
                out.push(SchedAction::Drop(her));
            }
            self.release_if_drained(mpq, &mut out);
        }
        out
    }
}

/// Cluster whose L1 holds a message's shared state.
pub fn home_cluster(msg: MsgId, clusters: usize) -> usize {
    (msg.0 % clusters as u64) as usize
}

/// Picks the cluster for a task.
///
/// The message's home cluster is preferred. If it refuses, clusters are
/// tried from least to most loaded (ties to the lowest index). `accept`
/// reserves the cluster's resources when it returns true.
pub fn select_cluster<L: Ord>(
    home: usize,
    clusters: usize,
    load: impl Fn(usize) -> L,
    mut accept: impl FnMut(usize) -> bool,
) -> Option<usize> {
    if accept(home) {
        return Some(home);
    }
    let mut order: Vec<usize> = (0..clusters).filter(|&c| c != home).collect();
    order.sort_by_key(|&c| (load(c), c));
    order.into_iter().find(|&c| accept(c))
}

/// FIFO of tasks waiting for a cluster. Strictly in order unless
/// `skip_blocked` lets later tasks pass a blocked head.
#[derive(Debug, Default)]
pub struct Dispatcher {
    queue: VecDeque<Task>,
    pub dispatched: u64,
    pub blocked_attempts: u64,
    pub max_depth: usize,
    by_kind: BTreeMap<TaskKind, u64>,
}

impl Dispatcher {
    pub fn push(&mut self, t: Task) {
        self.queue.push_back(t);
        self.max_depth = self.max_depth.max(self.queue.len());
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn dispatched_of(&self, k: TaskKind) -> u64 {
        self.by_kind.get(&k).copied().unwrap_or(0)
    }

    /// Dispatches at most one task; `place` returns the chosen cluster.
    pub fn dispatch_one(
        &mut self,
        skip_blocked: bool,
        mut place: impl FnMut(&Task) -> Option<usize>,
    ) -> Option<(Task, usize)> {
        let limit = if skip_blocked {
            self.queue.len()
        } else {
            self.queue.len().min(1)
        };
        for i in 0..limit {
            if let Some(c) = place(&self.queue[i]) {
                let t = self.queue.remove(i).unwrap();
                self.dispatched += 1;
                *self.by_kind.entry(t.kind).or_default() += 1;
                return Some((t, c));
            }
            self.blocked_attempts += 1;
        }
        None
    }
}
