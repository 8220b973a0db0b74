//! The simulator: one event loop driving the inbound engine, the scheduler,
//! the clusters and the command engines over a shared memory model.

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use crate::cluster::{Cluster, ClusterTask, FinishedTask, PendingCommand, RoundRobinArbiter};
use crate::config::{DispatchPolicy, PsPinConfig};
use crate::engine::{EventQueue, SimTime};
use crate::error::SimError;
use crate::hpu_runtime::{run_handler, HandlerError, TaskInfo};
use crate::memory::{MemorySystem, L2_PKT_BASE, MAX_WINDOW};
use crate::nic_inbound::{InboundEngine, InjectOutcome, Trace};
use crate::outbound::{engine_index, CommandEngine, NetPacket};
use crate::scheduler::{select_cluster, CtxParams, Dispatcher, MpqEngine, SchedAction, Task};
use crate::stats::{Stats, TaskRecord};
use crate::types::{CtxId, ErrorFlag, ExecutionContext, HandlerFn, Her, Outcome, TaskId, TaskKind};

#[derive(Debug, Clone)]
pub struct SimOptions {
    /// Store bytes written to host memory (needed by functional checks).
    pub capture_host: bool,
    /// Keep every packet sent by NIC puts.
    pub capture_net: bool,
    /// Keep one record per task.
    pub keep_records: bool,
    /// Abort if simulated time passes this cycle.
    pub max_cycles: Option<SimTime>,
    /// Width of the throughput time-series windows.
    pub series_window: SimTime,
    /// Cycles excluded from the steady-state throughput.
    pub warmup_cycles: SimTime,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            capture_host: true,
            capture_net: false,
            keep_records: true,
            max_cycles: None,
            series_window: 1000,
            warmup_cycles: 0,
        }
    }
}

#[derive(Debug)]
enum Ev {
    Inject,
    HerArrive(Her),
    Dispatch,
    TaskArrive(usize, Box<ClusterTask>),
    Runnable(usize, Box<ClusterTask>),
    Assign(usize),
    HandlerDone {
        cluster: usize,
        hpu: usize,
        generation: u64,
    },
    CommandArb(usize),
    CommandDone {
        engine: usize,
        task: TaskId,
    },
    FeedbackArb(usize),
    MergeArb,
    NotifyArrive(Box<FinishedTask>),
    LruScan,
}

/// Periodic activities that act at most once per cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Key {
    Inject,
    Dispatch,
    Merge,
    Lru,
    Assign(usize),
    CommandArb(usize),
    FeedbackArb(usize),
}

#[derive(Debug, Clone, Copy, Default)]
struct Wake {
    next: Option<SimTime>,
    last: Option<SimTime>,
}

const KEY_FIXED: usize = 4;

fn host_error_code(f: ErrorFlag) -> u32 {
    match f {
        ErrorFlag::None => 0,
        ErrorFlag::ProtectionFault => 1,
        ErrorFlag::WatchdogKill => 2,
        ErrorFlag::StaleMessage => 3,
    }
}

pub struct Simulator {
    cfg: PsPinConfig,
    opts: SimOptions,
    q: EventQueue<Ev>,
    wakes: Vec<Wake>,
    pub mem: MemorySystem,
    nic: InboundEngine,
    mpq: MpqEngine,
    disp: Dispatcher,
    clusters: Vec<Cluster>,
    engines: [CommandEngine; 3],
    contexts: Vec<ExecutionContext>,
    ctx_errors: Vec<ErrorFlag>,
    merge_q: Vec<VecDeque<(SimTime, Box<FinishedTask>)>>,
    merge_arb: RoundRobinArbiter,
    /// Responses outstanding per task, with the task's cluster and HPU.
    cmd_pending: HashMap<TaskId, (u32, usize, usize)>,
    her_arrival: HashMap<usize, SimTime>,
    inject_stalled: bool,
    dispatch_blocked: bool,
    net_log: Vec<NetPacket>,
    stats: Stats,
    finished: bool,
}

impl Simulator {
    pub fn new(
        cfg: PsPinConfig,
        contexts: Vec<ExecutionContext>,
        trace: Trace,
        opts: SimOptions,
    ) -> Result<Self, SimError> {
        let cfg = cfg.validated()?;
        Self::check_contexts(&cfg, &contexts, &trace)?;
        let mem = MemorySystem::new(&cfg, opts.capture_host);
        let clusters = (0..cfg.num_clusters)
            .map(|c| {
                Cluster::new(
                    c,
                    cfg.hpus_per_cluster,
                    cfg.csched_fifo_depth,
                    cfg.l1_pkt_region_bytes,
                    cfg.wide_beat_bytes(),
                )
            })
            .collect();
        let n = cfg.num_clusters;
        let mut stats = Stats::new(cfg.total_hpus(), opts.keep_records, opts.series_window);
        stats.warmup = opts.warmup_cycles;
        Ok(Self {
            nic: InboundEngine::new(&cfg, trace, &contexts),
            mpq: MpqEngine::new(n),
            disp: Dispatcher::default(),
            clusters,
            engines: CommandEngine::all(&cfg.memory),
            ctx_errors: vec![ErrorFlag::None; contexts.len()],
            contexts,
            merge_q: vec![VecDeque::new(); n],
            merge_arb: RoundRobinArbiter::new(n),
            cmd_pending: HashMap::new(),
            her_arrival: HashMap::new(),
            inject_stalled: false,
            dispatch_blocked: false,
            net_log: Vec::new(),
            stats,
            q: EventQueue::new(),
            wakes: vec![Wake::default(); KEY_FIXED + 3 * n],
            mem,
            opts,
            cfg,
            finished: false,
        })
    }

    fn check_contexts(cfg: &PsPinConfig, contexts: &[ExecutionContext], trace: &Trace) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidArgument(m));
        if contexts.is_empty() {
            return bad("at least one execution context is required".into());
        }
        let max_pkt = trace.packets.iter().map(|p| p.size_bytes).max().unwrap_or(0);
        if u64::from(max_pkt) > cfg.l2_pkt_buffer_bytes {
            return bad(format!("packet of {max_pkt} bytes exceeds the packet buffer"));
        }
        let hm = crate::memory::L2_HANDLER_BASE..crate::memory::L2_HANDLER_BASE + cfg.l2_handler_bytes.min(MAX_WINDOW);
        for (i, c) in contexts.iter().enumerate() {
            if c.id != CtxId(i as u32) {
                return bad(format!("context {i} has id {}", c.id.0));
            }
            if c.handlers.is_empty() {
                return bad(format!("context {i} has no handlers"));
            }
            if c.handler_mem.len > 0 && !(hm.contains(&c.handler_mem.base) && c.handler_mem.end() <= hm.end) {
                return bad(format!("context {i} handler memory outside L2 handler memory"));
            }
            if c.scratchpad.end() > cfg.l1_scratchpad_bytes {
                return bad(format!("context {i} scratchpad exceeds the L1 scratchpad"));
            }
            if u64::from(c.staged_bytes(max_pkt)) > cfg.l1_pkt_region_bytes {
                return bad(format!("context {i} stages more bytes than the L1 packet region holds"));
            }
        }
        Ok(())
    }

    // ---- accessors ----

    pub fn config(&self) -> &PsPinConfig {
        &self.cfg
    }

    pub fn stats(&self) -> &Stats {
        &self.stats
    }

    pub fn now(&self) -> SimTime {
        self.q.now()
    }

    pub fn ctx_error(&self, ctx: CtxId) -> ErrorFlag {
        self.ctx_errors[ctx.0 as usize]
    }

    pub fn net_log(&self) -> &[NetPacket] {
        &self.net_log
    }

    pub fn inbound(&self) -> &InboundEngine {
        &self.nic
    }

    pub fn scheduler(&self) -> &MpqEngine {
        &self.mpq
    }

    pub fn dispatcher(&self) -> &Dispatcher {
        &self.disp
    }

    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    pub fn engines(&self) -> &[CommandEngine; 3] {
        &self.engines
    }

    pub fn events_fired(&self) -> u64 {
        self.q.fired()
    }

    // ---- wakeups ----

    fn key_index(&self, k: Key) -> usize {
        match k {
            Key::Inject => 0,
            Key::Dispatch => 1,
            Key::Merge => 2,
            Key::Lru => 3,
            Key::Assign(c) => KEY_FIXED + 3 * c,
            Key::CommandArb(c) => KEY_FIXED + 3 * c + 1,
            Key::FeedbackArb(c) => KEY_FIXED + 3 * c + 2,
        }
    }

    fn wake(&mut self, k: Key, at: SimTime) {
        let at = at.max(self.q.now());
        let i = self.key_index(k);
        let w = &mut self.wakes[i];
        if w.next.is_none_or(|n| at < n) {
            w.next = Some(at);
            let ev = match k {
                Key::Inject => Ev::Inject,
                Key::Dispatch => Ev::Dispatch,
                Key::Merge => Ev::MergeArb,
                Key::Lru => Ev::LruScan,
                Key::Assign(c) => Ev::Assign(c),
                Key::CommandArb(c) => Ev::CommandArb(c),
                Key::FeedbackArb(c) => Ev::FeedbackArb(c),
            };
            self.q.schedule(at, ev);
        }
    }

    /// Claims the activity's slot for cycle `t`; false for stale wakeups
    /// and for a second action in the same cycle (deferred to `t + 1`).
    fn fire(&mut self, k: Key, t: SimTime) -> bool {
        let i = self.key_index(k);
        if self.wakes[i].next != Some(t) {
            return false;
        }
        self.wakes[i].next = None;
        if self.wakes[i].last == Some(t) {
            self.wake(k, t + 1);
            return false;
        }
        self.wakes[i].last = Some(t);
        true
    }

    fn kick_inject(&mut self, t: SimTime) {
        if self.inject_stalled {
            self.inject_stalled = false;
            self.wake(Key::Inject, t);
        }
    }

    fn kick_dispatch(&mut self, t: SimTime) {
        if self.dispatch_blocked {
            self.dispatch_blocked = false;
            self.wake(Key::Dispatch, t);
        }
    }

    // ---- main loop ----

    /// Runs until every packet has been processed and the engine is idle.
    pub fn run(&mut self) -> Result<(), SimError> {
        assert!(!self.finished, "a simulator runs once");
        self.finished = true;
        self.wake(Key::Inject, 0);
        while let Some((t, ev)) = self.q.pop() {
            if let Some(m) = self.opts.max_cycles {
                if t > m {
                    return Err(SimError::Timeout(m));
                }
            }
            self.mem.maybe_prune(t);
            self.handle(t, ev);
        }
        self.stats.finalize();
        self.check_drained()
    }

    fn check_drained(&self) -> Result<(), SimError> {
        let mut issues = Vec::new();
        if !self.nic.is_done() {
            issues.push(format!(
                "{} of {} packets injected (stall: {:?})",
                self.nic.injected(),
                self.nic.trace().len(),
                self.nic.stalled()
            ));
        }
        if self.mpq.active() > 0 {
            issues.push(format!("{} MPQs active", self.mpq.active()));
        }
        if !self.disp.is_empty() {
            issues.push(format!("{} tasks waiting for dispatch", self.disp.len()));
        }
        let outstanding: usize = self.clusters.iter().map(|c| c.outstanding).sum();
        if outstanding > 0 {
            issues.push(format!("{outstanding} tasks on clusters"));
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(SimError::Deadlock(issues.join(", ")))
        }
    }

    fn handle(&mut self, t: SimTime, ev: Ev) {
        match ev {
            Ev::Inject => {
                if self.fire(Key::Inject, t) {
                    self.on_inject(t);
                }
            }
            Ev::HerArrive(her) => self.on_her(her, t),
            Ev::Dispatch => {
                if self.fire(Key::Dispatch, t) {
                    self.on_dispatch(t);
                }
            }
            Ev::TaskArrive(c, ct) => self.on_task_arrive(c, *ct, t),
            Ev::Runnable(c, ct) => {
                self.clusters[c].runnable.push_back(*ct);
                self.wake(Key::Assign(c), t);
            }
            Ev::Assign(c) => {
                if self.fire(Key::Assign(c), t) {
                    self.on_assign(c, t);
                }
            }
            Ev::HandlerDone {
                cluster,
                hpu,
                generation,
            } => self.on_handler_done(cluster, hpu, generation, t),
            Ev::CommandArb(c) => {
                if self.fire(Key::CommandArb(c), t) {
                    self.on_command_arb(c, t);
                }
            }
            Ev::CommandDone { engine, task } => self.on_command_done(engine, task, t),
            Ev::FeedbackArb(c) => {
                if self.fire(Key::FeedbackArb(c), t) {
                    self.on_feedback_arb(c, t);
                }
            }
            Ev::MergeArb => {
                if self.fire(Key::Merge, t) {
                    self.on_merge(t);
                }
            }
            Ev::NotifyArrive(ft) => self.on_notify(*ft, t),
            Ev::LruScan => {
                if self.fire(Key::Lru, t) {
                    let actions = self.mpq.lru_scan(t);
                    self.apply(actions, t);
                    if self.mpq.receiving() > 0 {
                        self.wake(Key::Lru, t + self.cfg.lru_scan_period);
                    }
                }
            }
        }
    }

    // ---- inbound ----

    fn on_inject(&mut self, t: SimTime) {
        let outcome = self.nic.try_inject(t, &mut self.mem);
        let first = |s: &mut Stats, a: SimTime| {
            s.first_injection.get_or_insert(a);
        };
        match outcome {
            InjectOutcome::Her { her, write_done } => {
                self.stats.packets_injected += 1;
                first(&mut self.stats, self.nic.arrival_of(her.pkt_index));
                self.mpq.her_sent(her.mpq);
                self.q.schedule(write_done, Ev::HerArrive(her));
                self.wake(Key::Inject, write_done);
            }
            InjectOutcome::Bypass { pkt_index, next_at } | InjectOutcome::Dropped { pkt_index, next_at } => {
                first(&mut self.stats, self.nic.arrival_of(pkt_index));
                self.wake(Key::Inject, next_at);
            }
            InjectOutcome::Wait(at) => self.wake(Key::Inject, at),
            InjectOutcome::Stalled(_) => self.inject_stalled = true,
            InjectOutcome::Done => {}
        }
    }

    fn ctx(&self, id: CtxId) -> &ExecutionContext {
        &self.contexts[id.0 as usize]
    }

    fn on_her(&mut self, her: Her, t: SimTime) {
        self.her_arrival.insert(her.pkt_index, t);
        let ctx = self.ctx(her.ctx);
        let params = CtxParams {
            has_completion: ctx.handlers.completion.is_some(),
            idle_threshold: ctx.mpq_idle_threshold_cycles,
        };
        let actions = self.mpq.on_her(her, params, t);
        self.apply(actions, t);
        if self.mpq.receiving() > 0 && self.wakes[self.key_index(Key::Lru)].next.is_none() {
            self.wake(Key::Lru, t + self.cfg.lru_scan_period);
        }
    }

    fn handlers_for(&self, task: &Task) -> Vec<Arc<HandlerFn>> {
        let h = &self.ctx(task.ctx).handlers;
        let list = match task.kind {
            TaskKind::Header => vec![h.header.clone(), h.payload.clone()],
            TaskKind::Payload => vec![h.payload.clone()],
            TaskKind::Completion => vec![h.completion.clone()],
        };
        list.into_iter().flatten().collect()
    }

    fn apply(&mut self, actions: Vec<SchedAction>, t: SimTime) {
        for a in actions {
            match a {
                SchedAction::Ready(task) => {
                    if self.handlers_for(&task).is_empty() {
                        // Nothing to run: notify right away.
                        if task.her.is_some() {
                            self.nic.release_her();
                            self.kick_inject(t);
                        }
                        self.stats.immediate_notifications += 1;
                        let ft = FinishedTask::unrun(task, t, Outcome::Ok);
                        self.q.schedule(t, Ev::NotifyArrive(Box::new(ft)));
                    } else {
                        self.disp.push(task);
                        self.wake(Key::Dispatch, t);
                    }
                }
                SchedAction::Drop(her) => {
                    self.nic.free_buffer(her.ring);
                    self.nic.release_her();
                    self.kick_inject(t);
                    let arrival = self.her_arrival.remove(&her.pkt_index).unwrap_or(t);
                    self.stats.record(TaskRecord {
                        task_id: u64::MAX,
                        kind: TaskKind::Payload,
                        msg_id: her.msg_id,
                        pkt_index: Some(her.pkt_index),
                        size_bytes: her.size_bytes,
                        cluster: None,
                        hpu: None,
                        her_arrival: arrival,
                        dispatched: t,
                        dma_start: t,
                        dma_done: t,
                        assigned: t,
                        handler_start: t,
                        handler_end: t,
                        done: t,
                        notified: t,
                        outcome: Outcome::Dropped,
                        compute_cycles: 0,
                        mem_cycles: 0,
                        commands: 0,
                    });
                }
                SchedAction::Idle { mpq, msg } => {
                    self.nic.unmap(msg);
                    self.nic.return_mpq(mpq);
                    self.kick_inject(t);
                }
                SchedAction::Reset { msg, ctx, .. } => {
                    self.nic.unmap(msg);
                    self.stats.resets += 1;
                    self.raise_error(ctx, ErrorFlag::StaleMessage, t);
                }
                SchedAction::Release(mpq) => {
                    self.nic.return_mpq(mpq);
                    self.kick_inject(t);
                }
            }
        }
    }

    /// The HPU driver (or the scheduler) writes the error condition into the
    /// context descriptor in host memory.
    fn raise_error(&mut self, ctx: CtxId, flag: ErrorFlag, t: SimTime) {
        self.ctx_errors[ctx.0 as usize] = flag;
        let addr = self.ctx(ctx).host_error_addr;
        self.mem.host.write(addr, &host_error_code(flag).to_le_bytes());
        self.mem.pcie.serve(t, t, 4);
    }

    // ---- dispatch ----

    fn on_dispatch(&mut self, t: SimTime) {
        let skip = self.cfg.dispatch_policy == DispatchPolicy::SkipBlocked;
        let n = self.cfg.num_clusters;
        let mut chosen = None;
        let clusters = &mut self.clusters;
        let contexts = &self.contexts;
        let result = self.disp.dispatch_one(skip, |task| {
            let bytes = match &task.her {
                Some(h) => contexts[task.ctx.0 as usize].staged_bytes(h.size_bytes),
                None => 0,
            };
            let loads: Vec<_> = clusters.iter().map(Cluster::load).collect();
            select_cluster(
                task.home,
                n,
                |c| loads[c],
                |c| match clusters[c].try_accept(bytes) {
                    Some(a) => {
                        chosen = Some((a, bytes));
                        true
                    }
                    None => false,
                },
            )
        });
        match result {
            Some((task, c)) => {
                let (l1, staged_bytes) = chosen.expect("accepted task has a reservation");
                if task.her.is_some() {
                    self.nic.release_her();
                    self.kick_inject(t);
                }
                let ct = ClusterTask {
                    task,
                    l1,
                    staged_bytes,
                    dispatched: t,
                    arrived: t + self.cfg.her_to_csched_cycles,
                    dma_done: 0,
                };
                self.q
                    .schedule(t + self.cfg.her_to_csched_cycles, Ev::TaskArrive(c, Box::new(ct)));
                if !self.disp.is_empty() {
                    self.wake(Key::Dispatch, t + 1);
                }
            }
            None => self.dispatch_blocked = !self.disp.is_empty(),
        }
    }

    // ---- cluster ----

    fn on_task_arrive(&mut self, c: usize, mut ct: ClusterTask, t: SimTime) {
        ct.arrived = t;
        match (&ct.task.her, ct.l1) {
            (Some(her), Some(l1)) if ct.staged_bytes > 0 => {
                let staged = u64::from(ct.staged_bytes);
                let done = self
                    .mem
                    .cluster_dma_l2_to_l1(c, her.l2_addr - L2_PKT_BASE, l1.offset, staged, t);
                let dst = self.mem.map.l1_pkt_addr(c, l1.offset);
                self.mem
                    .copy(her.l2_addr, dst, ct.staged_bytes as usize)
                    .expect("staging inside mapped memory");
                ct.dma_done = done;
                self.q.schedule(done, Ev::Runnable(c, Box::new(ct)));
            }
            _ => {
                ct.dma_done = t;
                self.clusters[c].runnable.push_back(ct);
                self.wake(Key::Assign(c), t);
            }
        }
    }

    fn on_assign(&mut self, c: usize, t: SimTime) {
        let cl = &mut self.clusters[c];
        if cl.runnable.is_empty() {
            return;
        }
        let Some(h) = cl.idle_hpu() else { return };
        let ct = cl.runnable.pop_front().unwrap();
        cl.dequeue(&ct);
        self.kick_dispatch(t);

        let task = ct.task.clone();
        let fns = self.handlers_for(&task);
        let (l2_addr, size, msg_offset, eom) = match &task.her {
            Some(her) => (her.l2_addr, her.size_bytes, her.msg_offset, her.eom),
            None => (0, 0, 0, true),
        };
        let info = TaskInfo {
            kind: task.kind,
            cluster: c,
            hpu: h,
            home_cluster: task.home,
            num_clusters: self.cfg.num_clusters,
            msg_id: task.msg_id,
            l2_addr,
            l1_addr: ct.l1.map(|a| self.mem.map.l1_pkt_addr(c, a.offset)),
            staged_bytes: ct.staged_bytes,
            size_bytes: size,
            msg_offset,
            eom,
        };
        let invoke = self.cfg.runtime_invoke_cycles;
        let doorbell = self.cfg.runtime_doorbell_cycles;
        let ctx = &self.contexts[task.ctx.0 as usize];
        let handler_start = t + 1;
        let mut cursor = handler_start;
        let mut body_end = cursor;
        let mut compute = 0;
        let mut mem_cycles = 0;
        let mut commands = Vec::new();
        let mut result: Result<(), HandlerError> = Ok(());
        for f in &fns {
            let run = run_handler(
                f.as_ref(),
                &mut self.mem,
                &info,
                ctx,
                cursor + invoke,
                self.cfg.command_issue_cycles,
            );
            compute += run.compute_cycles;
            mem_cycles += run.mem_cycles;
            commands.extend(run.commands);
            body_end = run.end;
            result = run.result;
            if result.is_err() {
                break;
            }
            cursor = run.end + doorbell;
        }
        let outcome = match &result {
            Ok(()) => Outcome::Ok,
            Err(HandlerError::Watchdog) => Outcome::WatchdogKill,
            Err(_) => Outcome::ProtectionFault,
        };
        let release_at = if outcome == Outcome::Ok {
            body_end
        } else {
            body_end + self.cfg.exception_reset_cycles
        };
        let ncmd = commands.len() as u32;
        let ft = FinishedTask {
            task,
            cluster: Some(c),
            hpu: Some(h),
            l1: ct.l1,
            staged_bytes: ct.staged_bytes,
            dispatched: ct.dispatched,
            arrived: ct.arrived,
            dma_done: ct.dma_done,
            assigned: t,
            handler_start,
            handler_end: body_end,
            done: release_at,
            compute_cycles: compute,
            mem_cycles,
            commands: ncmd,
            outcome,
        };
        let task_id = ft.task.id;
        let cl = &mut self.clusters[c];
        let hpu = &mut cl.hpus[h];
        hpu.running = Some(Box::new(ft));
        hpu.generation += 1;
        hpu.unissued = ncmd;
        hpu.release_pending = false;
        let generation = hpu.generation;
        if ncmd > 0 {
            self.cmd_pending.insert(task_id, (ncmd, c, h));
            let first = commands.iter().map(|ic| ic.at).min().unwrap();
            for issued in commands {
                cl.commands[h].push_back(PendingCommand { issued, task: task_id });
            }
            self.wake(Key::CommandArb(c), first);
        }
        self.q.schedule(
            release_at,
            Ev::HandlerDone {
                cluster: c,
                hpu: h,
                generation,
            },
        );
        let cl = &self.clusters[c];
        if !cl.runnable.is_empty() && cl.idle_hpu().is_some() {
            self.wake(Key::Assign(c), t + 1);
        }
    }

    fn on_handler_done(&mut self, c: usize, h: usize, generation: u64, t: SimTime) {
        let hpu = &mut self.clusters[c].hpus[h];
        if hpu.running.is_none() || hpu.generation != generation {
            return;
        }
        if hpu.unissued > 0 {
            // Blocked until the outbound engines take its commands.
            hpu.release_pending = true;
            return;
        }
        self.release(c, h, t);
    }

    /// Frees the core and moves its task to the completion buffer.
    fn release(&mut self, c: usize, h: usize, t: SimTime) {
        let hpus_per_cluster = self.cfg.hpus_per_cluster;
        let doorbell = self.cfg.runtime_doorbell_cycles;
        let mut ft = self.clusters[c].hpus[h].running.take().expect("release of an idle HPU");
        ft.done = if ft.outcome == Outcome::Ok { t + doorbell } else { t };
        let busy = &mut self.stats.hpus[c * hpus_per_cluster + h];
        busy.busy_cycles += ft.done - ft.handler_start;
        busy.tasks += 1;
        self.stats.busy_interval(ft.handler_start, ft.done);
        match ft.outcome {
            Outcome::ProtectionFault => self.raise_error(ft.task.ctx, ErrorFlag::ProtectionFault, t),
            Outcome::WatchdogKill => self.raise_error(ft.task.ctx, ErrorFlag::WatchdogKill, t),
            _ => {}
        }
        let done = ft.done;
        let hpu = &mut self.clusters[c].hpus[h];
        if self.cmd_pending.contains_key(&ft.task.id) {
            hpu.awaiting_responses.push(ft);
        } else {
            hpu.feedback.push_back(ft);
            self.wake(Key::FeedbackArb(c), done);
        }
        if !self.clusters[c].runnable.is_empty() {
            self.wake(Key::Assign(c), t);
        }
    }

    fn on_command_arb(&mut self, c: usize, t: SimTime) {
        let engines = &self.engines;
        let granted = self.clusters[c]
            .grant_command(|pc| pc.issued.at <= t && engines[engine_index(pc.issued.cmd.kind)].has_room());
        if let Some((h, pc)) = granted {
            let k = engine_index(pc.issued.cmd.kind);
            let log = self.opts.capture_net.then_some(&mut self.net_log);
            self.engines[k].accept(pc.issued.cmd, pc.task, t, &mut self.mem, log);
            self.start_engine(k, t);
            let hpu = &mut self.clusters[c].hpus[h];
            hpu.unissued -= 1;
            if hpu.unissued == 0 && hpu.release_pending {
                hpu.release_pending = false;
                self.release(c, h, t);
            }
        }
        let engines = &self.engines;
        let next = self.clusters[c]
            .commands
            .iter()
            .filter_map(|q| q.front())
            .filter(|pc| pc.issued.at > t || engines[engine_index(pc.issued.cmd.kind)].has_room())
            .map(|pc| pc.issued.at.max(t + 1))
            .min();
        if let Some(n) = next {
            self.wake(Key::CommandArb(c), n);
        }
    }

    fn start_engine(&mut self, k: usize, t: SimTime) {
        for s in self.engines[k].start(t, &mut self.mem) {
            self.q.schedule(
                s.response,
                Ev::CommandDone {
                    engine: k,
                    task: s.task,
                },
            );
        }
    }

    fn on_command_done(&mut self, k: usize, task: TaskId, t: SimTime) {
        self.engines[k].on_response();
        if let Some(e) = self.cmd_pending.get_mut(&task) {
            e.0 -= 1;
            if e.0 == 0 {
                let (_, c, h) = self.cmd_pending.remove(&task).unwrap();
                let hpu = &mut self.clusters[c].hpus[h];
                if let Some(pos) = hpu.awaiting_responses.iter().position(|f| f.task.id == task) {
                    let mut ft = hpu.awaiting_responses.remove(pos);
                    ft.done = ft.done.max(t);
                    let done = ft.done;
                    hpu.feedback.push_back(ft);
                    self.wake(Key::FeedbackArb(c), done);
                }
            }
        }
        self.start_engine(k, t);
        for c in 0..self.clusters.len() {
            if self.clusters[c].has_commands() {
                self.wake(Key::CommandArb(c), t);
            }
        }
    }

    fn on_feedback_arb(&mut self, c: usize, t: SimTime) {
        if let Some((_, ft)) = self.clusters[c].grant_feedback(t) {
            if let Some(a) = ft.l1 {
                self.clusters[c].l1_ring.free(a);
            }
            self.stats.feedback_wait_max = self.stats.feedback_wait_max.max(t - ft.done);
            self.merge_q[c].push_back((t + 1, ft));
            self.wake(Key::Merge, t + 1);
            if !self.clusters[c].runnable.is_empty() {
                self.wake(Key::Assign(c), t);
            }
            self.kick_dispatch(t);
        }
        if let Some(n) = self.clusters[c].next_feedback() {
            self.wake(Key::FeedbackArb(c), n.max(t + 1));
        }
    }

    fn on_merge(&mut self, t: SimTime) {
        let q = &self.merge_q;
        if let Some(i) = self.merge_arb.grant(|i| q[i].front().is_some_and(|(r, _)| *r <= t)) {
            let (ready, ft) = self.merge_q[i].pop_front().unwrap();
            self.stats.merge_wait_max = self.stats.merge_wait_max.max(t - ready);
            let arrive = t + self.cfg.notify_return_cycles.saturating_sub(1);
            self.q.schedule(arrive, Ev::NotifyArrive(ft));
        }
        let next = self
            .merge_q
            .iter()
            .filter_map(|q| q.front().map(|(r, _)| (*r).max(t + 1)))
            .min();
        if let Some(n) = next {
            self.wake(Key::Merge, n);
        }
    }

    fn on_notify(&mut self, ft: FinishedTask, t: SimTime) {
        if let Some(c) = ft.cluster {
            self.clusters[c].outstanding -= 1;
            self.kick_dispatch(t);
        }
        if let Some(her) = &ft.task.her {
            self.nic.free_buffer(her.ring);
        }
        let her_arrival = match &ft.task.her {
            Some(h) => self.her_arrival.remove(&h.pkt_index).unwrap_or(ft.task.ready_at),
            None => ft.task.ready_at,
        };
        self.stats.record(TaskRecord {
            task_id: ft.task.id.0,
            kind: ft.task.kind,
            msg_id: ft.task.msg_id,
            pkt_index: ft.task.her.as_ref().map(|h| h.pkt_index),
            size_bytes: ft.task.her.as_ref().map_or(0, |h| h.size_bytes),
            cluster: ft.cluster,
            hpu: ft.hpu,
            her_arrival,
            dispatched: ft.dispatched,
            dma_start: ft.arrived,
            dma_done: ft.dma_done,
            assigned: ft.assigned,
            handler_start: ft.handler_start,
            handler_end: ft.handler_end,
            done: ft.done,
            notified: t,
            outcome: ft.outcome,
            compute_cycles: ft.compute_cycles,
            mem_cycles: ft.mem_cycles,
            commands: ft.commands,
        });
        let actions = self.mpq.on_complete(ft.task.mpq, ft.task.kind, t);
        self.apply(actions, t);
        self.kick_inject(t);
    }
}
