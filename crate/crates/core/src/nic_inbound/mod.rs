//! NIC inbound engine: packet arrival, context matching, MPQ mapping,
//! L2 packet buffer allocation and HER generation.

mod ring;
mod trace;

use std::collections::{BTreeSet, HashMap};

pub use ring::{RingAlloc, RingAllocator};
pub use trace::{Trace, TraceBuilder};

use crate::config::PsPinConfig;
use crate::engine::SimTime;
use crate::memory::MemorySystem;
use crate::types::{CtxId, ExecutionContext, Her, MpqId, MsgId, PacketKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StallReason {
    MpqPool,
    HerQueue,
    L2Buffer,
}

impl StallReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StallReason::MpqPool => "mpq_pool",
            StallReason::HerQueue => "her_queue",
            StallReason::L2Buffer => "l2_buffer",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InjectOutcome {
    /// Packet stored in L2; the HER reaches the scheduler at `write_done`.
    Her {
        her: Her,
        write_done: SimTime,
    },
    /// No context matched; the packet goes straight to the host.
    Bypass {
        pkt_index: usize,
        next_at: SimTime,
    },
    /// Payload packet of a message with no MPQ mapping.
    Dropped {
        pkt_index: usize,
        next_at: SimTime,
    },
    /// The next packet has not arrived yet.
    Wait(SimTime),
    Stalled(StallReason),
    Done,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InboundCounters {
    pub hers: u64,
    pub bypassed: u64,
    pub dropped: u64,
    pub stalls: u64,
    pub stall_cycles: HashMap<StallReason, u64>,
}

pub struct InboundEngine {
    trace: Trace,
    next: usize,
    /// Arrival cycle of each packet after pacing.
    pacing: Vec<SimTime>,
    matchers: Vec<(CtxId, Vec<u8>)>,
    mapping: HashMap<MsgId, MpqId>,
    free_mpqs: BTreeSet<u32>,
    ring: RingAllocator,
    her_outstanding: usize,
    her_queue_depth: usize,
    beat_bytes: u64,
    stalled: Option<(StallReason, SimTime)>,
    pub counters: InboundCounters,
}

impl InboundEngine {
    pub fn new(cfg: &PsPinConfig, trace: Trace, contexts: &[ExecutionContext]) -> Self {
        let mut cum_bits = 0u128;
        let pacing = trace
            .packets
            .iter()
            .map(|p| {
                let paced = if cfg.injection_gbps > 0.0 {
                    (cum_bits as f64 / cfg.injection_gbps).floor() as SimTime
                } else {
                    0
                };
                cum_bits += u128::from(p.size_bytes) * 8;
                p.arrival.unwrap_or(paced)
            })
            .collect();
        Self {
            trace,
            next: 0,
            pacing,
            matchers: contexts.iter().map(|c| (c.id, c.match_prefix.clone())).collect(),
            mapping: HashMap::new(),
            free_mpqs: (0..cfg.mpq_pool as u32).collect(),
            ring: RingAllocator::new(cfg.l2_pkt_buffer_bytes, cfg.wide_beat_bytes()),
            her_outstanding: 0,
            her_queue_depth: cfg.her_queue_depth,
            beat_bytes: cfg.wide_beat_bytes(),
            stalled: None,
            counters: InboundCounters::default(),
        }
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn is_done(&self) -> bool {
        self.next >= self.trace.len()
    }

    pub fn injected(&self) -> usize {
        self.next
    }

    pub fn stalled(&self) -> Option<StallReason> {
        self.stalled.map(|(r, _)| r)
    }

    pub fn arrival_of(&self, pkt_index: usize) -> SimTime {
        self.pacing[pkt_index]
    }

    pub fn ring(&self) -> &RingAllocator {
        &self.ring
    }

    pub fn mpqs_in_use(&self) -> usize {
        self.mapping.len()
    }

    pub fn her_outstanding(&self) -> usize {
        self.her_outstanding
    }

    fn match_ctx(&self, flow: &[u8]) -> Option<CtxId> {
        self.matchers
            .iter()
            .find(|(_, prefix)| flow.starts_with(prefix))
            .map(|(id, _)| *id)
    }

    fn stall(&mut self, reason: StallReason, now: SimTime) -> InjectOutcome {
        if self.stalled.is_none() {
            self.counters.stalls += 1;
            self.stalled = Some((reason, now));
        }
        InjectOutcome::Stalled(reason)
    }

    fn unstall(&mut self, now: SimTime) {
        if let Some((r, since)) = self.stalled.take() {
            *self.counters.stall_cycles.entry(r).or_default() += now - since;
        }
    }

    fn wire_cycles(&self, size: u32) -> SimTime {
        u64::from(size).div_ceil(self.beat_bytes)
    }

    /// Tries to accept the next packet at `now`.
    pub fn try_inject(&mut self, now: SimTime, mem: &mut MemorySystem) -> InjectOutcome {
        let Some(p) = self.trace.packets.get(self.next).cloned() else {
            return InjectOutcome::Done;
        };
        let idx = self.next;
        let arrival = self.pacing[idx];
        if arrival > now {
            return InjectOutcome::Wait(arrival);
        }
        let Some(ctx) = self.match_ctx(&p.flow.0) else {
            let next_at = now + self.wire_cycles(p.size_bytes);
            self.next += 1;
            self.counters.bypassed += 1;
            return InjectOutcome::Bypass {
                pkt_index: idx,
                next_at,
            };
        };
        let mapped = self.mapping.get(&p.msg_id).copied();
        if p.kind == PacketKind::Payload && mapped.is_none() {
            let next_at = now + self.wire_cycles(p.size_bytes);
            self.next += 1;
            self.counters.dropped += 1;
            return InjectOutcome::Dropped {
                pkt_index: idx,
                next_at,
            };
        }
        if self.her_outstanding >= self.her_queue_depth {
            return self.stall(StallReason::HerQueue, now);
        }
        let mpq = match mapped {
            Some(m) => m,
            None => match self.free_mpqs.first() {
                Some(&m) => MpqId(m),
                None => return self.stall(StallReason::MpqPool, now),
            },
        };
        let Some(ring) = self.ring.alloc(u64::from(p.size_bytes)) else {
            return self.stall(StallReason::L2Buffer, now);
        };
        self.unstall(now);
        if mapped.is_none() {
            self.free_mpqs.remove(&mpq.0);
            self.mapping.insert(p.msg_id, mpq);
        }
        let (_, write_done) = mem.inbound_write(ring.offset, u64::from(p.size_bytes), now);
        let addr = mem.map.l2_pkt_addr(ring.offset);
        let mut data = vec![0u8; p.size_bytes as usize];
        if let Some(d) = &p.payload {
            data[..d.len()].copy_from_slice(d);
        }
        mem.write(addr, &data)
            .expect("ring allocation inside the packet buffer");
        let her = Her {
            pkt_index: idx,
            msg_id: p.msg_id,
            l2_addr: addr,
            size_bytes: p.size_bytes,
            mpq,
            ctx,
            eom: p.eom,
            msg_offset: p.msg_offset,
            ring,
        };
        self.next += 1;
        self.her_outstanding += 1;
        self.counters.hers += 1;
        InjectOutcome::Her { her, write_done }
    }

    /// The scheduler handed the HER to a cluster (or discarded it).
    pub fn release_her(&mut self) {
        self.her_outstanding = self.her_outstanding.checked_sub(1).expect("HER release underflow");
    }

    /// The packet's buffer is no longer needed.
    pub fn free_buffer(&mut self, ring: RingAlloc) {
        self.ring.free(ring);
    }

    /// Stops routing the message's packets to its MPQ.
    pub fn unmap(&mut self, msg: MsgId) {
        self.mapping.remove(&msg);
    }

    /// Returns a drained MPQ to the pool.
    pub fn return_mpq(&mut self, mpq: MpqId) {
        assert!(self.free_mpqs.insert(mpq.0), "MPQ {} returned twice", mpq.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::HandlerSet;

    fn ctx() -> Vec<ExecutionContext> {
        vec![ExecutionContext::new(0, HandlerSet::payload_only(|_| Ok(())))]
    }

    fn run_until_blocked(e: &mut InboundEngine, mem: &mut MemorySystem) -> Vec<InjectOutcome> {
        let mut out = Vec::new();
        let mut now = 0;
        loop {
            let o = e.try_inject(now, mem);
            match &o {
                InjectOutcome::Her { write_done, .. } => now = *write_done,
                InjectOutcome::Wait(t) => now = *t,
                InjectOutcome::Bypass { next_at, .. } | InjectOutcome::Dropped { next_at, .. } => now = *next_at,
                InjectOutcome::Stalled(_) | InjectOutcome::Done => {
                    out.push(o);
                    return out;
                }
            }
            out.push(o);
        }
    }

    #[test]
    fn small_packets_enter_at_one_per_cycle() {
        let cfg = PsPinConfig::default();
        let mut mem = MemorySystem::new(&cfg, false);
        let t = TraceBuilder::new(8, 64, 64).build().unwrap();
        let mut e = InboundEngine::new(&cfg, t, &ctx());
        let done: Vec<_> = run_until_blocked(&mut e, &mut mem)
            .into_iter()
            .filter_map(|o| match o {
                InjectOutcome::Her { write_done, .. } => Some(write_done),
                _ => None,
            })
            .collect();
        assert_eq!(done, (1..=8).collect::<Vec<_>>());
    }

    #[test]
    fn pacing_follows_injection_rate() {
        let cfg = PsPinConfig {
            injection_gbps: 256.0,
            ..Default::default()
        };
        let t = TraceBuilder::new(4, 64, 64).build().unwrap();
        let e = InboundEngine::new(&cfg, t, &ctx());
        // 512 bits every 2 ns.
        assert_eq!((0..4).map(|i| e.arrival_of(i)).collect::<Vec<_>>(), vec![0, 2, 4, 6]);
    }

    #[test]
    fn pool_exhaustion_stalls_until_mpq_returns() {
        let cfg = PsPinConfig {
            mpq_pool: 2,
            ..Default::default()
        };
        let mut mem = MemorySystem::new(&cfg, false);
        let t = TraceBuilder::new(3, 64, 64).build().unwrap();
        let mut e = InboundEngine::new(&cfg, t, &ctx());
        let out = run_until_blocked(&mut e, &mut mem);
        assert_eq!(out.last(), Some(&InjectOutcome::Stalled(StallReason::MpqPool)));
        assert_eq!(e.mpqs_in_use(), 2);
        e.unmap(MsgId(0));
        e.return_mpq(MpqId(0));
        match e.try_inject(10, &mut mem) {
            InjectOutcome::Her { her, .. } => assert_eq!(her.mpq, MpqId(0)),
            o => panic!("{o:?}"),
        }
        assert_eq!(e.counters.stall_cycles[&StallReason::MpqPool], 8);
    }

    #[test]
    fn her_queue_bound_applies_backpressure() {
        let cfg = PsPinConfig {
            her_queue_depth: 4,
            ..Default::default()
        };
        let mut mem = MemorySystem::new(&cfg, false);
        let t = TraceBuilder::new(1, 64 * 10, 64).build().unwrap();
        let mut e = InboundEngine::new(&cfg, t, &ctx());
        let out = run_until_blocked(&mut e, &mut mem);
        assert_eq!(out.len(), 5);
        assert_eq!(out[4], InjectOutcome::Stalled(StallReason::HerQueue));
        e.release_her();
        assert!(matches!(e.try_inject(20, &mut mem), InjectOutcome::Her { .. }));
    }

    #[test]
    fn unmatched_bypass_and_unmapped_payload_drop() {
        let cfg = PsPinConfig::default();
        let mut mem = MemorySystem::new(&cfg, false);
        let mut c = ctx();
        c[0].match_prefix = vec![0xff];
        let t = TraceBuilder::new(1, 128, 64).build().unwrap();
        let mut e = InboundEngine::new(&cfg, t.clone(), &c);
        let out = run_until_blocked(&mut e, &mut mem);
        assert_eq!(e.counters.bypassed, 2);
        assert_eq!(out.last(), Some(&InjectOutcome::Done));

        let stray = Trace::new_unchecked(vec![t.packets[1].clone()]);
        let mut e = InboundEngine::new(&cfg, stray, &ctx());
        assert!(matches!(e.try_inject(0, &mut mem), InjectOutcome::Dropped { .. }));
        assert_eq!(e.counters.dropped, 1);
    }

    #[test]
    fn payload_bytes_land_in_l2() {
        let cfg = PsPinConfig::default();
        let mut mem = MemorySystem::new(&cfg, false);
        let t = TraceBuilder::new(1, 64, 64)
            .build_with(|_, _, _, _| Some(vec![7, 8, 9]))
            .unwrap();
        let mut e = InboundEngine::new(&cfg, t, &ctx());
        let InjectOutcome::Her { her, .. } = e.try_inject(0, &mut mem) else {
            panic!()
        };
        assert_eq!(mem.read(her.l2_addr, 4).unwrap(), vec![7, 8, 9, 0]);
    }
}
