//! Domain types shared by the inbound engine, scheduler, clusters and handlers.

use std::fmt;
use std::sync::Arc;

use crate::engine::SimTime;
use crate::hpu_runtime::{HandlerApi, HandlerError};
use crate::nic_inbound::RingAlloc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MsgId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CtxId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MpqId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TaskId(pub u64);

impl fmt::Display for MsgId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Opaque flow key. Contexts match on a prefix of it, so both queue-pair
/// style and 5-tuple style identifiers fit.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct FlowKey(pub Vec<u8>);

impl FlowKey {
    pub fn from_str_bytes(s: &str) -> Self {
        FlowKey(s.as_bytes().to_vec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PacketKind {
    Header,
    Payload,
}

impl PacketKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PacketKind::Header => "header",
            PacketKind::Payload => "payload",
        }
    }
}

pub const MIN_PACKET_BYTES: u32 = 64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub msg_id: MsgId,
    pub flow: FlowKey,
    pub size_bytes: u32,
    pub kind: PacketKind,
    pub eom: bool,
    pub payload: Option<Arc<[u8]>>,
    /// Absolute arrival cycle; `None` means the trace's default pacing applies.
    pub arrival: Option<SimTime>,
    /// Byte offset of this packet inside its message (filled by the trace loader).
    pub msg_offset: u64,
}

/// Handler Execution Request: inbound engine to packet scheduler.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Her {
    /// Index of the packet in the injected trace.
    pub pkt_index: usize,
    pub msg_id: MsgId,
    pub l2_addr: u64,
    pub size_bytes: u32,
    pub mpq: MpqId,
    pub ctx: CtxId,
    pub eom: bool,
    pub msg_offset: u64,
    /// Packet buffer allocation, freed when the packet's task completes.
    pub ring: RingAlloc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CommandKind {
    NicPut,
    DmaToHost,
    HostDirect,
}

impl CommandKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CommandKind::NicPut => "nic_put",
            CommandKind::DmaToHost => "dma_to_host",
            CommandKind::HostDirect => "host_direct",
        }
    }
}

pub const HOST_DIRECT_MAX_BYTES: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CommandSource {
    /// Engine address (L2 packet buffer, L2 handler memory or an L1).
    Nic {
        addr: u64,
    },
    Immediate(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Command {
    pub kind: CommandKind,
    pub src: CommandSource,
    /// Host virtual address (DMA, HostDirect) or network destination tag (NIC put).
    pub dst: u64,
    pub len: u32,
}

impl Command {
    pub fn nic_put(addr: u64, len: u32, dst: u64) -> Self {
        Command {
            kind: CommandKind::NicPut,
            src: CommandSource::Nic { addr },
            dst,
            len,
        }
    }

    pub fn dma_to_host(addr: u64, len: u32, host_addr: u64) -> Self {
        Command {
            kind: CommandKind::DmaToHost,
            src: CommandSource::Nic { addr },
            dst: host_addr,
            len,
        }
    }

    pub fn host_direct(data: &[u8], host_addr: u64) -> Self {
        Command {
            kind: CommandKind::HostDirect,
            src: CommandSource::Immediate(data.to_vec()),
            dst: host_addr,
            len: data.len() as u32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    Ok,
    ProtectionFault,
    WatchdogKill,
    /// Packet released without running (stale-MPQ reset, protocol violation).
    Dropped,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Ok => "ok",
            Outcome::ProtectionFault => "protection_fault",
            Outcome::WatchdogKill => "watchdog_kill",
            Outcome::Dropped => "dropped",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TaskKind {
    /// First packet: header handler, then the payload handler on the same packet.
    Header,
    Payload,
    Completion,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Header => "header",
            TaskKind::Payload => "payload",
            TaskKind::Completion => "completion",
        }
    }
}

/// Feedback from a finished task to the MPQ engine and the inbound engine.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletionNotification {
    pub mpq: MpqId,
    pub task_kind: TaskKind,
    pub her: Option<Her>,
    pub outcome: Outcome,
}

/// Host-visible error condition in an execution context descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ErrorFlag {
    #[default]
    None,
    ProtectionFault,
    WatchdogKill,
    StaleMessage,
}

/// A contiguous window of the engine address space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MemRegion {
    pub base: u64,
    pub len: u64,
}

impl MemRegion {
    pub fn new(base: u64, len: u64) -> Self {
        Self { base, len }
    }

    pub fn end(&self) -> u64 {
        self.base + self.len
    }

    pub fn contains(&self, addr: u64, len: u64) -> bool {
        addr >= self.base && addr.checked_add(len).is_some_and(|e| e <= self.end())
    }

    pub fn overlaps(&self, other: &MemRegion) -> bool {
        self.base < other.end() && other.base < self.end()
    }
}

pub type HandlerFn = dyn Fn(&mut HandlerApi<'_>) -> Result<(), HandlerError> + Send + Sync;

/// Handler triple. Any subset may be absent, but not all three.
#[derive(Clone, Default)]
pub struct HandlerSet {
    pub header: Option<Arc<HandlerFn>>,
    pub payload: Option<Arc<HandlerFn>>,
    pub completion: Option<Arc<HandlerFn>>,
}

impl fmt::Debug for HandlerSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HandlerSet")
            .field("header", &self.header.is_some())
            .field("payload", &self.payload.is_some())
            .field("completion", &self.completion.is_some())
            .finish()
    }
}

impl HandlerSet {
    pub fn payload_only<F>(f: F) -> Self
    where
        F: Fn(&mut HandlerApi<'_>) -> Result<(), HandlerError> + Send + Sync + 'static,
    {
        HandlerSet {
            payload: Some(Arc::new(f)),
            ..Default::default()
        }
    }

    pub fn with_header<F>(mut self, f: F) -> Self
    where
        F: Fn(&mut HandlerApi<'_>) -> Result<(), HandlerError> + Send + Sync + 'static,
    {
        self.header = Some(Arc::new(f));
        self
    }

    pub fn with_payload<F>(mut self, f: F) -> Self
    where
        F: Fn(&mut HandlerApi<'_>) -> Result<(), HandlerError> + Send + Sync + 'static,
    {
        self.payload = Some(Arc::new(f));
        self
    }

    pub fn with_completion<F>(mut self, f: F) -> Self
    where
        F: Fn(&mut HandlerApi<'_>) -> Result<(), HandlerError> + Send + Sync + 'static,
    {
        self.completion = Some(Arc::new(f));
        self
    }

    pub fn is_empty(&self) -> bool {
        self.header.is_none() && self.payload.is_none() && self.completion.is_none()
    }
}

/// Stage the whole packet into L1.
pub const STAGE_FULL_PACKET: u32 = u32::MAX;

/// Per-message/flow descriptor installed by the host.
#[derive(Debug, Clone)]
pub struct ExecutionContext {
    pub id: CtxId,
    /// Flow-key prefix this context matches; empty matches every packet.
    pub match_prefix: Vec<u8>,
    pub handlers: HandlerSet,
    /// Region of L2 handler memory (absolute engine addresses).
    pub handler_mem: MemRegion,
    /// Offset and length inside each cluster's scratchpad area; the copy in
    /// the message's home cluster is the one handlers see.
    pub scratchpad: MemRegion,
    /// Packet bytes staged into L1 before the handler starts
    /// (`STAGE_FULL_PACKET` for the whole packet, 0 to skip staging).
    pub bytes_to_l1: u32,
    pub mpq_idle_threshold_cycles: u64,
    pub watchdog_threshold_cycles: u64,
    /// Host buffer the handlers may target.
    pub host_base: u64,
    /// Host address of the descriptor's error field.
    pub host_error_addr: u64,
}

impl ExecutionContext {
    pub fn new(id: u32, handlers: HandlerSet) -> Self {
        Self {
            id: CtxId(id),
            match_prefix: Vec::new(),
            handlers,
            handler_mem: MemRegion::default(),
            scratchpad: MemRegion::default(),
            bytes_to_l1: STAGE_FULL_PACKET,
            mpq_idle_threshold_cycles: 1_000_000,
            watchdog_threshold_cycles: 1_000_000,
            host_base: 0x1_0000_0000 * (u64::from(id) + 1),
            host_error_addr: 0xF_0000_0000 + u64::from(id) * 64,
        }
    }

    pub fn staged_bytes(&self, packet_bytes: u32) -> u32 {
        self.bytes_to_l1.min(packet_bytes)
    }

    pub fn matches(&self, flow: &FlowKey) -> bool {
        flow.0.starts_with(&self.match_prefix)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn region_containment() {
        let r = MemRegion::new(100, 50);
        assert!(r.contains(100, 50));
        assert!(r.contains(149, 1));
        assert!(!r.contains(149, 2));
        assert!(!r.contains(99, 1));
        assert!(!r.contains(u64::MAX, 2));
        assert!(r.overlaps(&MemRegion::new(149, 10)));
        assert!(!r.overlaps(&MemRegion::new(150, 10)));
    }

    #[test]
    fn staged_bytes_clamps_to_packet() {
        let mut ctx = ExecutionContext::new(0, HandlerSet::payload_only(|_| Ok(())));
        assert_eq!(ctx.staged_bytes(512), 512);
        ctx.bytes_to_l1 = 64;
        assert_eq!(ctx.staged_bytes(512), 64);
        ctx.bytes_to_l1 = 0;
        assert_eq!(ctx.staged_bytes(512), 0);
    }
}
