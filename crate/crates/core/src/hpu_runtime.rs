//! Handler execution on an HPU.
//!
//! A handler is ordinary Rust code run against a [`HandlerApi`]. Each API
//! call moves the HPU's local clock forward by the cycles it costs: compute
//! is charged as requested, memory operations book banks and links in the
//! shared [`MemorySystem`] and wait for their completion, and issuing a
//! command costs a fixed number of cycles. The handler runs to completion
//! when its task is assigned, ahead of the global clock; the simulator then
//! retires it at the cycle the local clock reached.

use std::fmt;

use crate::engine::SimTime;
use crate::memory::{Direction, MemorySystem};
use crate::types::{
    Command, CommandKind, CommandSource, ExecutionContext, HandlerFn, MemRegion, MsgId, TaskKind, HOST_DIRECT_MAX_BYTES,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessKind {
    Load,
    Store,
    Amo,
    CommandSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryFault {
    pub addr: u64,
    pub len: u64,
    pub kind: AccessKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HandlerError {
    Fault(MemoryFault),
    Watchdog,
    /// Malformed command (e.g. an oversized HostDirect write).
    BadCommand(String),
}

impl fmt::Display for HandlerError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HandlerError::Fault(m) => write!(f, "{:?} fault at {:#x}+{}", m.kind, m.addr, m.len),
            HandlerError::Watchdog => write!(f, "watchdog expired"),
            HandlerError::BadCommand(s) => write!(f, "bad command: {s}"),
        }
    }
}

impl std::error::Error for HandlerError {}

/// Where the task runs and which packet it sees.
#[derive(Debug, Clone)]
pub struct TaskInfo {
    pub kind: TaskKind,
    pub cluster: usize,
    pub hpu: usize,
    pub home_cluster: usize,
    pub num_clusters: usize,
    pub msg_id: MsgId,
    /// L2 packet buffer address (0 for completion tasks).
    pub l2_addr: u64,
    /// L1 copy of the staged bytes, if any were staged.
    pub l1_addr: Option<u64>,
    pub staged_bytes: u32,
    pub size_bytes: u32,
    pub msg_offset: u64,
    pub eom: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IssuedCommand {
    /// Cycle the command leaves the HPU.
    pub at: SimTime,
    pub cmd: Command,
}

/// Result of running one handler body.
#[derive(Debug, Clone)]
pub struct HandlerRun {
    /// Cycle the body finished (or was stopped).
    pub end: SimTime,
    pub compute_cycles: u64,
    pub mem_cycles: u64,
    pub commands: Vec<IssuedCommand>,
    pub result: Result<(), HandlerError>,
}

pub struct HandlerApi<'a> {
    mem: &'a mut MemorySystem,
    info: &'a TaskInfo,
    ctx: &'a ExecutionContext,
    windows: Vec<MemRegion>,
    issue_cycles: u64,
    now: SimTime,
    deadline: SimTime,
    compute_cycles: u64,
    mem_cycles: u64,
    commands: Vec<IssuedCommand>,
    error: Option<HandlerError>,
}

impl<'a> HandlerApi<'a> {
    pub fn new(
        mem: &'a mut MemorySystem,
        info: &'a TaskInfo,
        ctx: &'a ExecutionContext,
        body_start: SimTime,
        issue_cycles: u64,
    ) -> Self {
        let map = mem.map;
        let mut windows = Vec::with_capacity(4);
        if info.kind != TaskKind::Completion {
            windows.push(MemRegion::new(info.l2_addr, u64::from(info.size_bytes)));
            if let Some(a) = info.l1_addr {
                windows.push(MemRegion::new(a, u64::from(info.staged_bytes)));
            }
        }
        if ctx.scratchpad.len > 0 {
            windows.push(MemRegion::new(
                map.scratchpad_addr(info.home_cluster, ctx.scratchpad.base),
                ctx.scratchpad.len,
            ));
        }
        if ctx.handler_mem.len > 0 {
            windows.push(ctx.handler_mem);
        }
        Self {
            mem,
            info,
            ctx,
            windows,
            issue_cycles,
            now: body_start,
            deadline: body_start.saturating_add(ctx.watchdog_threshold_cycles),
            compute_cycles: 0,
            mem_cycles: 0,
            commands: Vec::new(),
            error: None,
        }
    }

    // ---- task and context information ----

    pub fn task(&self) -> &TaskInfo {
        self.info
    }

    pub fn kind(&self) -> TaskKind {
        self.info.kind
    }

    pub fn msg_id(&self) -> MsgId {
        self.info.msg_id
    }

    pub fn cluster(&self) -> usize {
        self.info.cluster
    }

    pub fn hpu(&self) -> usize {
        self.info.hpu
    }

    pub fn home_cluster(&self) -> usize {
        self.info.home_cluster
    }

    pub fn num_clusters(&self) -> usize {
        self.info.num_clusters
    }

    pub fn pkt_len(&self) -> u32 {
        self.info.size_bytes
    }

    pub fn msg_offset(&self) -> u64 {
        self.info.msg_offset
    }

    pub fn is_eom(&self) -> bool {
        self.info.eom
    }

    /// Address of the packet: its L1 copy if staged, else the L2 buffer.
    pub fn pkt_addr(&self) -> u64 {
        self.info.l1_addr.unwrap_or(self.info.l2_addr)
    }

    pub fn pkt_l2_addr(&self) -> u64 {
        self.info.l2_addr
    }

    /// Bytes of the packet readable at [`Self::pkt_addr`].
    pub fn pkt_visible_len(&self) -> u32 {
        if self.info.l1_addr.is_some() {
            self.info.staged_bytes
        } else {
            self.info.size_bytes
        }
    }

    /// Base of this context's scratchpad in the message's home cluster.
    pub fn scratchpad(&self) -> u64 {
        self.mem
            .map
            .scratchpad_addr(self.info.home_cluster, self.ctx.scratchpad.base)
    }

    pub fn scratchpad_len(&self) -> u64 {
        self.ctx.scratchpad.len
    }

    pub fn handler_mem(&self) -> MemRegion {
        self.ctx.handler_mem
    }

    pub fn host_base(&self) -> u64 {
        self.ctx.host_base
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    // ---- cost accounting ----

    fn fail(&mut self, e: HandlerError) -> HandlerError {
        if self.error.is_none() {
            self.error = Some(e.clone());
        }
        e
    }

    fn ensure_alive(&mut self) -> Result<(), HandlerError> {
        match &self.error {
            Some(e) => Err(e.clone()),
            None => Ok(()),
        }
    }

    /// Moves the local clock to `t`, enforcing the watchdog.
    fn advance_to(&mut self, t: SimTime) -> Result<(), HandlerError> {
        if t > self.deadline {
            self.now = self.deadline;
            return Err(self.fail(HandlerError::Watchdog));
        }
        self.now = self.now.max(t);
        Ok(())
    }

    /// Spends `cycles` cycles of pure computation.
    pub fn compute(&mut self, cycles: u64) -> Result<(), HandlerError> {
        self.ensure_alive()?;
        let before = self.now;
        let r = self.advance_to(self.now.saturating_add(cycles));
        self.compute_cycles += self.now - before;
        r
    }

    fn check(&mut self, addr: u64, len: u64, kind: AccessKind) -> Result<(), HandlerError> {
        self.ensure_alive()?;
        if self.windows.iter().any(|w| w.contains(addr, len)) && self.mem.map.decode(addr, len).is_some() {
            Ok(())
        } else {
            Err(self.fail(HandlerError::Fault(MemoryFault { addr, len, kind })))
        }
    }

    /// Times one 32-bit access issued now. Loads and atomics wait for the
    /// response; stores are posted.
    fn word_access(&mut self, addr: u64, dir: Direction, posted: bool) -> Result<(), HandlerError> {
        let issue = self.now;
        let (accepted, done) = self
            .mem
            .hpu_word_timing(self.info.cluster, addr, dir, issue)
            .expect("access checked against the address map");
        let r = self.advance_to(if posted { accepted } else { done });
        self.mem_cycles += self.now - issue;
        r
    }

    fn words(addr: u64, len: u64) -> impl Iterator<Item = u64> {
        let first = addr & !3;
        (first..addr + len).step_by(4)
    }

    // ---- memory operations ----

    pub fn load_u32(&mut self, addr: u64) -> Result<u32, HandlerError> {
        self.check(addr, 4, AccessKind::Load)?;
        self.word_access(addr, Direction::Read, false)?;
        Ok(self.mem.read_u32(addr).expect("checked"))
    }

    pub fn store_u32(&mut self, addr: u64, v: u32) -> Result<(), HandlerError> {
        self.check(addr, 4, AccessKind::Store)?;
        self.word_access(addr, Direction::Write, true)?;
        self.mem.write_u32(addr, v).expect("checked");
        Ok(())
    }

    pub fn load_u64(&mut self, addr: u64) -> Result<u64, HandlerError> {
        let lo = self.load_u32(addr)?;
        let hi = self.load_u32(addr + 4)?;
        Ok(u64::from(lo) | (u64::from(hi) << 32))
    }

    pub fn store_u64(&mut self, addr: u64, v: u64) -> Result<(), HandlerError> {
        self.store_u32(addr, v as u32)?;
        self.store_u32(addr + 4, (v >> 32) as u32)
    }

    /// Atomic fetch-and-add, executed at the memory in a single access.
    pub fn amo_add_u32(&mut self, addr: u64, v: u32) -> Result<u32, HandlerError> {
        self.check(addr, 4, AccessKind::Amo)?;
        self.word_access(addr, Direction::Write, false)?;
        let old = self.mem.read_u32(addr).expect("checked");
        self.mem.write_u32(addr, old.wrapping_add(v)).expect("checked");
        Ok(old)
    }

    /// Atomic add whose result is discarded. Like a store, it leaves the
    /// core once the interconnect accepts it.
    pub fn amo_add_u32_nowait(&mut self, addr: u64, v: u32) -> Result<(), HandlerError> {
        self.check(addr, 4, AccessKind::Amo)?;
        self.word_access(addr, Direction::Write, true)?;
        let old = self.mem.read_u32(addr).expect("checked");
        self.mem.write_u32(addr, old.wrapping_add(v)).expect("checked");
        Ok(())
    }

    /// Copies `out.len()` bytes into registers, one word access per word.
    pub fn read_bytes(&mut self, addr: u64, out: &mut [u8]) -> Result<(), HandlerError> {
        let len = out.len() as u64;
        if len == 0 {
            return Ok(());
        }
        self.check(addr, len, AccessKind::Load)?;
        for w in Self::words(addr, len) {
            self.word_access(w, Direction::Read, false)?;
        }
        self.mem.read_into(addr, out).expect("checked");
        Ok(())
    }

    pub fn write_bytes(&mut self, addr: u64, data: &[u8]) -> Result<(), HandlerError> {
        let len = data.len() as u64;
        if len == 0 {
            return Ok(());
        }
        self.check(addr, len, AccessKind::Store)?;
        for w in Self::words(addr, len) {
            self.word_access(w, Direction::Write, true)?;
        }
        self.mem.write(addr, data).expect("checked");
        Ok(())
    }

    /// Reads `n` little-endian 32-bit values starting at `addr`.
    pub fn load_u32s(&mut self, addr: u64, n: usize) -> Result<Vec<u32>, HandlerError> {
        let mut buf = vec![0u8; n * 4];
        self.read_bytes(addr, &mut buf)?;
        Ok(buf
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    // ---- commands ----

    /// Issues a command to the NIC outbound engine, the off-cluster DMA
    /// engine or the host-direct path. The data is read when the engine
    /// accepts the command, so a handler must not overwrite the source
    /// before its task ends.
    pub fn issue(&mut self, cmd: Command) -> Result<(), HandlerError> {
        self.ensure_alive()?;
        match (&cmd.kind, &cmd.src) {
            (CommandKind::HostDirect, CommandSource::Immediate(d)) => {
                if d.len() > HOST_DIRECT_MAX_BYTES {
                    return Err(self.fail(HandlerError::BadCommand(format!(
                        "host-direct write of {} bytes exceeds {HOST_DIRECT_MAX_BYTES}",
                        d.len()
                    ))));
                }
            }
            (CommandKind::HostDirect, _) => {
                return Err(self.fail(HandlerError::BadCommand("host-direct needs immediate data".into())));
            }
            (_, CommandSource::Nic { addr }) => {
                if cmd.len == 0 {
                    return Err(self.fail(HandlerError::BadCommand("empty transfer".into())));
                }
                self.check(*addr, u64::from(cmd.len), AccessKind::CommandSource)?;
            }
            (_, CommandSource::Immediate(_)) => {
                return Err(self.fail(HandlerError::BadCommand("immediate data is host-direct only".into())));
            }
        }
        let before = self.now;
        let r = self.advance_to(self.now + self.issue_cycles);
        self.compute_cycles += self.now - before;
        r?;
        self.commands.push(IssuedCommand { at: self.now, cmd });
        Ok(())
    }

    pub fn finish(self, result: Result<(), HandlerError>) -> HandlerRun {
        // A swallowed fault or kill still terminates the handler.
        let result = match self.error {
            Some(e) => Err(e),
            None => result,
        };
        HandlerRun {
            end: self.now,
            compute_cycles: self.compute_cycles,
            mem_cycles: self.mem_cycles,
            commands: self.commands,
            result,
        }
    }
}

/// Runs `f` with its body starting at `body_start`.
pub fn run_handler(
    f: &HandlerFn,
    mem: &mut MemorySystem,
    info: &TaskInfo,
    ctx: &ExecutionContext,
    body_start: SimTime,
    issue_cycles: u64,
) -> HandlerRun {
    let mut api = HandlerApi::new(mem, info, ctx, body_start, issue_cycles);
    let r = f(&mut api);
    api.finish(r)
}
