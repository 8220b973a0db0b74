//! Command engines: NIC outbound, off-cluster DMA to host, and host-direct
//! writes. Each has a bounded command queue and a limit on commands in
//! flight; data is read over the shared NIC-Host read path and drained into
//! a fixed-rate sink (network port or PCIe).

use std::collections::VecDeque;

use crate::config::MemoryConfig;
use crate::engine::SimTime;
use crate::memory::{MemorySystem, ReadPath};
use crate::types::{Command, CommandKind, CommandSource, TaskId};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueuedCommand {
    pub cmd: Command,
    pub task: TaskId,
    pub accepted: SimTime,
}

/// Packet sent on the network by a NIC put, kept when capture is enabled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetPacket {
    pub sent: SimTime,
    pub dst: u64,
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Started {
    pub task: TaskId,
    pub response: SimTime,
}

#[derive(Debug, Clone)]
pub struct CommandEngine {
    pub kind: CommandKind,
    queue: VecDeque<QueuedCommand>,
    depth: usize,
    max_outstanding: usize,
    outstanding: usize,
    response_cycles: u64,
    pub commands: u64,
    pub bytes: u64,
    pub from_l1: u64,
    pub from_l2: u64,
    pub last_response: SimTime,
}

pub fn engine_index(kind: CommandKind) -> usize {
    match kind {
        CommandKind::NicPut => 0,
        CommandKind::DmaToHost => 1,
        CommandKind::HostDirect => 2,
    }
}

impl CommandEngine {
    pub fn new(kind: CommandKind, m: &MemoryConfig) -> Self {
        Self {
            kind,
            queue: VecDeque::new(),
            depth: m.outbound_queue_depth,
            max_outstanding: m.outbound_max_outstanding,
            outstanding: 0,
            response_cycles: m.command_response_cycles,
            commands: 0,
            bytes: 0,
            from_l1: 0,
            from_l2: 0,
            last_response: 0,
        }
    }

    pub fn all(m: &MemoryConfig) -> [CommandEngine; 3] {
        [
            CommandEngine::new(CommandKind::NicPut, m),
            CommandEngine::new(CommandKind::DmaToHost, m),
            CommandEngine::new(CommandKind::HostDirect, m),
        ]
    }

    pub fn has_room(&self) -> bool {
        self.queue.len() < self.depth
    }

    pub fn is_idle(&self) -> bool {
        self.queue.is_empty() && self.outstanding == 0
    }

    pub fn outstanding(&self) -> usize {
        self.outstanding
    }

    /// Queues a command. Its data is captured now, so later writes by the
    /// handler's successors cannot change what is sent.
    pub fn accept(
        &mut self,
        cmd: Command,
        task: TaskId,
        now: SimTime,
        mem: &mut MemorySystem,
        net_log: Option<&mut Vec<NetPacket>>,
    ) {
        assert!(self.has_room(), "{:?} engine queue overflow", self.kind);
        let data = match &cmd.src {
            CommandSource::Nic { addr } => mem.read(*addr, cmd.len as usize).expect("source checked at issue"),
            CommandSource::Immediate(d) => d.clone(),
        };
        match cmd.kind {
            CommandKind::NicPut => {
                if let Some(log) = net_log {
                    log.push(NetPacket {
                        sent: now,
                        dst: cmd.dst,
                        data,
                    });
                }
            }
            CommandKind::DmaToHost | CommandKind::HostDirect => mem.host.write(cmd.dst, &data),
        }
        self.queue.push_back(QueuedCommand {
            cmd,
            task,
            accepted: now,
        });
    }

    /// Starts queued commands while the in-flight limit allows.
    pub fn start(&mut self, now: SimTime, mem: &mut MemorySystem) -> Vec<Started> {
        let mut out = Vec::new();
        while self.outstanding < self.max_outstanding {
            let Some(q) = self.queue.pop_front() else { break };
            let len = u64::from(q.cmd.len);
            let drained = match &q.cmd.src {
                CommandSource::Nic { addr } => {
                    let r = mem.outbound_read(*addr, len, now).expect("source checked at issue");
                    match r.path {
                        ReadPath::L1 => self.from_l1 += len,
                        ReadPath::L2 => self.from_l2 += len,
                    }
                    let sink = match self.kind {
                        CommandKind::NicPut => &mut mem.nic_out,
                        _ => &mut mem.pcie,
                    };
                    sink.serve(r.first_data, r.last_data, len)
                }
                CommandSource::Immediate(_) => mem.pcie.serve(now + 1, now + 1, len),
            };
            let response = drained + self.response_cycles;
            self.outstanding += 1;
            self.commands += 1;
            self.bytes += len;
            self.last_response = self.last_response.max(response);
            out.push(Started { task: q.task, response });
        }
        out
    }

    pub fn on_response(&mut self) {
        self.outstanding = self.outstanding.checked_sub(1).expect("response without command");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::PsPinConfig;
    use crate::memory::L2_PKT_BASE;

    #[test]
    fn put_from_l2_is_unloaded_fast() {
        let cfg = PsPinConfig::default();
        let mut mem = MemorySystem::new(&cfg, true);
        let mut e = CommandEngine::new(CommandKind::NicPut, &cfg.memory);
        let mut log = Vec::new();
        mem.write(L2_PKT_BASE, &[5; 64]).unwrap();
        e.accept(
            Command::nic_put(L2_PKT_BASE, 64, 9),
            TaskId(1),
            0,
            &mut mem,
            Some(&mut log),
        );
        let s = e.start(0, &mut mem);
        // 3 cycles in, 1 beat, 3 cycles out, 1 cycle on the wire, 1 cycle response.
        assert_eq!(
            s,
            vec![Started {
                task: TaskId(1),
                response: 9
            }]
        );
        assert_eq!(log[0].data, vec![5; 64]);
    }

    #[test]
    fn outstanding_limit_holds_commands() {
        let cfg = PsPinConfig::default();
        let mut mem = MemorySystem::new(&cfg, false);
        let mut e = CommandEngine::new(CommandKind::DmaToHost, &cfg.memory);
        for i in 0..10 {
            e.accept(
                Command::dma_to_host(L2_PKT_BASE + 64 * i, 64, 0),
                TaskId(i),
                0,
                &mut mem,
                None,
            );
        }
        assert_eq!(e.start(0, &mut mem).len(), 8);
        assert!(e.start(1, &mut mem).is_empty());
        e.on_response();
        assert_eq!(e.start(9, &mut mem).len(), 1);
    }

    #[test]
    fn host_direct_writes_host_memory() {
        let cfg = PsPinConfig::default();
        let mut mem = MemorySystem::new(&cfg, true);
        let mut e = CommandEngine::new(CommandKind::HostDirect, &cfg.memory);
        e.accept(
            Command::host_direct(&[1, 2, 3, 4], 0x1000),
            TaskId(0),
            0,
            &mut mem,
            None,
        );
        let s = e.start(0, &mut mem);
        assert_eq!(mem.host.read_u32(0x1000), 0x0403_0201);
        assert_eq!(s[0].response, 3);
    }

    #[test]
    fn concurrent_put_and_dma_share_read_path() {
        // Saturating both engines with 1 KiB reads from L2: each gets about half.
        let mut cfg = PsPinConfig::default();
        cfg.memory.outbound_max_outstanding = 64;
        cfg.memory.outbound_queue_depth = 64;
        let mut mem = MemorySystem::new(&cfg, false);
        let mut put = CommandEngine::new(CommandKind::NicPut, &cfg.memory);
        let mut dma = CommandEngine::new(CommandKind::DmaToHost, &cfg.memory);
        let mut last = 0;
        for i in 0..64 {
            put.accept(
                Command::nic_put(L2_PKT_BASE + 1024 * i, 1024, 0),
                TaskId(i),
                0,
                &mut mem,
                None,
            );
            dma.accept(
                Command::dma_to_host(L2_PKT_BASE + 1024 * (i + 64), 1024, 0),
                TaskId(i),
                0,
                &mut mem,
                None,
            );
        }
        for s in put.start(0, &mut mem).into_iter().chain(dma.start(0, &mut mem)) {
            last = last.max(s.response);
        }
        // 128 KiB over one 64 B/cycle path needs at least 2048 cycles.
        assert!(last >= 2048, "{last}");
        let gbps = |bytes: u64| bytes as f64 * 8.0 / last as f64;
        assert!((gbps(put.bytes) - 256.0).abs() < 10.0);
        assert!((gbps(dma.bytes) - 256.0).abs() < 10.0);
    }
}
