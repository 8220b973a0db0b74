//! Timed memories, interconnects and sinks.
//!
//! Timing is reservation based: every bank, port direction and link owns a
//! [`Calendar`] of busy cycles and every transfer books the cycles it uses.
//! Bandwidth limits and bank conflicts fall out of the bookings. The same
//! module holds the functional contents of NIC memories and of host memory.

mod banked;
mod calendar;
mod sink;

use std::collections::BTreeMap;

pub use banked::{BankedMemory, ConflictCount, Direction};
pub use calendar::{reserve_joint, Calendar};
pub use sink::RateSink;

use crate::config::{MemoryConfig, PsPinConfig};
use crate::engine::SimTime;

pub const L2_PKT_BASE: u64 = 0x1000_0000;
pub const L2_HANDLER_BASE: u64 = 0x2000_0000;
pub const L1_BASE: u64 = 0x4000_0000;
pub const L1_STRIDE: u64 = 0x0100_0000;
/// Largest memory that fits in one window of the address map.
pub const MAX_WINDOW: u64 = 0x1000_0000;

/// Port of the L2 memories wired to the NIC-Host interconnect.
pub const PORT_NIC_HOST: usize = 0;
/// Port of the L2 memories wired to the DMA and PE interconnects.
pub const PORT_CLUSTERS: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    L2Pkt(u64),
    L2Handler(u64),
    L1 { cluster: usize, offset: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AddressMap {
    pub l2_pkt_bytes: u64,
    pub l2_handler_bytes: u64,
    pub l1_bytes: u64,
    pub clusters: usize,
    pub l1_pkt_region_bytes: u64,
    pub l1_scratchpad_offset: u64,
    pub l1_scratchpad_bytes: u64,
}

impl AddressMap {
    pub fn new(cfg: &PsPinConfig) -> Self {
        Self {
            l2_pkt_bytes: cfg.l2_pkt_buffer_bytes,
            l2_handler_bytes: cfg.l2_handler_bytes,
            l1_bytes: cfg.l1_bytes_per_cluster,
            clusters: cfg.num_clusters,
            l1_pkt_region_bytes: cfg.l1_pkt_region_bytes,
            l1_scratchpad_offset: cfg.l1_pkt_region_bytes + cfg.l1_runtime_bytes,
            l1_scratchpad_bytes: cfg.l1_scratchpad_bytes,
        }
    }

    /// Decodes a range that must lie entirely inside one memory.
    pub fn decode(&self, addr: u64, len: u64) -> Option<Location> {
        let end = addr.checked_add(len)?;
        if (L2_PKT_BASE..L2_PKT_BASE + self.l2_pkt_bytes).contains(&addr) {
            (end <= L2_PKT_BASE + self.l2_pkt_bytes).then_some(Location::L2Pkt(addr - L2_PKT_BASE))
        } else if (L2_HANDLER_BASE..L2_HANDLER_BASE + self.l2_handler_bytes).contains(&addr) {
            (end <= L2_HANDLER_BASE + self.l2_handler_bytes).then_some(Location::L2Handler(addr - L2_HANDLER_BASE))
        } else if addr >= L1_BASE {
            let cluster = ((addr - L1_BASE) / L1_STRIDE) as usize;
            let offset = (addr - L1_BASE) % L1_STRIDE;
            (cluster < self.clusters && offset + len <= self.l1_bytes).then_some(Location::L1 { cluster, offset })
        } else {
            None
        }
    }

    pub fn l1_addr(&self, cluster: usize, offset: u64) -> u64 {
        L1_BASE + cluster as u64 * L1_STRIDE + offset
    }

    pub fn l1_pkt_addr(&self, cluster: usize, offset: u64) -> u64 {
        self.l1_addr(cluster, offset)
    }

    pub fn scratchpad_addr(&self, cluster: usize, offset: u64) -> u64 {
        self.l1_addr(cluster, self.l1_scratchpad_offset + offset)
    }

    pub fn l2_pkt_addr(&self, offset: u64) -> u64 {
        L2_PKT_BASE + offset
    }

    pub fn l2_handler_addr(&self, offset: u64) -> u64 {
        L2_HANDLER_BASE + offset
    }
}

const HOST_PAGE: u64 = 4096;

/// Sparse host memory written by DMA and HostDirect commands.
#[derive(Debug, Clone, Default)]
pub struct HostMemory {
    pages: BTreeMap<u64, Box<[u8]>>,
    /// When false, writes are counted but not stored.
    pub capture: bool,
    pub bytes_written: u64,
}

impl HostMemory {
    pub fn new(capture: bool) -> Self {
        Self {
            capture,
            ..Default::default()
        }
    }

    pub fn write(&mut self, addr: u64, data: &[u8]) {
        self.bytes_written += data.len() as u64;
        if !self.capture {
            return;
        }
        let mut a = addr;
        let mut rest = data;
        while !rest.is_empty() {
            let page = a / HOST_PAGE;
            let off = (a % HOST_PAGE) as usize;
            let n = rest.len().min(HOST_PAGE as usize - off);
            let p = self
                .pages
                .entry(page)
                .or_insert_with(|| vec![0u8; HOST_PAGE as usize].into_boxed_slice());
            p[off..off + n].copy_from_slice(&rest[..n]);
            a += n as u64;
            rest = &rest[n..];
        }
    }

    /// Reads `len` bytes; never-written bytes read as zero.
    pub fn read(&self, addr: u64, len: usize) -> Vec<u8> {
        let mut out = vec![0u8; len];
        let mut a = addr;
        let mut done = 0;
        while done < len {
            let page = a / HOST_PAGE;
            let off = (a % HOST_PAGE) as usize;
            let n = (len - done).min(HOST_PAGE as usize - off);
            if let Some(p) = self.pages.get(&page) {
                out[done..done + n].copy_from_slice(&p[off..off + n]);
            }
            a += n as u64;
            done += n;
        }
        out
    }

    pub fn read_u32(&self, addr: u64) -> u32 {
        u32::from_le_bytes(self.read(addr, 4).try_into().unwrap())
    }
}

/// Source of an outbound read, for latency selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReadPath {
    L2,
    L1,
}

/// Timing of an outbound (NIC outbound engine / off-cluster DMA) read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReadTiming {
    pub first_data: SimTime,
    pub last_data: SimTime,
    pub path: ReadPath,
}

pub struct MemorySystem {
    pub map: AddressMap,
    cfg: MemoryConfig,
    l2_pkt_data: Vec<u8>,
    l2_handler_data: Vec<u8>,
    l1_data: Vec<Vec<u8>>,
    pub l2_pkt: BankedMemory,
    pub l2_handler: BankedMemory,
    pub l1: Vec<BankedMemory>,
    /// Wide slave port into each cluster, used by outbound reads of L1.
    pub l1_wide_port: Vec<Calendar>,
    /// Per-cluster 32-bit master port into the PE interconnect.
    pub pe_link: Vec<Calendar>,
    /// Read side of the NIC-Host interconnect, shared by the NIC outbound
    /// engine and the off-cluster DMA engine.
    pub nic_host_read: Calendar,
    pub pcie: RateSink,
    pub nic_out: RateSink,
    pub host: HostMemory,
    last_prune: SimTime,
}

impl MemorySystem {
    /// Contention counters per shared resource, in a fixed order.
    pub fn conflict_counters(&self) -> Vec<(&'static str, ConflictCount)> {
        let l1 = self
            .l1
            .iter()
            .map(BankedMemory::bank_conflicts)
            .fold(ConflictCount::default(), |a, b| a + b);
        vec![
            ("l2_pkt_banks", self.l2_pkt.bank_conflicts()),
            ("l2_handler_banks", self.l2_handler.bank_conflicts()),
            ("l1_banks", l1),
            ("l1_wide_port", ConflictCount::sum(&self.l1_wide_port)),
            ("pe_link", ConflictCount::sum(&self.pe_link)),
            (
                "nic_host_read",
                ConflictCount::sum(std::slice::from_ref(&self.nic_host_read)),
            ),
        ]
    }

    pub fn new(cfg: &PsPinConfig, capture_host: bool) -> Self {
        let m = &cfg.memory;
        let map = AddressMap::new(cfg);
        let l1 = (0..cfg.num_clusters)
            .map(|_| {
                BankedMemory::new(
                    "l1",
                    cfg.l1_bytes_per_cluster,
                    cfg.l1_banks,
                    u64::from(m.l1_word_bits / 8),
                    1,
                    false,
                )
            })
            .collect();
        Self {
            map,
            cfg: m.clone(),
            l2_pkt_data: vec![0; cfg.l2_pkt_buffer_bytes as usize],
            l2_handler_data: vec![0; cfg.l2_handler_bytes as usize],
            l1_data: (0..cfg.num_clusters)
                .map(|_| vec![0; cfg.l1_bytes_per_cluster as usize])
                .collect(),
            l2_pkt: BankedMemory::new(
                "l2_pkt",
                cfg.l2_pkt_buffer_bytes,
                cfg.l2_pkt_banks,
                u64::from(m.l2_pkt_word_bits / 8),
                2,
                true,
            ),
            l2_handler: BankedMemory::new(
                "l2_handler",
                cfg.l2_handler_bytes,
                cfg.l2_handler_banks,
                u64::from(m.l2_handler_word_bits / 8),
                2,
                true,
            ),
            l1,
            l1_wide_port: vec![Calendar::new(); cfg.num_clusters],
            pe_link: vec![Calendar::new(); cfg.num_clusters],
            nic_host_read: Calendar::new(),
            pcie: RateSink::new("pcie", m.pcie_gbps),
            nic_out: RateSink::new("nic_out", m.nic_out_gbps),
            host: HostMemory::new(capture_host),
            last_prune: 0,
        }
    }

    pub fn beat_bytes(&self) -> u64 {
        u64::from(self.cfg.wide_link_bits / 8)
    }

    /// Forgets reservations older than `now`; call with the global clock.
    pub fn maybe_prune(&mut self, now: SimTime) {
        if now < self.last_prune + 4096 {
            return;
        }
        self.last_prune = now;
        self.l2_pkt.prune(now);
        self.l2_handler.prune(now);
        for m in &mut self.l1 {
            m.prune(now);
        }
        for c in self
            .l1_wide_port
            .iter_mut()
            .chain(self.pe_link.iter_mut())
            .chain(std::iter::once(&mut self.nic_host_read))
        {
            c.prune(now);
        }
    }

    // ---- functional contents ----

    fn bytes_mut(&mut self, loc: Location) -> (&mut [u8], usize) {
        match loc {
            Location::L2Pkt(o) => (&mut self.l2_pkt_data, o as usize),
            Location::L2Handler(o) => (&mut self.l2_handler_data, o as usize),
            Location::L1 { cluster, offset } => (&mut self.l1_data[cluster], offset as usize),
        }
    }

    fn bytes(&self, loc: Location) -> (&[u8], usize) {
        match loc {
            Location::L2Pkt(o) => (&self.l2_pkt_data, o as usize),
            Location::L2Handler(o) => (&self.l2_handler_data, o as usize),
            Location::L1 { cluster, offset } => (&self.l1_data[cluster], offset as usize),
        }
    }

    /// Reads engine memory; `None` if the range is unmapped.
    pub fn read(&self, addr: u64, len: usize) -> Option<Vec<u8>> {
        let loc = self.map.decode(addr, len as u64)?;
        let (mem, off) = self.bytes(loc);
        Some(mem[off..off + len].to_vec())
    }

    pub fn read_into(&self, addr: u64, out: &mut [u8]) -> Option<()> {
        let loc = self.map.decode(addr, out.len() as u64)?;
        let (mem, off) = self.bytes(loc);
        out.copy_from_slice(&mem[off..off + out.len()]);
        Some(())
    }

    pub fn write(&mut self, addr: u64, data: &[u8]) -> Option<()> {
        let loc = self.map.decode(addr, data.len() as u64)?;
        let (mem, off) = self.bytes_mut(loc);
        mem[off..off + data.len()].copy_from_slice(data);
        Some(())
    }

    pub fn read_u32(&self, addr: u64) -> Option<u32> {
        let mut b = [0u8; 4];
        self.read_into(addr, &mut b)?;
        Some(u32::from_le_bytes(b))
    }

    pub fn write_u32(&mut self, addr: u64, v: u32) -> Option<()> {
        self.write(addr, &v.to_le_bytes())
    }

    pub fn copy(&mut self, src: u64, dst: u64, len: usize) -> Option<()> {
        let data = self.read(src, len)?;
        self.write(dst, &data)
    }

    // ---- timing ----

    /// NIC inbound write of a packet through the private write port.
    /// Returns (first beat cycle, completion cycle).
    pub fn inbound_write(&mut self, l2_offset: u64, len: u64, at: SimTime) -> (SimTime, SimTime) {
        let beat = self.beat_bytes();
        let beats = len.div_ceil(beat).max(1);
        let mut first = None;
        let mut last = at;
        for i in 0..beats {
            let c = self
                .l2_pkt
                .reserve_beat(PORT_NIC_HOST, Direction::Write, l2_offset + i * beat, at + i, &mut []);
            first.get_or_insert(c);
            last = last.max(c);
        }
        (first.unwrap_or(at), last + 1)
    }

    /// Cluster DMA from the L2 packet buffer into an L1. Unloaded, a
    /// transfer of `n` beats completes at `at + dma_base + n * dma_beat`.
    pub fn cluster_dma_l2_to_l1(
        &mut self,
        cluster: usize,
        l2_offset: u64,
        l1_offset: u64,
        len: u64,
        at: SimTime,
    ) -> SimTime {
        let beat = self.beat_bytes();
        let beats = len.div_ceil(beat).max(1);
        let base = self.cfg.dma_base_cycles;
        let step = self.cfg.dma_beat_cycles;
        let mut done = at;
        for i in 0..beats {
            let c = self.l2_pkt.reserve_beat(
                PORT_CLUSTERS,
                Direction::Read,
                l2_offset + i * beat,
                at + i * step,
                &mut [],
            );
            let chunk = (len - i * beat).min(beat);
            let w =
                self.l1[cluster].reserve_words(0, Direction::Write, l1_offset + i * beat, chunk, c + step - 1 + base);
            done = done.max(w + 1);
        }
        done
    }

    /// A single-word HPU load/store/AMO issued at `at` by a core of
    /// `cluster`. Returns the completion cycle, or `None` if unmapped.
    pub fn hpu_word_access(&mut self, cluster: usize, addr: u64, dir: Direction, at: SimTime) -> Option<SimTime> {
        self.hpu_word_timing(cluster, addr, dir, at).map(|(_, done)| done)
    }

    /// Like `hpu_word_access`, also returning when the request left the
    /// core: a posted store lets the core continue from then on.
    pub fn hpu_word_timing(
        &mut self,
        cluster: usize,
        addr: u64,
        dir: Direction,
        at: SimTime,
    ) -> Option<(SimTime, SimTime)> {
        let loc = self.map.decode(addr, 4)?;
        let cfg = &self.cfg;
        Some(match loc {
            Location::L1 { cluster: c, offset } if c == cluster => {
                let b = self.l1[c].reserve_words(0, dir, offset, 4, at);
                let done = b + cfg.local_l1_latency;
                (done, done)
            }
            Location::L1 { cluster: c, offset } => {
                let p = self.pe_link[cluster].reserve(at);
                let b = self.l1[c].reserve_words(0, dir, offset, 4, p);
                (p + 1, b + cfg.remote_l1_latency)
            }
            Location::L2Handler(offset) => {
                let p = self.pe_link[cluster].reserve(at);
                let b = self.l2_handler.reserve_words(PORT_CLUSTERS, dir, offset, 4, p);
                (p + 1, b + cfg.l2_latency)
            }
            Location::L2Pkt(offset) => {
                let p = self.pe_link[cluster].reserve(at);
                let b = self.l2_pkt.reserve_beat(PORT_CLUSTERS, dir, offset, p, &mut []);
                (p + 1, b + cfg.l2_latency)
            }
        })
    }

    /// Wide read by the NIC outbound engine or the off-cluster DMA engine.
    /// All such reads share the NIC-Host read path.
    pub fn outbound_read(&mut self, addr: u64, len: u64, at: SimTime) -> Option<ReadTiming> {
        let loc = self.map.decode(addr, len)?;
        let beat = self.beat_bytes();
        let (path, latency) = match loc {
            Location::L1 { .. } => (ReadPath::L1, self.cfg.outbound_l1_read_latency),
            _ => (ReadPath::L2, self.cfg.outbound_l2_read_latency),
        };
        let lat_in = latency / 2;
        let lat_out = latency - lat_in;
        let start = at + lat_in;
        let first_off = match loc {
            Location::L2Pkt(o) | Location::L2Handler(o) => o,
            Location::L1 { offset, .. } => offset,
        };
        // Beats follow the source's word alignment.
        let aligned = first_off - first_off % beat;
        let beats = (first_off + len - aligned).div_ceil(beat);
        let mut first = None;
        let mut last = start;
        for i in 0..beats {
            let off = aligned + i * beat;
            let c = match loc {
                Location::L2Pkt(_) => self.l2_pkt.reserve_beat(
                    PORT_NIC_HOST,
                    Direction::Read,
                    off,
                    start + i,
                    &mut [&mut self.nic_host_read],
                ),
                Location::L2Handler(_) => {
                    let c = reserve_joint(
                        &mut [
                            self.l2_handler.port_calendar(PORT_NIC_HOST, Direction::Read),
                            &mut self.nic_host_read,
                        ],
                        start + i,
                    );
                    self.l2_handler
                        .reserve_words(PORT_NIC_HOST, Direction::Read, off, beat, c)
                }
                Location::L1 { cluster, .. } => {
                    let c = reserve_joint(
                        &mut [&mut self.l1_wide_port[cluster], &mut self.nic_host_read],
                        start + i,
                    );
                    self.l1[cluster].reserve_words(0, Direction::Read, off, beat, c)
                }
            };
            first.get_or_insert(c);
            last = last.max(c);
        }
        Some(ReadTiming {
            first_data: first.unwrap_or(start) + 1 + lat_out,
            last_data: last + 1 + lat_out,
            path,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sys() -> MemorySystem {
        MemorySystem::new(&PsPinConfig::default(), true)
    }

    #[test]
    fn address_map_round_trip() {
        let m = sys();
        let map = m.map;
        assert_eq!(map.decode(L2_PKT_BASE + 10, 4), Some(Location::L2Pkt(10)));
        assert_eq!(map.decode(L2_PKT_BASE + (4 << 20) - 2, 4), None);
        assert_eq!(
            map.decode(map.l1_addr(3, 100), 4),
            Some(Location::L1 {
                cluster: 3,
                offset: 100
            })
        );
        assert_eq!(map.decode(map.l1_addr(4, 0), 4), None);
        assert_eq!(map.decode(0, 4), None);
        assert_eq!(
            map.decode(map.scratchpad_addr(1, 0), 4),
            Some(Location::L1 {
                cluster: 1,
                offset: 40 * 1024
            })
        );
    }

    #[test]
    fn unloaded_cluster_dma_latency() {
        let mut m = sys();
        assert_eq!(m.cluster_dma_l2_to_l1(0, 0, 0, 64, 100), 112);
        let mut m = sys();
        assert_eq!(m.cluster_dma_l2_to_l1(0, 0, 0, 1024, 100), 127);
    }

    #[test]
    fn concurrent_cluster_dmas_share_the_port() {
        // Four 1 KiB transfers from four clusters issued in the same cycle:
        // 64 beats through one 512-bit port need at least 64 cycles.
        let mut m = sys();
        let done: Vec<_> = (0..4)
            .map(|c| m.cluster_dma_l2_to_l1(c, c as u64 * 1024, 0, 1024, 0))
            .collect();
        let last = *done.iter().max().unwrap();
        assert_eq!(last, 11 + 64);
        let bytes_per_cycle = 4096.0 / (last - 11) as f64;
        assert!(bytes_per_cycle <= 64.0);
    }

    #[test]
    fn hpu_access_latencies() {
        let mut m = sys();
        let map = m.map;
        assert_eq!(m.hpu_word_access(0, map.l1_addr(0, 0), Direction::Read, 10), Some(11));
        assert_eq!(m.hpu_word_access(0, map.l1_addr(1, 0), Direction::Read, 10), Some(25));
        // The PE link is still busy in cycle 10.
        assert_eq!(
            m.hpu_word_access(0, map.l2_handler_addr(0), Direction::Read, 10),
            Some(31)
        );
        assert_eq!(m.hpu_word_access(0, 0, Direction::Read, 10), None);
    }

    #[test]
    fn outbound_reads_share_nic_host_path() {
        let mut m = sys();
        let a = m.outbound_read(L2_PKT_BASE, 64, 0).unwrap();
        let b = m.outbound_read(L2_HANDLER_BASE, 64, 0).unwrap();
        assert_eq!(a.last_data, 7);
        assert_eq!(b.last_data, 8);
        let l1 = m.outbound_read(m.map.l1_addr(0, 0), 64, 0).unwrap();
        assert_eq!(l1.path, ReadPath::L1);
        assert_eq!(l1.last_data, 21);
    }

    #[test]
    fn host_memory_sparse_rw() {
        let mut h = HostMemory::new(true);
        h.write(4090, &[1, 2, 3, 4, 5, 6, 7, 8]);
        assert_eq!(h.read(4088, 12), vec![0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 0, 0]);
        let mut h = HostMemory::new(false);
        h.write(0, &[1]);
        assert_eq!(h.read(0, 1), vec![0]);
        assert_eq!(h.bytes_written, 1);
    }

    #[test]
    fn functional_copy() {
        let mut m = sys();
        let map = m.map;
        m.write(map.l2_pkt_addr(128), &[9; 16]).unwrap();
        m.copy(map.l2_pkt_addr(128), map.l1_addr(2, 0), 16).unwrap();
        assert_eq!(m.read(map.l1_addr(2, 0), 16).unwrap(), vec![9; 16]);
        assert!(m.write(0x10, &[1]).is_none());
    }
}
