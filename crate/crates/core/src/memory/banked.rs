use crate::engine::SimTime;

use super::calendar::{reserve_joint, Calendar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Read,
    Write,
}

/// Timing model of a word-interleaved multi-banked SRAM.
///
/// A full-duplex multi-port memory keeps one calendar per bank, port and
/// direction (a bank serves one access per port direction per cycle). A
/// single-ported TCDM keeps one calendar per bank shared by all masters.
/// Each port direction also has an issue calendar of one beat per cycle,
/// where a beat is one port-width transfer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConflictCount {
    pub requests: u64,
    pub conflicts: u64,
    pub conflict_cycles: u64,
}

impl std::ops::Add for ConflictCount {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            requests: self.requests + o.requests,
            conflicts: self.conflicts + o.conflicts,
            conflict_cycles: self.conflict_cycles + o.conflict_cycles,
        }
    }
}

impl ConflictCount {
    pub fn sum<'a>(cals: impl IntoIterator<Item = &'a Calendar>) -> Self {
        cals.into_iter().fold(Self::default(), |a, c| Self {
            requests: a.requests + c.requests,
            conflicts: a.conflicts + c.conflicts,
            conflict_cycles: a.conflict_cycles + c.conflict_cycles,
        })
    }
}

#[derive(Debug, Clone)]
pub struct BankedMemory {
    pub name: &'static str,
    pub size: u64,
    pub banks: usize,
    pub word_bytes: u64,
    pub ports: usize,
    pub duplex: bool,
    bank_cals: Vec<Calendar>,
    port_cals: Vec<Calendar>,
    pub bytes_read: u64,
    pub bytes_written: u64,
}

impl BankedMemory {
    pub fn new(name: &'static str, size: u64, banks: usize, word_bytes: u64, ports: usize, duplex: bool) -> Self {
        let slots = Self::slots(ports, duplex);
        Self {
            name,
            size,
            banks,
            word_bytes,
            ports,
            duplex,
            bank_cals: vec![Calendar::new(); slots * banks],
            port_cals: vec![Calendar::new(); slots],
            bytes_read: 0,
            bytes_written: 0,
        }
    }

    /// Summed (requests, conflicts, conflict cycles) over the bank calendars.
    pub fn bank_conflicts(&self) -> ConflictCount {
        ConflictCount::sum(&self.bank_cals)
    }

    fn slots(ports: usize, duplex: bool) -> usize {
        if duplex {
            ports * 2
        } else {
            ports
        }
    }

    fn slot(&self, port: usize, dir: Direction) -> usize {
        assert!(port < self.ports, "{}: no port {port}", self.name);
        if self.duplex {
            port * 2 + usize::from(dir == Direction::Write)
        } else {
            port
        }
    }

    /// Word-interleaved bank of a byte offset.
    pub fn bank_of(&self, offset: u64) -> usize {
        ((offset / self.word_bytes) % self.banks as u64) as usize
    }

    fn account(&mut self, dir: Direction, bytes: u64) {
        match dir {
            Direction::Read => self.bytes_read += bytes,
            Direction::Write => self.bytes_written += bytes,
        }
    }

    pub fn bank_calendar(&mut self, port: usize, dir: Direction, bank: usize) -> &mut Calendar {
        let s = self.slot(port, dir);
        &mut self.bank_cals[s * self.banks + bank]
    }

    pub fn port_calendar(&mut self, port: usize, dir: Direction) -> &mut Calendar {
        let s = self.slot(port, dir);
        &mut self.port_cals[s]
    }

    /// Books the banks touched by `[offset, offset+len)`; every word is
    /// served independently at its bank's first free cycle `>= at`.
    /// Returns the last cycle used.
    pub fn reserve_words(&mut self, port: usize, dir: Direction, offset: u64, len: u64, at: SimTime) -> SimTime {
        debug_assert!(len > 0);
        self.account(dir, len);
        let first = offset / self.word_bytes;
        let last = (offset + len - 1) / self.word_bytes;
        let mut done = at;
        for w in first..=last {
            let bank = (w % self.banks as u64) as usize;
            let c = self.bank_calendar(port, dir, bank).reserve(at);
            done = done.max(c);
        }
        done
    }

    /// One beat through a port: books the port issue slot and the bank of a
    /// single wide word in the same cycle, plus any `extra` calendars
    /// (interconnect links). Returns the cycle used.
    pub fn reserve_beat(
        &mut self,
        port: usize,
        dir: Direction,
        offset: u64,
        at: SimTime,
        extra: &mut [&mut Calendar],
    ) -> SimTime {
        let beat_bytes = self.word_bytes;
        self.account(dir, beat_bytes);
        let s = self.slot(port, dir);
        let bank = self.bank_of(offset);
        let banks = self.banks;
        let (port_cal, bank_cal) = {
            // Distinct vectors, so both borrows are disjoint.
            let p = &mut self.port_cals[s];
            let b = &mut self.bank_cals[s * banks + bank];
            (p, b)
        };
        let mut cals: Vec<&mut Calendar> = Vec::with_capacity(2 + extra.len());
        cals.push(port_cal);
        cals.push(bank_cal);
        for e in extra.iter_mut() {
            cals.push(&mut **e);
        }
        reserve_joint(&mut cals, at)
    }

    pub fn conflicts(&self) -> u64 {
        self.bank_cals.iter().map(|c| c.conflicts).sum()
    }

    pub fn conflict_cycles(&self) -> u64 {
        self.bank_cals.iter().map(|c| c.conflict_cycles).sum()
    }

    pub fn prune(&mut self, floor: SimTime) {
        for c in self.bank_cals.iter_mut().chain(self.port_cals.iter_mut()) {
            c.prune(floor);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l2_pkt() -> BankedMemory {
        BankedMemory::new("l2_pkt", 4 << 20, 32, 64, 2, true)
    }

    #[test]
    fn single_wide_word_write_takes_one_cycle() {
        let mut m = l2_pkt();
        let c = m.reserve_beat(0, Direction::Write, 0, 10, &mut []);
        assert_eq!(c, 10);
        assert_eq!(m.bank_of(0), 0);
        assert_eq!(m.bank_of(64 * 33), 1);
    }

    #[test]
    fn same_bank_same_port_serializes() {
        let mut m = l2_pkt();
        let a = m.reserve_beat(1, Direction::Read, 0, 5, &mut []);
        let b = m.reserve_beat(1, Direction::Read, 64 * 32, 5, &mut []);
        assert_eq!((a, b), (5, 6));
    }

    #[test]
    fn directions_and_ports_are_independent() {
        let mut m = l2_pkt();
        let a = m.reserve_beat(0, Direction::Write, 0, 5, &mut []);
        let b = m.reserve_beat(0, Direction::Read, 0, 5, &mut []);
        let c = m.reserve_beat(1, Direction::Read, 0, 5, &mut []);
        assert_eq!((a, b, c), (5, 5, 5));
    }

    #[test]
    fn sustained_stream_is_one_word_per_cycle() {
        let mut m = l2_pkt();
        let mut last = 0;
        for i in 0..1000u64 {
            last = m.reserve_beat(0, Direction::Write, i * 64, 0, &mut []);
        }
        // 1000 beats of 512 bit in 1000 cycles = 512 Gbit/s.
        assert_eq!(last + 1, 1000);
        assert_eq!(m.conflicts(), 999);
    }

    #[test]
    fn tcdm_words_spread_over_banks() {
        let mut l1 = BankedMemory::new("l1", 1 << 20, 64, 4, 1, false);
        // A 64 B wide access touches 16 distinct banks in one cycle.
        assert_eq!(l1.reserve_words(0, Direction::Read, 0, 64, 3), 3);
        // A word in one of those banks now waits a cycle.
        assert_eq!(l1.reserve_words(0, Direction::Write, 8, 4, 3), 4);
        // A word in an untouched bank does not.
        assert_eq!(l1.reserve_words(0, Direction::Write, 64, 4, 3), 3);
    }
}
