use std::collections::BTreeMap;

use crate::engine::SimTime;

/// Per-cycle reservation table for a resource that serves one request per
/// cycle (a bank, a port direction, a link).
///
/// Requests may be reserved out of time order: a handler executing
/// synchronously books its accesses ahead of the global clock, and a later
/// event can still claim an earlier free cycle. Busy cycles are kept as
/// disjoint, non-adjacent half-open intervals.
#[derive(Debug, Default, Clone)]
pub struct Calendar {
    busy: BTreeMap<SimTime, SimTime>,
    pub requests: u64,
    /// Requests that could not be served in the cycle they asked for.
    pub conflicts: u64,
    pub conflict_cycles: u64,
}

impl Calendar {
    pub fn new() -> Self {
        Self::default()
    }

    /// Earliest cycle `>= t` not yet reserved.
    pub fn first_free(&self, t: SimTime) -> SimTime {
        match self.busy.range(..=t).next_back() {
            Some((_, &end)) if end > t => end,
            _ => t,
        }
    }

    pub fn is_free(&self, t: SimTime) -> bool {
        self.first_free(t) == t
    }

    /// Reserves the first free cycle at or after `t` and returns it.
    pub fn reserve(&mut self, t: SimTime) -> SimTime {
        let c = self.first_free(t);
        self.requests += 1;
        if c > t {
            self.conflicts += 1;
            self.conflict_cycles += c - t;
        }
        self.mark(c);
        c
    }

    /// Marks cycle `c` busy; `c` must be free.
    pub(crate) fn mark(&mut self, c: SimTime) {
        debug_assert!(self.is_free(c));
        let left = self
            .busy
            .range(..c)
            .next_back()
            .filter(|(_, &e)| e == c)
            .map(|(&s, _)| s);
        let right_end = self.busy.remove(&(c + 1));
        let end = right_end.unwrap_or(c + 1);
        match left {
            Some(s) => {
                self.busy.insert(s, end);
            }
            None => {
                self.busy.insert(c, end);
            }
        }
    }

    /// Drops bookkeeping for cycles strictly before `floor`.
    pub fn prune(&mut self, floor: SimTime) {
        while let Some((&s, &e)) = self.busy.first_key_value() {
            if e <= floor {
                self.busy.remove(&s);
            } else {
                break;
            }
        }
    }

    pub fn intervals(&self) -> usize {
        self.busy.len()
    }

    /// Number of reserved cycles in `[from, to)`.
    pub fn busy_cycles_in(&self, from: SimTime, to: SimTime) -> u64 {
        self.busy
            .iter()
            .map(|(&s, &e)| e.min(to).saturating_sub(s.max(from)))
            .sum()
    }
}

/// Reserves one cycle `>= t` that is free in every calendar at once.
pub fn reserve_joint(cals: &mut [&mut Calendar], t: SimTime) -> SimTime {
    let mut c = t;
    loop {
        let m = cals.iter().map(|cal| cal.first_free(c)).max().unwrap_or(c);
        if cals.iter().all(|cal| cal.is_free(m)) {
            for cal in cals.iter_mut() {
                cal.requests += 1;
                if m > t {
                    cal.conflicts += 1;
                    cal.conflict_cycles += m - t;
                }
                cal.mark(m);
            }
            return m;
        }
        c = m;
    }
}
