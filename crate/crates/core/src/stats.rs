//! Run statistics: per-task timing records, counters and derived metrics.

use std::collections::BTreeMap;

use crate::engine::SimTime;
use crate::types::{MsgId, Outcome, TaskKind};

/// Timeline of one task, from HER arrival to notification.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskRecord {
    pub task_id: u64,
    pub kind: TaskKind,
    pub msg_id: MsgId,
    /// Trace index of the packet (none for completion tasks).
    pub pkt_index: Option<usize>,
    pub size_bytes: u32,
    pub cluster: Option<usize>,
    pub hpu: Option<usize>,
    pub her_arrival: SimTime,
    pub dispatched: SimTime,
    pub dma_start: SimTime,
    pub dma_done: SimTime,
    pub assigned: SimTime,
    pub handler_start: SimTime,
    pub handler_end: SimTime,
    pub done: SimTime,
    pub notified: SimTime,
    pub outcome: Outcome,
    pub compute_cycles: u64,
    pub mem_cycles: u64,
    pub commands: u32,
}

impl TaskRecord {
    pub fn latency(&self) -> SimTime {
        self.notified - self.her_arrival
    }

    /// HER arrival to task arrival at the cluster.
    pub fn to_csched(&self) -> SimTime {
        self.dma_start - self.her_arrival
    }

    pub fn dma(&self) -> SimTime {
        self.dma_done - self.dma_start
    }

    pub fn assign(&self) -> SimTime {
        (self.assigned + 1).saturating_sub(self.dma_done)
    }

    pub fn handler(&self) -> SimTime {
        self.done - self.handler_start
    }

    /// Runtime invocation plus handler bodies.
    pub fn handler_run(&self) -> SimTime {
        self.handler_end - self.handler_start
    }

    pub fn doorbell(&self) -> SimTime {
        self.done - self.handler_end
    }

    pub fn notify(&self) -> SimTime {
        self.notified - self.done
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct HpuStats {
    pub busy_cycles: u64,
    pub tasks: u64,
}

/// Counters collected over a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Stats {
    pub records: Vec<TaskRecord>,
    pub keep_records: bool,
    pub hpus: Vec<HpuStats>,
    /// Maximum number of HPUs running a task in the same cycle.
    pub peak_busy_hpus: usize,
    pub packets_injected: u64,
    pub packets_processed: u64,
    pub payload_bytes: u64,
    pub first_injection: Option<SimTime>,
    pub last_notification: SimTime,
    pub tasks_by_outcome: [u64; 4],
    pub tasks_by_kind: [u64; 3],
    pub resets: u64,
    pub immediate_notifications: u64,
    pub feedback_wait_max: SimTime,
    pub merge_wait_max: SimTime,
    /// Throughput series: payload bytes notified per window.
    pub window: SimTime,
    pub series: Vec<u64>,
    /// Cycles after the first injection excluded from steady-state throughput.
    pub warmup: SimTime,
    steady_bytes: u64,
    busy_delta: BTreeMap<SimTime, i64>,
    latencies: Vec<SimTime>,
    latency_sum: u128,
    latency_max: SimTime,
    latency_count: u64,
}

pub fn outcome_index(o: Outcome) -> usize {
    match o {
        Outcome::Ok => 0,
        Outcome::ProtectionFault => 1,
        Outcome::WatchdogKill => 2,
        Outcome::Dropped => 3,
    }
}

pub fn kind_index(k: TaskKind) -> usize {
    match k {
        TaskKind::Header => 0,
        TaskKind::Payload => 1,
        TaskKind::Completion => 2,
    }
}

impl Stats {
    pub fn new(total_hpus: usize, keep_records: bool, window: SimTime) -> Self {
        Self {
            keep_records,
            hpus: vec![HpuStats::default(); total_hpus],
            window: window.max(1),
            ..Default::default()
        }
    }

    pub fn record(&mut self, r: TaskRecord) {
        self.tasks_by_outcome[outcome_index(r.outcome)] += 1;
        self.tasks_by_kind[kind_index(r.kind)] += 1;
        self.last_notification = self.last_notification.max(r.notified);
        if r.pkt_index.is_some() {
            self.packets_processed += 1;
            self.payload_bytes += u64::from(r.size_bytes);
            let w = (r.notified / self.window) as usize;
            if self.series.len() <= w {
                self.series.resize(w + 1, 0);
            }
            self.series[w] += u64::from(r.size_bytes);
            if r.notified >= self.steady_start() {
                self.steady_bytes += u64::from(r.size_bytes);
            }
            if r.outcome == Outcome::Ok {
                let l = r.latency();
                self.latencies.push(l);
                self.latency_sum += u128::from(l);
                self.latency_max = self.latency_max.max(l);
                self.latency_count += 1;
            }
        }
        if self.keep_records {
            self.records.push(r);
        }
    }

    /// Marks one HPU busy over `[start, end)`.
    pub fn busy_interval(&mut self, start: SimTime, end: SimTime) {
        if end > start {
            *self.busy_delta.entry(start).or_default() += 1;
            *self.busy_delta.entry(end).or_default() -= 1;
        }
    }

    /// Computes the peak concurrency from the busy intervals.
    pub fn finalize(&mut self) {
        let mut cur = 0i64;
        let mut peak = 0i64;
        for d in self.busy_delta.values() {
            cur += d;
            peak = peak.max(cur);
        }
        self.peak_busy_hpus = peak as usize;
    }

    pub fn mean_latency(&self) -> f64 {
        if self.latency_count == 0 {
            0.0
        } else {
            self.latency_sum as f64 / self.latency_count as f64
        }
    }

    pub fn max_latency(&self) -> SimTime {
        self.latency_max
    }

    /// Nearest-rank percentile of packet latency, `p` in `[0, 100]`.
    pub fn latency_percentile(&self, p: f64) -> SimTime {
        if self.latencies.is_empty() {
            return 0;
        }
        let mut v = self.latencies.clone();
        v.sort_unstable();
        let rank = ((p / 100.0) * v.len() as f64).ceil() as usize;
        v[rank.clamp(1, v.len()) - 1]
    }

    fn steady_start(&self) -> SimTime {
        self.first_injection.unwrap_or(0) + self.warmup
    }

    /// Throughput counting only notifications after the warm-up window.
    pub fn steady_throughput_gbps(&self) -> f64 {
        let span = self.last_notification.saturating_sub(self.steady_start()).max(1);
        self.steady_bytes as f64 * 8.0 / span as f64
    }

    /// Cycles from the first packet's arrival to the last notification.
    pub fn elapsed(&self) -> SimTime {
        self.last_notification
            .saturating_sub(self.first_injection.unwrap_or(0))
            .max(1)
    }

    /// Payload throughput in Gbit/s (bits per ns).
    pub fn throughput_gbps(&self) -> f64 {
        self.payload_bytes as f64 * 8.0 / self.elapsed() as f64
    }

    /// HPUs that ran at least one task.
    pub fn hpus_used(&self) -> usize {
        self.hpus.iter().filter(|h| h.tasks > 0).count()
    }

    pub fn busy_cycles(&self) -> u64 {
        self.hpus.iter().map(|h| h.busy_cycles).sum()
    }

    /// Average number of busy HPUs over the run.
    pub fn mean_busy_hpus(&self) -> f64 {
        self.busy_cycles() as f64 / self.elapsed() as f64
    }

    pub fn count(&self, o: Outcome) -> u64 {
        self.tasks_by_outcome[outcome_index(o)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(her: SimTime, notified: SimTime, size: u32) -> TaskRecord {
        TaskRecord {
            task_id: 0,
            kind: TaskKind::Payload,
            msg_id: MsgId(0),
            pkt_index: Some(0),
            size_bytes: size,
            cluster: Some(0),
            hpu: Some(0),
            her_arrival: her,
            dispatched: her,
            dma_start: her + 3,
            dma_done: her + 15,
            assigned: her + 15,
            handler_start: her + 16,
            handler_end: her + 23,
            done: her + 24,
            notified,
            outcome: Outcome::Ok,
            compute_cycles: 0,
            mem_cycles: 0,
            commands: 0,
        }
    }

    #[test]
    fn breakdown_columns() {
        let r = rec(100, 126, 64);
        assert_eq!(
            (r.to_csched(), r.dma(), r.assign(), r.notify(), r.latency()),
            (3, 12, 1, 2, 26)
        );
    }

    #[test]
    fn peak_busy_counts_overlap() {
        let mut s = Stats::new(4, false, 100);
        s.busy_interval(0, 10);
        s.busy_interval(5, 15);
        s.busy_interval(10, 20);
        s.busy_interval(12, 13);
        s.finalize();
        assert_eq!(s.peak_busy_hpus, 3);
    }

    #[test]
    fn throughput_and_series() {
        let mut s = Stats::new(1, false, 100);
        s.first_injection = Some(0);
        s.record(rec(0, 50, 64));
        s.record(rec(0, 160, 64));
        assert_eq!(s.series, vec![64, 64]);
        assert!((s.throughput_gbps() - 128.0 * 8.0 / 160.0).abs() < 1e-9);
        assert_eq!(s.mean_latency(), 105.0);
        assert!(s.records.is_empty());
        assert_eq!(s.latency_percentile(50.0), 50);
        assert_eq!(s.latency_percentile(100.0), 160);
    }

    #[test]
    fn warmup_excludes_early_notifications() {
        let mut s = Stats::new(1, false, 100);
        s.first_injection = Some(0);
        s.warmup = 100;
        s.record(rec(0, 50, 64));
        s.record(rec(0, 150, 64));
        s.record(rec(0, 200, 64));
        assert!((s.steady_throughput_gbps() - 128.0 * 8.0 / 100.0).abs() < 1e-9);
    }
}
