//! CSV output of a finished run. Every file carries a `schema_version`
//! column; rows are written in a fixed order so that identical runs give
//! byte-identical files. Column meanings are listed in `docs/csv.md`.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::SimError;
use crate::sim::Simulator;
use crate::stats::{Stats, TaskRecord};
use crate::types::Outcome;

pub const SCHEMA_VERSION: u32 = 1;

pub const PACKETS_CSV: &str = "packets.csv";
pub const SERIES_CSV: &str = "series.csv";
pub const HPUS_CSV: &str = "hpus.csv";
pub const COUNTERS_CSV: &str = "counters.csv";
pub const SUMMARY_CSV: &str = "summary.csv";

fn opt(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn f4(x: f64) -> String {
    format!("{x:.4}")
}

const PACKET_COLUMNS: [&str; 27] = [
    "schema_version",
    "task_id",
    "kind",
    "msg_id",
    "pkt_index",
    "size_bytes",
    "cluster",
    "hpu",
    "her_arrival",
    "dispatched",
    "dma_start",
    "dma_done",
    "assigned",
    "handler_start",
    "handler_end",
    "done",
    "notified",
    "outcome",
    "latency",
    "her_to_csched",
    "dma",
    "assign",
    "handler_run",
    "doorbell",
    "notify",
    "compute_cycles",
    "mem_cycles",
];

fn packet_row(r: &TaskRecord) -> Vec<String> {
    vec![
        SCHEMA_VERSION.to_string(),
        r.task_id.to_string(),
        r.kind.as_str().to_string(),
        r.msg_id.0.to_string(),
        opt(r.pkt_index),
        r.size_bytes.to_string(),
        opt(r.cluster),
        opt(r.hpu),
        r.her_arrival.to_string(),
        r.dispatched.to_string(),
        r.dma_start.to_string(),
        r.dma_done.to_string(),
        r.assigned.to_string(),
        r.handler_start.to_string(),
        r.handler_end.to_string(),
        r.done.to_string(),
        r.notified.to_string(),
        r.outcome.as_str().to_string(),
        r.latency().to_string(),
        r.to_csched().to_string(),
        r.dma().to_string(),
        r.assign().to_string(),
        r.handler_run().to_string(),
        r.doorbell().to_string(),
        r.notify().to_string(),
        r.compute_cycles.to_string(),
        r.mem_cycles.to_string(),
    ]
}

/// One row per task, ordered by notification time then task id.
pub fn write_packets<W: Write>(w: W, stats: &Stats) -> Result<(), SimError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(PACKET_COLUMNS)?;
    let mut recs: Vec<&TaskRecord> = stats.records.iter().collect();
    recs.sort_by_key(|r| (r.notified, r.task_id));
    for r in recs {
        out.write_record(packet_row(r))?;
    }
    out.flush()?;
    Ok(())
}

/// Payload throughput per window of `stats.window` cycles.
pub fn write_series<W: Write>(w: W, stats: &Stats) -> Result<(), SimError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["schema_version", "window_start", "window_cycles", "bytes", "gbps"])?;
    for (i, &b) in stats.series.iter().enumerate() {
        out.write_record([
            SCHEMA_VERSION.to_string(),
            (i as u64 * stats.window).to_string(),
            stats.window.to_string(),
            b.to_string(),
            f4(b as f64 * 8.0 / stats.window as f64),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Per-HPU task counts and utilization over the measured span.
pub fn write_hpus<W: Write>(w: W, sim: &Simulator) -> Result<(), SimError> {
    let stats = sim.stats();
    let per_cluster = sim.config().hpus_per_cluster;
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "schema_version",
        "cluster",
        "hpu",
        "tasks",
        "busy_cycles",
        "utilization",
    ])?;
    for (i, h) in stats.hpus.iter().enumerate() {
        out.write_record([
            SCHEMA_VERSION.to_string(),
            (i / per_cluster).to_string(),
            (i % per_cluster).to_string(),
            h.tasks.to_string(),
            h.busy_cycles.to_string(),
            f4(h.busy_cycles as f64 / stats.elapsed() as f64),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Named counters, in a fixed order.
pub fn counters(sim: &Simulator) -> Vec<(String, u64)> {
    let mut c: Vec<(String, u64)> = Vec::new();
    let nic = &sim.inbound().counters;
    c.push(("inbound.hers".into(), nic.hers));
    c.push(("inbound.bypassed".into(), nic.bypassed));
    c.push(("inbound.dropped".into(), nic.dropped));
    c.push(("inbound.stalls".into(), nic.stalls));
    let mut stalls: Vec<_> = nic.stall_cycles.iter().map(|(r, &v)| (r.as_str(), v)).collect();
    stalls.sort();
    for (r, v) in stalls {
        c.push((format!("inbound.stall_cycles.{r}"), v));
    }
    let sched = &sim.scheduler().counters;
    c.push(("scheduler.tasks".into(), sched.tasks));
    c.push(("scheduler.resets".into(), sched.resets));
    c.push(("scheduler.dropped_hers".into(), sched.dropped_hers));
    c.push(("scheduler.max_pending".into(), sched.max_pending as u64));
    let d = sim.dispatcher();
    c.push(("dispatcher.dispatched".into(), d.dispatched));
    c.push(("dispatcher.blocked_attempts".into(), d.blocked_attempts));
    c.push(("dispatcher.max_depth".into(), d.max_depth as u64));
    for cl in sim.clusters() {
        c.push((format!("cluster{}.accepted", cl.id), cl.accepted));
        c.push((format!("cluster{}.refused", cl.id), cl.refused));
    }
    for e in sim.engines() {
        let k = e.kind.as_str();
        c.push((format!("engine.{k}.commands"), e.commands));
        c.push((format!("engine.{k}.bytes"), e.bytes));
        c.push((format!("engine.{k}.from_l1"), e.from_l1));
        c.push((format!("engine.{k}.from_l2"), e.from_l2));
    }
    for (name, cc) in sim.mem.conflict_counters() {
        c.push((format!("mem.{name}.requests"), cc.requests));
        c.push((format!("mem.{name}.conflicts"), cc.conflicts));
        c.push((format!("mem.{name}.conflict_cycles"), cc.conflict_cycles));
    }
    c.push(("sim.events".into(), sim.events_fired()));
    c
}

pub fn write_counters<W: Write>(w: W, sim: &Simulator) -> Result<(), SimError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["schema_version", "counter", "value"])?;
    for (k, v) in counters(sim) {
        out.write_record([SCHEMA_VERSION.to_string(), k, v.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// Headline numbers of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub packets: u64,
    pub payload_bytes: u64,
    pub elapsed_cycles: u64,
    pub throughput_gbps: f64,
    pub steady_throughput_gbps: f64,
    pub mean_latency: f64,
    pub p50_latency: u64,
    pub p99_latency: u64,
    pub max_latency: u64,
    pub peak_busy_hpus: usize,
    pub mean_busy_hpus: f64,
    pub hpus_used: usize,
    pub tasks_ok: u64,
    pub protection_faults: u64,
    pub watchdog_kills: u64,
    pub dropped: u64,
    pub resets: u64,
}

impl Summary {
    pub const COLUMNS: [&'static str; 17] = [
        "packets",
        "payload_bytes",
        "elapsed_cycles",
        "throughput_gbps",
        "steady_throughput_gbps",
        "mean_latency",
        "p50_latency",
        "p99_latency",
        "max_latency",
        "peak_busy_hpus",
        "mean_busy_hpus",
        "hpus_used",
        "tasks_ok",
        "protection_faults",
        "watchdog_kills",
        "dropped",
        "resets",
    ];

    pub fn of(stats: &Stats) -> Self {
        Self {
            packets: stats.packets_processed,
            payload_bytes: stats.payload_bytes,
            elapsed_cycles: stats.elapsed(),
            throughput_gbps: stats.throughput_gbps(),
            steady_throughput_gbps: stats.steady_throughput_gbps(),
            mean_latency: stats.mean_latency(),
            p50_latency: stats.latency_percentile(50.0),
            p99_latency: stats.latency_percentile(99.0),
            max_latency: stats.max_latency(),
            peak_busy_hpus: stats.peak_busy_hpus,
            mean_busy_hpus: stats.mean_busy_hpus(),
            hpus_used: stats.hpus_used(),
            tasks_ok: stats.count(Outcome::Ok),
            protection_faults: stats.count(Outcome::ProtectionFault),
            watchdog_kills: stats.count(Outcome::WatchdogKill),
            dropped: stats.count(Outcome::Dropped),
            resets: stats.resets,
        }
    }

    pub fn values(&self) -> Vec<String> {
        vec![
            self.packets.to_string(),
            self.payload_bytes.to_string(),
            self.elapsed_cycles.to_string(),
            f4(self.throughput_gbps),
            f4(self.steady_throughput_gbps),
            f4(self.mean_latency),
            self.p50_latency.to_string(),
            self.p99_latency.to_string(),
            self.max_latency.to_string(),
            self.peak_busy_hpus.to_string(),
            f4(self.mean_busy_hpus),
            self.hpus_used.to_string(),
            self.tasks_ok.to_string(),
            self.protection_faults.to_string(),
            self.watchdog_kills.to_string(),
            self.dropped.to_string(),
            self.resets.to_string(),
        ]
    }
}

/// Summary table with leading label columns, one row per run.
pub struct SummaryTable {
    labels: Vec<String>,
    rows: Vec<(Vec<String>, Summary)>,
}

impl SummaryTable {
    pub fn new(labels: &[&str]) -> Self {
        Self {
            labels: labels.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, labels: Vec<String>, s: Summary) {
        assert_eq!(labels.len(), self.labels.len(), "label count");
        self.rows.push((labels, s));
    }

    pub fn rows(&self) -> &[(Vec<String>, Summary)] {
        &self.rows
    }

    pub fn write<W: Write>(&self, w: W) -> Result<(), SimError> {
        let mut out = csv::Writer::from_writer(w);
        let mut head = vec!["schema_version".to_string()];
        head.extend(self.labels.iter().cloned());
        head.extend(Summary::COLUMNS.iter().map(|s| s.to_string()));
        out.write_record(&head)?;
        for (l, s) in &self.rows {
            let mut row = vec![SCHEMA_VERSION.to_string()];
            row.extend(l.iter().cloned());
            row.extend(s.values());
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Writes the full CSV set of one run into `dir`.
pub fn write_run(dir: &Path, sim: &Simulator, labels: &[(&str, String)]) -> Result<(), SimError> {
    fs::create_dir_all(dir)?;
    let stats = sim.stats();
    if stats.keep_records {
        write_packets(fs::File::create(dir.join(PACKETS_CSV))?, stats)?;
    }
    write_series(fs::File::create(dir.join(SERIES_CSV))?, stats)?;
    write_hpus(fs::File::create(dir.join(HPUS_CSV))?, sim)?;
    write_counters(fs::File::create(dir.join(COUNTERS_CSV))?, sim)?;
    let names: Vec<&str> = labels.iter().map(|(k, _)| *k).collect();
    let mut t = SummaryTable::new(&names);
    t.push(labels.iter().map(|(_, v)| v.clone()).collect(), Summary::of(stats));
    t.write(fs::File::create(dir.join(SUMMARY_CSV))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_columns_match_values() {
        let s = Summary::of(&Stats::new(1, false, 10));
        assert_eq!(s.values().len(), Summary::COLUMNS.len());
    }

    #[test]
    fn table_prefixes_schema_and_labels() {
        let mut t = SummaryTable::new(&["size"]);
        t.push(vec!["64".into()], Summary::of(&Stats::new(1, false, 10)));
        let mut buf = Vec::new();
        t.write(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("schema_version,size,packets,"));
        assert!(lines.next().unwrap().starts_with("1,64,0,"));
    }
}
