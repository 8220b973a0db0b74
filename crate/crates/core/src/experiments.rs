//! Experiment presets: named parameter grids over workloads and
//! configurations. Each grid point is an independent simulation.

use crate::config::PsPinConfig;
use crate::error::SimError;
use crate::handlers::{build, Source, WorkloadSpec};
use crate::report::Summary;
use crate::sim::Simulator;

pub const PRESETS: [&str; 5] = ["latency", "inbound", "outbound", "workloads", "scaling"];

pub const PACKET_SIZES: [u32; 5] = [64, 128, 256, 512, 1024];
pub const INSTRUCTIONS: [u64; 8] = [0, 16, 32, 64, 128, 256, 512, 1024];
pub const THROUGHPUT_WORKLOADS: [&str; 6] = [
    "reduce",
    "aggregate",
    "histogram",
    "filtering",
    "kvstore",
    "strided_ddt",
];

/// Packets per synthetic throughput point.
const SYNTHETIC_PACKETS: u64 = 20_000;
/// Ingress rate of the outbound and workload presets, Gbit/s.
const LINE_RATE: f64 = 400.0;

#[derive(Debug, Clone)]
pub struct GridPoint {
    pub preset: &'static str,
    /// Swept values, in the preset's column order.
    pub labels: Vec<(&'static str, String)>,
    pub config: PsPinConfig,
    pub workload: WorkloadSpec,
    pub keep_records: bool,
}

impl GridPoint {
    /// Directory-safe name built from the label values.
    pub fn dir_name(&self) -> String {
        self.labels
            .iter()
            .map(|(k, v)| format!("{k}-{v}"))
            .collect::<Vec<_>>()
            .join("_")
    }

    pub fn label_names(&self) -> Vec<&'static str> {
        self.labels.iter().map(|(k, _)| *k).collect()
    }

    pub fn label_values(&self) -> Vec<String> {
        self.labels.iter().map(|(_, v)| v.clone()).collect()
    }
}

pub struct PointResult {
    pub sim: Simulator,
    pub summary: Summary,
    /// Outcome of the workload's functional check.
    pub verified: Result<(), String>,
}

fn spec(name: &str) -> WorkloadSpec {
    WorkloadSpec::preset(name).expect("committed workload files parse")
}

fn synthetic(size: u32, x: u64, misaligned: bool, packets: u64) -> WorkloadSpec {
    let mut s = spec("synthetic");
    s.packet_bytes = size;
    s.instructions = x;
    s.misaligned = misaligned;
    s.messages = packets;
    s
}

fn at_rate(gbps: f64) -> PsPinConfig {
    PsPinConfig {
        injection_gbps: gbps,
        ..PsPinConfig::default()
    }
}

/// The grid of `preset`, in output order.
pub fn grid(preset: &str) -> Result<Vec<GridPoint>, SimError> {
    let mut pts = Vec::new();
    let point = |preset, labels, config, workload, keep_records| GridPoint {
        preset,
        labels,
        config,
        workload,
        keep_records,
    };
    match preset {
        "latency" => {
            for size in PACKET_SIZES {
                pts.push(point(
                    "latency",
                    vec![("packet_bytes", size.to_string())],
                    PsPinConfig::default(),
                    synthetic(size, 0, false, 1),
                    true,
                ));
            }
        }
        "inbound" => {
            for misaligned in [false, true] {
                for size in PACKET_SIZES {
                    for x in INSTRUCTIONS {
                        pts.push(point(
                            "inbound",
                            vec![
                                ("packet_bytes", size.to_string()),
                                ("misaligned", misaligned.to_string()),
                                ("instructions", x.to_string()),
                            ],
                            PsPinConfig::default(),
                            synthetic(size, x, misaligned, SYNTHETIC_PACKETS),
                            false,
                        ));
                    }
                }
            }
        }
        "outbound" => {
            for name in ["pingpong", "dma_to_host"] {
                for source in [Source::L1, Source::L2] {
                    for size in PACKET_SIZES {
                        let mut w = spec(name);
                        w.packet_bytes = size;
                        w.source = source;
                        pts.push(point(
                            "outbound",
                            vec![
                                ("workload", name.to_string()),
                                ("source", source.as_str().to_string()),
                                ("packet_bytes", size.to_string()),
                            ],
                            at_rate(LINE_RATE),
                            w,
                            false,
                        ));
                    }
                }
            }
        }
        "workloads" => {
            for name in THROUGHPUT_WORKLOADS {
                for size in PACKET_SIZES {
                    let mut w = spec(name);
                    w.packet_bytes = size;
                    pts.push(point(
                        "workloads",
                        vec![("workload", name.to_string()), ("packet_bytes", size.to_string())],
                        at_rate(LINE_RATE),
                        w,
                        false,
                    ));
                }
            }
        }
        "scaling" => {
            for clusters in [1usize, 2, 4, 8] {
                for size in [64u32, 512] {
                    for x in [0u64, 256] {
                        let cfg = PsPinConfig {
                            num_clusters: clusters,
                            ..PsPinConfig::default()
                        };
                        pts.push(point(
                            "scaling",
                            vec![
                                ("clusters", clusters.to_string()),
                                ("packet_bytes", size.to_string()),
                                ("instructions", x.to_string()),
                            ],
                            cfg,
                            synthetic(size, x, false, SYNTHETIC_PACKETS),
                            false,
                        ));
                    }
                }
            }
        }
        other => {
            return Err(SimError::InvalidArgument(format!(
                "unknown preset `{other}` (known: {})",
                PRESETS.join(", ")
            )))
        }
    }
    Ok(pts)
}

/// Runs one simulation of `workload` on `config` and checks its result.
pub fn run_workload(
    config: PsPinConfig,
    workload: &WorkloadSpec,
    keep_records: bool,
    warmup_cycles: u64,
) -> Result<PointResult, SimError> {
    let config = config.validated()?;
    let w = build(workload, &config)?;
    let mut opts = w.options();
    opts.keep_records = keep_records;
    opts.warmup_cycles = warmup_cycles;
    let mut sim = w.simulator(config, opts)?;
    sim.run()?;
    let verified = w.verify(&sim);
    let summary = Summary::of(sim.stats());
    Ok(PointResult { sim, summary, verified })
}

pub fn run_point(p: &GridPoint) -> Result<PointResult, SimError> {
    run_workload(p.config.clone(), &p.workload, p.keep_records, 0)
}
