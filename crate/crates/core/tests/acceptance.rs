//! Acceptance runner: checks every headline criterion at its stated
//! tolerance and prints one PASS/FAIL line per criterion.
//!
//! Criteria listed in `KNOWN_UNMET` are reported as FAIL without failing the
//! run; README.md ("Known deviations") explains why each cannot be met
//! together with the others. Any other failure exits nonzero.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::cases;
use pspin_sim::analysis::{budget_ns, littles_buffer_bytes, max_throughput_gbps};
use pspin_sim::experiments::{run_workload, PointResult};
use pspin_sim::handlers::{Source, WorkloadSpec};
use pspin_sim::report::{self, Summary, SummaryTable};
use pspin_sim::PsPinConfig;

const KNOWN_UNMET: [&str; 1] = ["hpu-utilization"];

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn synthetic(size: u32, x: u64, packets: u64) -> WorkloadSpec {
    let mut s = WorkloadSpec::preset("synthetic").unwrap();
    s.packet_bytes = size;
    s.instructions = x;
    s.messages = packets;
    s
}

fn run(cfg: PsPinConfig, w: &WorkloadSpec, records: bool) -> Result<PointResult, String> {
    let r = run_workload(cfg, w, records, 0).map_err(|e| format!("{} {} B: {e}", w.name, w.packet_bytes))?;
    r.verified
        .as_ref()
        .map_err(|e| format!("{} {} B: {e}", w.name, w.packet_bytes))?;
    Ok(r)
}

fn at_rate(gbps: f64) -> PsPinConfig {
    PsPinConfig {
        injection_gbps: gbps,
        ..PsPinConfig::default()
    }
}

fn within(x: f64, want: f64, tol: f64) -> bool {
    (x - want).abs() <= tol
}

fn latency() -> Check {
    let t = Instant::now();
    let mut notes = Vec::new();
    let mut bad = Vec::new();
    for (size, total, dma, dma_tol) in [(64u32, 26u64, 12u64, 0u64), (1024, 40, 26, 1)] {
        let r = run(PsPinConfig::default(), &synthetic(size, 0, 1), true)?;
        let rec = &r.sim.stats().records[0];
        let cols = [
            ("latency", rec.latency(), total, 2),
            ("her_to_csched", rec.to_csched(), 3, 0),
            ("dma", rec.dma(), dma, dma_tol),
            ("assign", rec.assign(), 1, 0),
            ("invoke", rec.handler_run(), 7, 0),
            ("doorbell", rec.doorbell(), 1, 0),
        ];
        for (name, got, want, tol) in cols {
            if got.abs_diff(want) > tol {
                bad.push(format!("{size} B {name} {got} (want {want}±{tol})"));
            }
        }
        notes.push(format!("{size} B: {} ns (dma {})", rec.latency(), rec.dma()));
    }
    let el = t.elapsed();
    if el >= Duration::from_secs(1) {
        bad.push(format!("runtime {el:?}"));
    }
    let msg = format!("{}, {el:.2?}", notes.join(", "));
    if bad.is_empty() {
        Ok(msg)
    } else {
        Err(format!("{msg}; {}", bad.join("; ")))
    }
}

fn scheduler_rate() -> Check {
    let t = Instant::now();
    let r = run(PsPinConfig::default(), &synthetic(64, 0, 100_000), false)?;
    let el = t.elapsed();
    let g = r.summary.throughput_gbps;
    let msg = format!("{g:.1} Gbit/s over {} packets, {el:.2?}", r.summary.packets);
    if within(g, 512.0, 512.0 * 0.02) && el < Duration::from_secs(10) && r.summary.packets == 100_000 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn hpu_utilization() -> Check {
    let full = run(PsPinConfig::default(), &synthetic(64, 0, 20_000), false)?;
    // At full rate a 512 B packet arrives every 8 cycles, so two HPUs cover
    // handlers of up to 8 instructions.
    let mut big = Vec::new();
    for x in [0u64, 4, 8] {
        big.push(
            run(PsPinConfig::default(), &synthetic(512, x, 20_000), false)?
                .summary
                .peak_busy_hpus,
        );
    }
    let peak = full.summary.peak_busy_hpus;
    let msg = format!("64 B peak {peak} HPUs (want 19±3); 512 B x∈{{0,4,8}} peaks {big:?} (want ≤2)");
    if peak.abs_diff(19) <= 3 && big.iter().all(|&p| p <= 2) {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn throughput_curve() -> Check {
    let mut worst = (0.0f64, String::new());
    let mut bad = Vec::new();
    for size in [64u32, 512, 1024] {
        for x in [0u64, 64, 256, 1024] {
            let r = run(PsPinConfig::default(), &synthetic(size, x, 20_000), false)?;
            let model = max_throughput_gbps(32, u64::from(size), x, 8, 512.0);
            let err = (r.summary.throughput_gbps - model).abs() / model;
            let label = format!("{size} B x={x}: {:.1} vs {model:.1}", r.summary.throughput_gbps);
            if err > worst.0 {
                worst = (err, label.clone());
            }
            if err > 0.05 {
                bad.push(label);
            }
        }
    }
    let msg = format!("12 points, worst {:.2}% ({})", worst.0 * 100.0, worst.1);
    if bad.is_empty() {
        Ok(msg)
    } else {
        Err(format!("{msg}; off by >5%: {}", bad.join(", ")))
    }
}

fn outbound() -> Check {
    let mut bad = Vec::new();
    let mut notes = Vec::new();
    for name in ["pingpong", "dma_to_host"] {
        let at = |size: u32, src: Source| -> Result<f64, String> {
            let mut w = WorkloadSpec::preset(name).unwrap();
            w.packet_bytes = size;
            w.source = src;
            Ok(run(at_rate(400.0), &w, false)?.summary.throughput_gbps)
        };
        for size in [512u32, 1024] {
            for src in [Source::L1, Source::L2] {
                let g = at(size, src)?;
                if !within(g, 400.0, 20.0) {
                    bad.push(format!("{name} {size} B {}: {g:.1}", src.as_str()));
                }
            }
        }
        let l1 = at(64, Source::L1)?;
        let l2 = at(64, Source::L2)?;
        notes.push(format!("{name} 64 B l1 {l1:.1} l2 {l2:.1}"));
        if l2 < 380.0 {
            bad.push(format!("{name} 64 B l2 {l2:.1} < 380"));
        }
        if !(150.0..=250.0).contains(&l1) || l1 >= 0.6 * l2 {
            bad.push(format!("{name} 64 B l1 {l1:.1} outside [150, 250] or not < 0.6×l2"));
        }
    }
    let msg = notes.join("; ");
    if bad.is_empty() {
        Ok(format!("{msg}; ≥512 B within 400±5%"))
    } else {
        Err(format!("{msg}; {}", bad.join("; ")))
    }
}

fn workloads() -> Check {
    let mut bad = Vec::new();
    let mut notes = Vec::new();
    for (name, floor) in [
        ("filtering", 380.0),
        ("kvstore", 380.0),
        ("strided_ddt", 380.0),
        ("reduce", 200.0),
        ("aggregate", 200.0),
        ("histogram", 200.0),
    ] {
        let mut w = WorkloadSpec::preset(name).unwrap();
        w.packet_bytes = 512;
        let g = run(at_rate(400.0), &w, false)?.summary.throughput_gbps;
        notes.push(format!("{name} {g:.0}"));
        if g < floor {
            bad.push(format!("{name} {g:.1} < {floor}"));
        }
    }
    let msg = notes.join(", ");
    if bad.is_empty() {
        Ok(msg)
    } else {
        Err(format!("{msg}; {}", bad.join("; ")))
    }
}

fn oracles() -> Check {
    let names = ["reduce", "aggregate", "histogram", "strided_ddt", "kvstore"];
    for name in names {
        for seed in 0..100 {
            cases::oracle(name, seed)?;
        }
    }
    Ok(format!("{} × 100 seeds exact", names.join("/")))
}

fn ordering_and_safety() -> Check {
    for seed in 0..1000 {
        cases::ordering(seed).map_err(|e| format!("ordering seed {seed}: {e}"))?;
    }
    for seed in 0..200 {
        cases::backpressure(seed).map_err(|e| format!("backpressure seed {seed}: {e}"))?;
        cases::out_of_bounds(seed).map_err(|e| format!("out-of-bounds seed {seed}: {e}"))?;
        cases::stale_reset(seed, 200 + seed * 17).map_err(|e| format!("stale seed {seed}: {e}"))?;
    }
    for (i, threshold) in [50u64, 51, 100, 999, 1000, 1001, 4096, 20_000].into_iter().enumerate() {
        for step in [1u64, 7, 63] {
            cases::watchdog(threshold, step, i % 2 == 0).map_err(|e| format!("watchdog: {e}"))?;
        }
    }
    Ok("1000 ordering traces; 200 each backpressure/out-of-bounds/stale; watchdog ±1".into())
}

fn closed_forms() -> Check {
    let b = budget_ns(32, 64, 400.0).map_err(|e| e.to_string())?;
    let l = littles_buffer_bytes(800.0, 3000.0).map_err(|e| e.to_string())?;
    let msg = format!("budget {b} ns, littles {l} B");
    if b == 40.96 && l == 300_000.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn csv_bytes(r: &PointResult) -> Vec<u8> {
    let mut out = Vec::new();
    let st = r.sim.stats();
    report::write_packets(&mut out, st).unwrap();
    report::write_series(&mut out, st).unwrap();
    report::write_hpus(&mut out, &r.sim).unwrap();
    report::write_counters(&mut out, &r.sim).unwrap();
    let mut t = SummaryTable::new(&[]);
    t.push(Vec::new(), Summary::of(st));
    t.write(&mut out).unwrap();
    out
}

fn determinism() -> Check {
    let mut runs = vec![(at_rate(0.0), synthetic(64, 32, 5000))];
    for name in ["kvstore", "histogram", "pingpong", "filtering"] {
        let mut w = WorkloadSpec::preset(name).unwrap();
        w.seed = 11;
        runs.push((at_rate(400.0), w));
    }
    for (cfg, w) in &runs {
        let a = csv_bytes(&run(cfg.clone(), w, true)?);
        let b = csv_bytes(&run(cfg.clone(), w, true)?);
        if a != b {
            return Err(format!("{} produced different CSVs", w.name));
        }
    }
    Ok(format!("{} configurations byte-identical", runs.len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("latency-calibration", latency),
        ("scheduler-rate", scheduler_rate),
        ("hpu-utilization", hpu_utilization),
        ("throughput-vs-instructions", throughput_curve),
        ("outbound-flows", outbound),
        ("workload-throughput", workloads),
        ("functional-oracles", oracles),
        ("ordering-and-safety", ordering_and_safety),
        ("closed-forms", closed_forms),
        ("determinism", determinism),
    ];
    let mut unexpected = 0;
    for (name, f) in criteria {
        match f() {
            Ok(m) => println!("PASS {name}: {m}"),
            Err(m) if KNOWN_UNMET.contains(&name) => println!("FAIL {name} (known deviation): {m}"),
            Err(m) => {
                unexpected += 1;
                println!("FAIL {name}: {m}");
            }
        }
    }
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
