//! `pspin`: run simulations, preset sweeps and sizing formulas.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use pspin_sim::analysis::{budget_ns, littles_buffer_bytes};
use pspin_sim::experiments::{grid, run_point, run_workload, PointResult, PRESETS};
use pspin_sim::handlers::{Source, WorkloadSpec};
use pspin_sim::nic_inbound::Trace;
use pspin_sim::report::{self, Summary, SummaryTable};
use pspin_sim::sim::{SimOptions, Simulator};
use pspin_sim::types::{ExecutionContext, HandlerSet};
use pspin_sim::{PsPinConfig, SimError};

#[derive(Parser)]
#[command(name = "pspin", version, about = "In-NIC packet-processing engine simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one simulation and write its CSV set.
    Run(RunArgs),
    /// Run every point of an experiment preset.
    Sweep(SweepArgs),
    /// Longest handler duration (ns) that sustains a line rate.
    Budget {
        #[arg(long, default_value_t = 32)]
        hpus: u64,
        #[arg(long)]
        pkt_bytes: u64,
        #[arg(long)]
        rate_gbps: f64,
    },
    /// Packet buffer (bytes) needed for a rate and a latency.
    Littles {
        #[arg(long)]
        rate_gbps: f64,
        #[arg(long)]
        latency_ns: f64,
    },
    /// Check a configuration file and list its violations.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Configuration file (TOML); defaults to the reference engine.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in workload name.
    #[arg(long, conflicts_with = "workload_file")]
    workload: Option<String>,
    /// Workload file (TOML).
    #[arg(long)]
    workload_file: Option<PathBuf>,
    /// Packet trace; runs the synthetic handler over it.
    #[arg(long, conflicts_with_all = ["workload", "workload_file"])]
    trace: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    packet_bytes: Option<u32>,
    #[arg(long)]
    messages: Option<u64>,
    #[arg(long)]
    instructions: Option<u64>,
    #[arg(long, value_parser = parse_source)]
    source: Option<Source>,
    /// Adds one byte to every packet.
    #[arg(long)]
    misaligned: bool,
    /// Overrides the configured ingress rate (0 = unlimited).
    #[arg(long)]
    injection_gbps: Option<f64>,
    /// Cycles excluded from the steady-state throughput.
    #[arg(long, default_value_t = 0)]
    warmup: u64,
    /// Skip the per-task CSV.
    #[arg(long)]
    no_records: bool,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(PRESETS))]
    preset: String,
    #[arg(long, short)]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

fn parse_source(s: &str) -> Result<Source, String> {
    match s {
        "l1" => Ok(Source::L1),
        "l2" => Ok(Source::L2),
        _ => Err(format!("expected l1 or l2, got {s}")),
    }
}

fn load_config(path: Option<&Path>) -> Result<PsPinConfig, SimError> {
    match path {
        Some(p) => PsPinConfig::load(p),
        None => Ok(PsPinConfig::default()),
    }
}

fn print_summary(s: &Summary) {
    println!(
        "packets {}  throughput {:.2} Gbit/s  latency p50 {} ns  mean {:.1} ns  max {} ns  peak busy HPUs {}",
        s.packets, s.throughput_gbps, s.p50_latency, s.mean_latency, s.max_latency, s.peak_busy_hpus
    );
}

fn run_trace(cfg: PsPinConfig, trace: &Path, x: u64, a: &RunArgs) -> Result<Simulator> {
    let cfg = cfg.validated()?;
    let trace = Trace::load(trace)?;
    let ctx = ExecutionContext::new(0, HandlerSet::payload_only(move |api| api.compute(x)));
    let opts = SimOptions {
        capture_host: false,
        keep_records: !a.no_records,
        warmup_cycles: a.warmup,
        ..SimOptions::default()
    };
    let mut sim = Simulator::new(cfg, vec![ctx], trace, opts)?;
    sim.run()?;
    Ok(sim)
}

fn cmd_run(a: &RunArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(r) = a.injection_gbps {
        cfg.injection_gbps = r;
    }
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    fs::write(a.out.join("config.toml"), cfg.to_toml_string())?;

    if let Some(t) = &a.trace {
        let sim = run_trace(cfg, t, a.instructions.unwrap_or(0), a)?;
        report::write_run(&a.out, &sim, &[("trace", t.display().to_string())])?;
        print_summary(&Summary::of(sim.stats()));
        return Ok(());
    }

    let mut w = match (&a.workload, &a.workload_file) {
        (_, Some(p)) => WorkloadSpec::load(p)?,
        (Some(n), None) => WorkloadSpec::preset(n)?,
        (None, None) => WorkloadSpec::preset("synthetic")?,
    };
    if let Some(v) = a.seed {
        w.seed = v;
    }
    if let Some(v) = a.packet_bytes {
        w.packet_bytes = v;
    }
    if let Some(v) = a.messages {
        w.messages = v;
    }
    if let Some(v) = a.instructions {
        w.instructions = v;
    }
    if let Some(v) = a.source {
        w.source = v;
    }
    w.misaligned |= a.misaligned;
    fs::write(a.out.join("workload.toml"), w.to_toml_string())?;

    let r = run_workload(cfg, &w, !a.no_records, a.warmup)?;
    report::write_run(&a.out, &r.sim, &[("workload", w.name.clone())])?;
    print_summary(&r.summary);
    if let Err(e) = r.verified {
        bail!("functional check failed: {e}");
    }
    Ok(())
}

fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let points = grid(&a.preset)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs.unwrap_or(0))
        .build()?;
    let dir = a.out.join(&a.preset);
    fs::create_dir_all(&dir)?;
    let results: Vec<Result<PointResult, SimError>> = pool.install(|| {
        points
            .par_iter()
            .map(|p| {
                let r = run_point(p)?;
                report::write_run(&dir.join(p.dir_name()), &r.sim, &p.labels)?;
                Ok(r)
            })
            .collect()
    });
    let mut table = SummaryTable::new(&points[0].label_names());
    let mut failures = Vec::new();
    for (p, r) in points.iter().zip(results) {
        let r = r.with_context(|| format!("grid point {}", p.dir_name()))?;
        if let Err(e) = &r.verified {
            failures.push(format!("{}: {e}", p.dir_name()));
        }
        println!("{:<60} {:>9.2} Gbit/s", p.dir_name(), r.summary.throughput_gbps);
        table.push(p.label_values(), r.summary);
    }
    table.write(fs::File::create(dir.join(report::SUMMARY_CSV))?)?;
    if !failures.is_empty() {
        bail!("functional checks failed:\n{}", failures.join("\n"));
    }
    Ok(())
}

fn cmd_validate(path: &Path) -> Result<bool> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg = PsPinConfig::from_toml_str(&text)?;
    let v = cfg.validate();
    for x in &v {
        println!("{x}");
    }
    if v.is_empty() {
        println!("ok");
    }
    Ok(v.is_empty())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.cmd {
        Cmd::Run(a) => cmd_run(a).map(|_| true),
        Cmd::Sweep(a) => cmd_sweep(a).map(|_| true),
        Cmd::Budget {
            hpus,
            pkt_bytes,
            rate_gbps,
        } => budget_ns(*hpus, *pkt_bytes, *rate_gbps)
            .map(|ns| println!("{ns}"))
            .map(|_| true)
            .map_err(Into::into),
        Cmd::Littles { rate_gbps, latency_ns } => littles_buffer_bytes(*rate_gbps, *latency_ns)
            .map(|b| println!("{b}"))
            .map(|_| true)
            .map_err(Into::into),
        Cmd::Validate { config } => cmd_validate(config),
    };
    match res {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
