//! Property cases shared by the proptest suite and the acceptance runner.
//! Each returns the first violated expectation.

use pspin_sim::handlers::{build, WorkloadSpec};
use pspin_sim::memory::L2_HANDLER_BASE;
use pspin_sim::nic_inbound::Trace;
use pspin_sim::sim::{SimOptions, Simulator};
use pspin_sim::types::{Command, CtxId, ErrorFlag, ExecutionContext, HandlerSet, MemRegion, Outcome, TaskKind};
use pspin_sim::{DispatchPolicy, PsPinConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_ordering, cost, interleave, random_messages, random_trace};

macro_rules! ensure {
    ($c:expr, $($fmt:tt)+) => {
        if !$c {
            return Err(format!($($fmt)+));
        }
    };
}

fn ordered_ctx(salt: u64) -> ExecutionContext {
    let hs = HandlerSet::default()
        .with_header(move |api| api.compute(cost(api.msg_id().0, 0, salt ^ 1, 300)))
        .with_payload(move |api| api.compute(cost(api.msg_id().0, api.msg_offset(), salt, 200)))
        .with_completion(move |api| api.compute(cost(api.msg_id().0, 7, salt ^ 2, 100)));
    ExecutionContext::new(0, hs)
}

fn random_config(rng: &mut impl Rng) -> PsPinConfig {
    let mut cfg = PsPinConfig::default();
    cfg.injection_gbps = [0.0, 100.0, 400.0][rng.random_range(0..3)];
    cfg.num_clusters = [1, 2, 4][rng.random_range(0..3)];
    if rng.random_bool(0.5) {
        cfg.dispatch_policy = DispatchPolicy::SkipBlocked;
    }
    cfg
}

/// Random multi-message trace; every message runs header, payload and
/// completion handlers in order.
pub fn ordering(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = random_config(&mut rng);
    let trace = random_trace(seed, 6, 8);
    let n = trace.len() as u64;
    let msgs = trace.message_count() as u64;
    let mut sim =
        Simulator::new(cfg, vec![ordered_ctx(seed)], trace, SimOptions::default()).map_err(|e| e.to_string())?;
    sim.run().map_err(|e| e.to_string())?;
    let st = sim.stats();
    ensure!(
        st.count(Outcome::Ok) == n + msgs,
        "{} ok tasks, want {}",
        st.count(Outcome::Ok),
        n + msgs
    );
    ensure!(
        st.tasks_by_kind[2] == msgs,
        "{} completions for {msgs} messages",
        st.tasks_by_kind[2]
    );
    check_ordering(&st.records)
}

/// Small buffers everywhere, handlers that also drive the command engines.
fn tight_config(rng: &mut impl Rng) -> PsPinConfig {
    let mut cfg = PsPinConfig::default();
    cfg.l2_pkt_buffer_bytes = 8 * 1024;
    let region = [2048u64, 4096][rng.random_range(0..2)];
    cfg.l1_scratchpad_bytes += cfg.l1_pkt_region_bytes - region;
    cfg.l1_pkt_region_bytes = region;
    // A pool smaller than the number of open messages can stall the wire
    // until the idle scan resets a message.
    cfg.mpq_pool = if rng.random_bool(0.5) {
        16
    } else {
        rng.random_range(1..=4)
    };
    cfg.her_queue_depth = rng.random_range(1..=4);
    cfg.csched_fifo_depth = rng.random_range(1..=2);
    cfg.memory.outbound_queue_depth = 1;
    cfg.memory.outbound_max_outstanding = 1;
    cfg.num_clusters = [1, 2, 4][rng.random_range(0..3)];
    cfg.hpus_per_cluster = rng.random_range(1..=4);
    cfg
}

fn command_ctx(salt: u64) -> ExecutionContext {
    let hs = HandlerSet::default()
        .with_header(|api| api.compute(5))
        .with_payload(move |api| {
            api.compute(cost(api.msg_id().0, api.msg_offset(), salt, 60))?;
            let len = api.pkt_visible_len().min(256);
            api.issue(Command::nic_put(api.pkt_addr(), len, api.msg_id().0))?;
            let dst = api.host_base() + api.msg_offset();
            api.issue(Command::dma_to_host(api.pkt_l2_addr(), api.pkt_len(), dst))
        })
        .with_completion(|api| {
            let b = api.host_base();
            api.issue(Command::host_direct(&[1, 2, 3, 4], b))
        });
    ExecutionContext::new(0, hs)
}

/// Every buffer tiny: the run must still terminate with every packet
/// accounted for.
pub fn backpressure(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = tight_config(&mut rng);
    let trace = random_trace(seed, 12, 10);
    let n = trace.len() as u64;
    let (pool, msgs) = (cfg.mpq_pool, trace.message_count());
    let opts = SimOptions {
        max_cycles: Some(50_000_000),
        ..SimOptions::default()
    };
    let mut sim = Simulator::new(cfg, vec![command_ctx(seed)], trace, opts).map_err(|e| e.to_string())?;
    sim.run().map_err(|e| e.to_string())?;
    let st = sim.stats();
    ensure!(
        st.packets_processed + sim.inbound().counters.dropped == n,
        "packets lost"
    );
    ensure!(
        st.count(Outcome::ProtectionFault) + st.count(Outcome::WatchdogKill) == 0,
        "handler error"
    );
    if pool >= msgs {
        ensure!(st.resets == 0, "reset with a sufficient MPQ pool");
        ensure!(
            st.packets_processed == n,
            "{} of {n} packets processed",
            st.packets_processed
        );
    }
    check_ordering(&st.records)
}

const VICTIM_MEM_BASE: u64 = L2_HANDLER_BASE + 0x1_0000;
const VICTIM_MEM: u64 = 4096;
const VICTIM_PAD_OFFSET: u64 = 0x1000;
const VICTIM_PAD: u64 = 2048;

fn victim() -> ExecutionContext {
    let mut ctx = ExecutionContext::new(1, HandlerSet::payload_only(|api| api.compute(3)));
    ctx.match_prefix = vec![0xB1];
    ctx.handler_mem = MemRegion::new(VICTIM_MEM_BASE, VICTIM_MEM);
    ctx.scratchpad = MemRegion::new(VICTIM_PAD_OFFSET, VICTIM_PAD);
    ctx
}

fn attacker(targets: Vec<u64>, salt: u64) -> ExecutionContext {
    let hs = HandlerSet::payload_only(move |api| {
        let i = cost(api.msg_id().0, api.msg_offset(), salt, targets.len() as u64) as usize;
        let a = targets[i];
        match cost(a, 0, salt, 5) {
            0 => api.store_u32(a, 0xdead_beef),
            1 => api.write_bytes(a, &[0xEE; 64]),
            2 => api.amo_add_u32(a, 1).map(|_| ()),
            3 => api.load_u32(a).map(|_| ()),
            _ => api.issue(Command::nic_put(a, 64, 0)),
        }
    });
    let mut ctx = ExecutionContext::new(0, hs);
    ctx.match_prefix = vec![0xA0];
    ctx
}

/// One context accesses memory it does not own; it must fault every time
/// and leave the other context's regions untouched.
pub fn out_of_bounds(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cfg = PsPinConfig::default();
    cfg.num_clusters = [1, 2, 4][rng.random_range(0..3)];
    let map = Simulator::new(
        cfg.clone(),
        vec![attacker(vec![0], 0), victim()],
        Trace::default(),
        SimOptions::default(),
    )
    .map_err(|e| e.to_string())?
    .mem
    .map;
    let mut regions = vec![(VICTIM_MEM_BASE, VICTIM_MEM)];
    for c in 0..cfg.num_clusters {
        regions.push((map.scratchpad_addr(c, VICTIM_PAD_OFFSET), VICTIM_PAD));
    }
    let mut targets: Vec<u64> = regions
        .iter()
        .flat_map(|&(b, l)| [b, b + l - 4, b + rng.random_range(0..l / 4) * 4])
        .collect();
    targets.extend([0, 0x10, 0x3000_0000, 0xFFFF_FFFF_0000, L2_HANDLER_BASE + 0x20_0000]);

    let a = random_messages(&mut rng, 4, 4);
    let b = random_messages(&mut rng, 4, 4);
    let mut pkts = interleave(&mut rng, &a, 0, 0xA0, &[]);
    pkts.extend(interleave(&mut rng, &b, 100, 0xB1, &[]));
    let trace = Trace::new(pkts).map_err(|e| e.to_string())?;
    let victim_pkts = b.iter().map(Vec::len).sum::<usize>();

    let mut sim = Simulator::new(
        cfg,
        vec![attacker(targets, seed), victim()],
        trace,
        SimOptions::default(),
    )
    .map_err(|e| e.to_string())?;
    let pattern: Vec<Vec<u8>> = regions
        .iter()
        .map(|&(_, l)| (0..l).map(|i| (i as u8).wrapping_mul(31) ^ 0x5A).collect())
        .collect();
    for (&(base, _), p) in regions.iter().zip(&pattern) {
        sim.mem.write(base, p).ok_or("victim region unmapped")?;
    }
    sim.run().map_err(|e| e.to_string())?;

    for (&(base, len), p) in regions.iter().zip(&pattern) {
        ensure!(
            sim.mem.read(base, len as usize).as_ref() == Some(p),
            "region {base:#x} changed"
        );
    }
    ensure!(
        sim.ctx_error(CtxId(0)) == ErrorFlag::ProtectionFault,
        "attacker not flagged"
    );
    ensure!(sim.ctx_error(CtxId(1)) == ErrorFlag::None, "victim flagged");
    let recs = &sim.stats().records;
    for r in recs {
        if r.msg_id.0 >= 100 {
            ensure!(r.outcome == Outcome::Ok, "victim task {:?}", r.outcome);
        } else {
            ensure!(
                matches!(r.outcome, Outcome::ProtectionFault | Outcome::Dropped),
                "attacker task ended {:?}",
                r.outcome
            );
        }
    }
    ensure!(
        recs.iter().filter(|r| r.msg_id.0 >= 100).count() == victim_pkts,
        "victim packets missing"
    );
    Ok(())
}

/// A handler that never returns is killed within one cycle of its budget.
pub fn watchdog(threshold: u64, step: u64, mem_loop: bool) -> Result<(), String> {
    let hs = HandlerSet::payload_only(move |api| loop {
        if mem_loop {
            let a = api.pkt_addr();
            api.load_u32(a)?;
        } else {
            api.compute(step)?;
        }
    });
    let mut ctx = ExecutionContext::new(0, hs);
    ctx.watchdog_threshold_cycles = threshold;
    let trace = random_trace(threshold, 1, 1);
    let cfg = PsPinConfig::default();
    let invoke = cfg.runtime_invoke_cycles;
    let error_addr = ctx.host_error_addr;
    let mut sim = Simulator::new(cfg, vec![ctx], trace, SimOptions::default()).map_err(|e| e.to_string())?;
    sim.run().map_err(|e| e.to_string())?;
    let r = &sim.stats().records[0];
    ensure!(r.outcome == Outcome::WatchdogKill, "outcome {:?}", r.outcome);
    let ran = r.handler_end - r.handler_start - invoke;
    ensure!(ran.abs_diff(threshold) <= 1, "ran {ran} cycles, threshold {threshold}");
    ensure!(
        sim.ctx_error(CtxId(0)) == ErrorFlag::WatchdogKill,
        "context not flagged"
    );
    ensure!(sim.mem.host.read_u32(error_addr) == 2, "host error word not written");
    Ok(())
}

/// Messages that never end are reset by the idle scan and the run ends.
pub fn stale_reset(seed: u64, threshold: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let msgs = random_messages(&mut rng, 8, 5);
    let mut truncate: Vec<bool> = (0..msgs.len()).map(|_| rng.random_bool(0.5)).collect();
    truncate[0] = true;
    let stale = truncate.iter().filter(|&&t| t).count() as u64;
    let trace = Trace::new_unchecked(interleave(&mut rng, &msgs, 0, 0, &truncate));
    let mut ctx = ordered_ctx(seed);
    ctx.mpq_idle_threshold_cycles = threshold;
    let opts = SimOptions {
        max_cycles: Some(10_000_000),
        ..SimOptions::default()
    };
    let mut sim = Simulator::new(PsPinConfig::default(), vec![ctx], trace, opts).map_err(|e| e.to_string())?;
    sim.run().map_err(|e| e.to_string())?;
    ensure!(
        sim.stats().resets == stale,
        "{} resets for {stale} truncated messages",
        sim.stats().resets
    );
    ensure!(
        sim.ctx_error(CtxId(0)) == ErrorFlag::StaleMessage,
        "context not flagged"
    );
    let completions = sim
        .stats()
        .records
        .iter()
        .filter(|r| r.kind == TaskKind::Completion)
        .count() as u64;
    ensure!(completions == msgs.len() as u64 - stale, "{completions} completions");
    Ok(())
}

const ORACLE_SIZES: [u32; 5] = [64, 128, 256, 512, 1024];

/// Randomizes the workload's shape for `seed`.
fn oracle_spec(name: &str, seed: u64) -> WorkloadSpec {
    let r = &mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut s = WorkloadSpec::preset(name).expect("committed workload");
    s.seed = seed;
    s.packet_bytes = ORACLE_SIZES[r.random_range(0..ORACLE_SIZES.len())];
    match name {
        "reduce" => {
            s.messages = r.random_range(1..=8);
            s.interleave = r.random_range(1..=s.messages as usize);
            s.message_bytes = u64::from(s.packet_bytes) * r.random_range(1..=16);
        }
        "aggregate" => {
            s.messages = r.random_range(1..=4);
            s.interleave = r.random_range(1..=s.messages as usize);
            s.message_bytes = r.random_range(64..=32 * 1024) & !3;
        }
        "histogram" => {
            s.messages = r.random_range(1..=64);
            s.interleave = r.random_range(1..=4);
            s.message_bytes = r.random_range(64..=4096) & !3;
        }
        "strided_ddt" => {
            s.message_bytes = r.random_range(1..=64) * 1024 + r.random_range(0..1024);
            let block = [64.0, 128.0, 256.0, 512.0][r.random_range(0..4)];
            s.params.insert("block".into(), block);
            s.params
                .insert("stride".into(), block * f64::from(r.random_range(1..=4u32)));
        }
        "kvstore" => {
            s.messages = r.random_range(100..=1000);
            s.params.insert("theta".into(), [0.0, 0.9, 1.1][r.random_range(0..3)]);
            s.params
                .insert("ways".into(), [1.0, 2.0, 4.0, 8.0][r.random_range(0..4)]);
            s.params.insert("entries".into(), 512.0);
        }
        "filtering" => {
            s.messages = r.random_range(10..=1000);
            s.params.insert("hit_ratio".into(), r.random_range(0.0..=1.0));
        }
        _ => {}
    }
    s
}

/// Runs workload `name` with a seed-randomized shape and checks its
/// host-visible result against the reference.
pub fn oracle(name: &str, seed: u64) -> Result<(), String> {
    let spec = oracle_spec(name, seed);
    let mut cfg = PsPinConfig::default();
    cfg.injection_gbps = if seed.is_multiple_of(2) { 0.0 } else { 400.0 };
    let w = build(&spec, &cfg).map_err(|e| e.to_string())?;
    let mut sim = w.simulator(cfg, w.options()).map_err(|e| e.to_string())?;
    sim.run().map_err(|e| format!("{name} seed {seed}: {e}"))?;
    w.verify(&sim)
        .map_err(|e| format!("{name} seed {seed} ({} B): {e}", spec.packet_bytes))
}
