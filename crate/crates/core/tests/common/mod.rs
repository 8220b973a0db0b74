#![allow(dead_code)]
#![allow(clippy::field_reassign_with_default)]

pub mod cases;

use std::collections::BTreeMap;

use pspin_sim::nic_inbound::Trace;
use pspin_sim::stats::TaskRecord;
use pspin_sim::types::{FlowKey, MsgId, Packet, PacketKind, TaskKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Packet sizes of each message, in order.
pub fn random_messages(rng: &mut impl Rng, max_msgs: usize, max_pkts: usize) -> Vec<Vec<u32>> {
    let n = rng.random_range(1..=max_msgs);
    (0..n)
        .map(|_| {
            let k = rng.random_range(1..=max_pkts);
            (0..k).map(|_| rng.random_range(64..=1024)).collect()
        })
        .collect()
}

/// Random interleaving that keeps each message's packets in order.
/// `flow_tag` becomes the first byte of every flow key.
pub fn interleave(
    rng: &mut impl Rng,
    msgs: &[Vec<u32>],
    first_id: u64,
    flow_tag: u8,
    truncate: &[bool],
) -> Vec<Packet> {
    let mut next = vec![0usize; msgs.len()];
    let mut out = Vec::new();
    loop {
        let live: Vec<usize> = (0..msgs.len()).filter(|&m| next[m] < msgs[m].len()).collect();
        if live.is_empty() {
            break;
        }
        let m = live[rng.random_range(0..live.len())];
        let k = next[m];
        next[m] += 1;
        let id = first_id + m as u64;
        let last = k + 1 == msgs[m].len();
        let mut flow = vec![flow_tag];
        flow.extend(id.to_le_bytes());
        out.push(Packet {
            msg_id: MsgId(id),
            flow: FlowKey(flow),
            size_bytes: msgs[m][k],
            kind: if k == 0 {
                PacketKind::Header
            } else {
                PacketKind::Payload
            },
            eom: last && !truncate.get(m).copied().unwrap_or(false),
            payload: None,
            arrival: None,
            msg_offset: 0,
        });
    }
    out
}

pub fn random_trace(seed: u64, max_msgs: usize, max_pkts: usize) -> Trace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let msgs = random_messages(&mut rng, max_msgs, max_pkts);
    Trace::new(interleave(&mut rng, &msgs, 0, 0, &[])).unwrap()
}

/// Deterministic pseudo-random cycle count for a handler invocation.
pub fn cost(msg: u64, offset: u64, salt: u64, below: u64) -> u64 {
    let mut x = msg.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ offset.wrapping_mul(0xbf58_476d_1ce4_e5b9) ^ salt;
    x ^= x >> 31;
    x = x.wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^= x >> 29;
    x % below
}

/// Checks header < payload < completion for every message; returns the
/// first violation.
pub fn check_ordering(records: &[TaskRecord]) -> Result<(), String> {
    let mut by_msg: BTreeMap<u64, Vec<&TaskRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.hpu.is_some()) {
        by_msg.entry(r.msg_id.0).or_default().push(r);
    }
    for (m, rs) in by_msg {
        let of = |k: TaskKind| rs.iter().filter(move |r| r.kind == k);
        let header_end = of(TaskKind::Header).map(|r| r.handler_end).max();
        if of(TaskKind::Header).count() > 1 {
            return Err(format!("msg {m}: several header tasks"));
        }
        if let Some(h) = header_end {
            if let Some(p) = of(TaskKind::Payload).find(|p| p.handler_start < h) {
                return Err(format!(
                    "msg {m}: payload started at {} before header ended at {h}",
                    p.handler_start
                ));
            }
        } else if of(TaskKind::Payload).count() > 0 {
            return Err(format!("msg {m}: payload without header"));
        }
        let last = of(TaskKind::Header)
            .chain(of(TaskKind::Payload))
            .map(|r| r.handler_end)
            .max();
        for c in of(TaskKind::Completion) {
            if last.is_some_and(|l| c.handler_start < l) {
                return Err(format!(
                    "msg {m}: completion started at {} before packets ended",
                    c.handler_start
                ));
            }
        }
        if of(TaskKind::Completion).count() > 1 {
            return Err(format!("msg {m}: several completion tasks"));
        }
    }
    Ok(())
}
