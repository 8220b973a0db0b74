//! Packet filtering: the payload handler hashes the packet's 8-byte source
//! key, looks it up in a direct-mapped table in L2 handler memory, and on a
//! hit rewrites the destination port and copies the packet to the host.
//! Misses are dropped.
//!
//! Packet layout: source key (8 B), destination port (2 B), payload.
//! Table entry (16 B): key (8 B), new port (4 B), valid flag (4 B).

use std::collections::HashMap;

use rand::Rng;

use super::{random_bytes, Expected, Parts, WorkloadSpec};
use crate::config::PsPinConfig;
use crate::error::SimError;
use crate::memory::L2_HANDLER_BASE;
use crate::types::{Command, ExecutionContext, HandlerSet, MemRegion};

const ENTRY: u64 = 16;

/// 64-bit FNV-1a.
pub fn fnv1a(data: &[u8]) -> u64 {
    data.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub(super) fn build(spec: &WorkloadSpec, cfg: &PsPinConfig) -> Result<Parts, SimError> {
    spec.require(spec.message_bytes == 0, "filtering uses single-packet messages")?;
    let entries = spec.param_u64("entries")?;
    spec.require(entries.is_power_of_two(), "entries must be a power of two")?;
    spec.require(
        entries * ENTRY <= cfg.l2_handler_bytes,
        "table exceeds L2 handler memory",
    )?;
    let installed = spec.param_u64("installed")?;
    let hit_ratio = spec.param("hit_ratio")?;
    spec.require((0.0..=1.0).contains(&hit_ratio), "hit_ratio must be in [0, 1]")?;
    let per_packet = spec.cost("per_packet")?;
    let hash_per_byte = spec.cost("hash_per_byte")?;
    let stride = u64::from(spec.wire_bytes()).next_multiple_of(64);

    let table_base = L2_HANDLER_BASE;
    let mask = entries - 1;
    let handlers = HandlerSet::payload_only(move |api| {
        api.compute(per_packet)?;
        let pkt = api.pkt_addr();
        let key = api.load_u64(pkt)?;
        api.compute(8 * hash_per_byte)?;
        let e = table_base + (fnv1a(&key.to_le_bytes()) & mask) * ENTRY;
        let k = api.load_u64(e)?;
        let valid = api.load_u32(e + 12)?;
        if valid == 1 && k == key {
            let port = api.load_u32(e + 8)?;
            api.write_bytes(pkt + 8, &port.to_le_bytes()[..2])?;
            let dst = api.host_base() + api.msg_id().0 * stride;
            api.issue(Command::dma_to_host(pkt, api.pkt_len(), dst))?;
        }
        Ok(())
    });
    let mut ctx = ExecutionContext::new(0, handlers);
    ctx.handler_mem = MemRegion::new(table_base, entries * ENTRY);

    let mut rng = spec.rng();
    let mut table = vec![0u8; (entries * ENTRY) as usize];
    let keys: Vec<u64> = (0..installed).map(|_| rng.random()).collect();
    for &k in &keys {
        let port: u16 = rng.random();
        let at = ((fnv1a(&k.to_le_bytes()) & mask) * ENTRY) as usize;
        table[at..at + 8].copy_from_slice(&k.to_le_bytes());
        table[at + 8..at + 12].copy_from_slice(&u32::from(port).to_le_bytes());
        table[at + 12..at + 16].copy_from_slice(&1u32.to_le_bytes());
    }
    // Keys that survived collisions, by value, for the oracle.
    let live: HashMap<u64, [u8; 2]> = table
        .chunks_exact(ENTRY as usize)
        .filter(|e| e[12] == 1)
        .map(|e| (u64::from_le_bytes(e[0..8].try_into().unwrap()), [e[8], e[9]]))
        .collect();

    let mut packets = Vec::new();
    let trace = spec.builder().build_with(|_, _, _, size| {
        let mut d = random_bytes(&mut rng, size as usize);
        let key = if !keys.is_empty() && rng.random_bool(hit_ratio) {
            keys[rng.random_range(0..keys.len())]
        } else {
            rng.random()
        };
        d[0..8].copy_from_slice(&key.to_le_bytes());
        packets.push(d.clone());
        Some(d)
    })?;

    let host = ctx.host_base;
    let expected = packets
        .into_iter()
        .enumerate()
        .map(|(i, mut d)| {
            let key = u64::from_le_bytes(d[0..8].try_into().unwrap());
            match live.get(&key) {
                Some(port) => d[8..10].copy_from_slice(port),
                None => d.iter_mut().for_each(|b| *b = 0),
            }
            (host + i as u64 * stride, d)
        })
        .collect();
    Ok((vec![ctx], trace, vec![(table_base, table)], Expected::Host(expected)))
}
