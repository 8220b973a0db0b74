//! Key-value cache: a set-associative cache in L2 handler memory serving
//! one request per packet. The set is the key modulo the number of sets and
//! victims are the least recently used entry of the set. Each request is
//! answered with a 64-byte NIC put.
//!
//! Request layout: op (4 B, 0 read, 1 write), key (4 B), value (4 B),
//! request index (4 B). Response layout: hit (4 B), value (4 B), service
//! order (4 B), request index (4 B).
//!
//! Entry (16 B): key, stamp (0 when empty, else service order + 1), value.
//! A counter after the table hands out the service order.

use rand::Rng;
use rand_distr::{Distribution, Zipf};

use super::{bytes_to_words, words_to_bytes, Expected, Parts, WorkloadSpec};
use crate::config::PsPinConfig;
use crate::error::SimError;
use crate::memory::L2_HANDLER_BASE;
use crate::outbound::NetPacket;
use crate::types::{Command, ExecutionContext, HandlerSet, MemRegion};

const ENTRY: u64 = 16;
const RESPONSE_BYTES: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KvOp {
    Read,
    Write,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KvRequest {
    pub op: KvOp,
    pub key: u32,
    pub value: u32,
}

/// Value a read miss fetches from the backing store.
pub fn backing_value(key: u32) -> u32 {
    key.wrapping_mul(0x9e37_79b9)
}

/// Reference cache, independent of the simulator.
#[derive(Debug, Clone)]
pub struct KvCache {
    sets: Vec<Vec<(u32, u32, u64)>>,
    ways: usize,
}

impl KvCache {
    pub fn new(sets: usize, ways: usize) -> Self {
        Self {
            sets: vec![Vec::with_capacity(ways); sets],
            ways,
        }
    }

    /// Serves a request; returns (hit, value returned).
    pub fn access(&mut self, r: KvRequest, stamp: u64) -> (bool, u32) {
        let n = self.sets.len();
        let set = &mut self.sets[r.key as usize % n];
        if let Some(e) = set.iter_mut().find(|e| e.0 == r.key) {
            if r.op == KvOp::Write {
                e.1 = r.value;
            }
            e.2 = stamp;
            return (true, e.1);
        }
        let value = match r.op {
            KvOp::Read => backing_value(r.key),
            KvOp::Write => r.value,
        };
        if set.len() < self.ways {
            set.push((r.key, value, stamp));
        } else {
            let lru = set.iter_mut().min_by_key(|e| e.2).expect("full set");
            *lru = (r.key, value, stamp);
        }
        (false, value)
    }

    pub fn occupancy(&self, set: usize) -> usize {
        self.sets[set].len()
    }
}

/// Requests plus cache geometry; responses are replayed through `KvCache`
/// in the order the engine served them.
#[derive(Debug, Clone, PartialEq)]
pub struct KvExpectation {
    pub requests: Vec<KvRequest>,
    pub sets: usize,
    pub ways: usize,
}

impl KvExpectation {
    pub fn verify(&self, sent: &[NetPacket]) -> Result<(), String> {
        let n = self.requests.len();
        if sent.len() != n {
            return Err(format!("{} responses for {n} requests", sent.len()));
        }
        let mut by_order: Vec<Option<(bool, u32, usize)>> = vec![None; n];
        for p in sent {
            let w = bytes_to_words(&p.data[..16]);
            let (hit, value, order, req) = (w[0] == 1, w[1], w[2] as usize, w[3] as usize);
            if req >= n || p.dst != req as u64 {
                return Err(format!("response for unknown request {req}"));
            }
            match by_order.get_mut(order) {
                Some(slot @ None) => *slot = Some((hit, value, req)),
                _ => return Err(format!("service order {order} repeated or out of range")),
            }
        }
        let mut cache = KvCache::new(self.sets, self.ways);
        for (order, slot) in by_order.into_iter().enumerate() {
            let (hit, value, req) = slot.expect("every order filled");
            let want = cache.access(self.requests[req], order as u64);
            if (hit, value) != want {
                return Err(format!(
                    "request {req} (order {order}): got hit={hit} value={value:#x}, expected hit={} value={:#x}",
                    want.0, want.1
                ));
            }
        }
        Ok(())
    }
}

pub(super) fn build(spec: &WorkloadSpec, cfg: &PsPinConfig) -> Result<Parts, SimError> {
    spec.require(spec.message_bytes == 0, "kvstore uses one packet per request")?;
    let entries = spec.param_u64("entries")?;
    let ways = spec.param_u64("ways")?;
    spec.require(
        ways > 0 && entries % ways == 0 && entries > 0,
        "entries must be a multiple of ways",
    )?;
    let sets = entries / ways;
    spec.require(
        (entries + 1) * ENTRY <= cfg.l2_handler_bytes,
        "cache exceeds L2 handler memory",
    )?;
    let key_space = spec.param_u64("key_space")?;
    spec.require(
        key_space > 0 && key_space <= u64::from(u32::MAX),
        "key_space out of range",
    )?;
    let theta = spec.param("theta")?;
    let read_ratio = spec.param("read_ratio")?;
    spec.require((0.0..=1.0).contains(&read_ratio), "read_ratio must be in [0, 1]")?;
    let per_packet = spec.cost("per_packet")?;
    let per_way = spec.cost("per_way")?;

    let table = L2_HANDLER_BASE;
    let counter = table + entries * ENTRY;
    let handlers = HandlerSet::payload_only(move |api| {
        api.compute(per_packet)?;
        let pkt = api.pkt_addr();
        let w = api.load_u32s(pkt, 4)?;
        let (write, key, value, req) = (w[0] == 1, w[1], w[2], w[3]);
        let order = api.amo_add_u32(counter, 1)?;
        let base = table + u64::from(key) % sets * ways * ENTRY;
        let mut hit = None;
        let mut victim = (u32::MAX, 0);
        for way in 0..ways {
            let e = base + way * ENTRY;
            api.compute(per_way)?;
            let stamp = api.load_u32(e + 4)?;
            if stamp == 0 {
                if victim.0 != 0 {
                    victim = (0, way);
                }
                continue;
            }
            if api.load_u32(e)? == key {
                hit = Some(e);
                break;
            }
            if stamp < victim.0 {
                victim = (stamp, way);
            }
        }
        let (found, out) = match hit {
            Some(e) => {
                let v = if write {
                    api.store_u32(e + 8, value)?;
                    value
                } else {
                    api.load_u32(e + 8)?
                };
                api.store_u32(e + 4, order + 1)?;
                (1, v)
            }
            None => {
                let v = if write { value } else { backing_value(key) };
                let e = base + victim.1 * ENTRY;
                api.store_u32(e, key)?;
                api.store_u32(e + 4, order + 1)?;
                api.store_u32(e + 8, v)?;
                (0, v)
            }
        };
        api.write_bytes(pkt, &words_to_bytes(&[found, out, order, req]))?;
        api.issue(Command::nic_put(pkt, RESPONSE_BYTES, u64::from(req)))
    });
    let mut ctx = ExecutionContext::new(0, handlers);
    ctx.handler_mem = MemRegion::new(table, (entries + 1) * ENTRY);

    let mut rng = spec.rng();
    let zipf = Zipf::new(key_space as f64, theta).map_err(|e| SimError::Workload(format!("kvstore: {e}")))?;
    let mut requests = Vec::new();
    let trace = spec.builder().build_with(|m, _, _, _| {
        let key = zipf.sample(&mut rng) as u32;
        let op = if rng.random_bool(read_ratio) {
            KvOp::Read
        } else {
            KvOp::Write
        };
        let value: u32 = rng.random();
        requests.push(KvRequest { op, key, value });
        let opw = u32::from(op == KvOp::Write);
        Some(words_to_bytes(&[opw, key, value, m as u32]))
    })?;
    let expected = Expected::Kv(KvExpectation {
        requests,
        sets: sets as usize,
        ways: ways as usize,
    });
    Ok((vec![ctx], trace, Vec::new(), expected))
}
