//! Outbound microbenchmarks: UDP-style ping-pong over the NIC outbound
//! engine and plain packet copies to host memory.
//!
//! Packet header layout: source address (4 B), destination address (4 B),
//! source port (2 B), destination port (2 B).

use super::{random_bytes, Expected, Parts, Source, WorkloadSpec};
use crate::error::SimError;
use crate::types::{Command, ExecutionContext, HandlerSet};

const HEADER: usize = 12;

/// Swaps addresses and ports of a packet header.
pub(crate) fn swap_header(h: &[u8]) -> [u8; HEADER] {
    let mut out = [0u8; HEADER];
    out[0..4].copy_from_slice(&h[4..8]);
    out[4..8].copy_from_slice(&h[0..4]);
    out[8..10].copy_from_slice(&h[10..12]);
    out[10..12].copy_from_slice(&h[8..10]);
    out
}

fn packets(spec: &WorkloadSpec) -> Result<(crate::nic_inbound::Trace, Vec<Vec<u8>>), SimError> {
    let mut rng = spec.rng();
    let mut data = Vec::new();
    let trace = spec.builder().build_with(|_, _, _, size| {
        let d = random_bytes(&mut rng, size as usize);
        data.push(d.clone());
        Some(d)
    })?;
    Ok((trace, data))
}

pub(super) fn build_pingpong(spec: &WorkloadSpec) -> Result<Parts, SimError> {
    spec.require(spec.message_bytes == 0, "ping-pong uses single-packet messages")?;
    let swap = spec.cost("swap")?;
    let source = spec.source;
    let ctx = ExecutionContext::new(
        0,
        HandlerSet::payload_only(move |api| {
            let mut h = [0u8; HEADER];
            api.read_bytes(api.pkt_addr(), &mut h)?;
            api.compute(swap)?;
            let out = match source {
                Source::L1 => api.pkt_addr(),
                Source::L2 => api.pkt_l2_addr(),
            };
            api.write_bytes(out, &swap_header(&h))?;
            api.issue(Command::nic_put(out, api.pkt_len(), api.msg_id().0))
        }),
    );
    let (trace, data) = packets(spec)?;
    let expected = data
        .into_iter()
        .enumerate()
        .map(|(i, mut d)| {
            let s = swap_header(&d[..HEADER]);
            d[..HEADER].copy_from_slice(&s);
            (i as u64, d)
        })
        .collect();
    Ok((vec![ctx], trace, Vec::new(), Expected::Net(expected)))
}

pub(super) fn build_dma(spec: &WorkloadSpec) -> Result<Parts, SimError> {
    let source = spec.source;
    let stride = spec.msg_bytes().next_multiple_of(64);
    let ctx = ExecutionContext::new(
        0,
        HandlerSet::payload_only(move |api| {
            let src = match source {
                Source::L1 => api.pkt_addr(),
                Source::L2 => api.pkt_l2_addr(),
            };
            let dst = api.host_base() + api.msg_id().0 * stride + api.msg_offset();
            api.issue(Command::dma_to_host(src, api.pkt_len(), dst))
        }),
    );
    let host_base = ctx.host_base;
    let (trace, data) = packets(spec)?;
    let expected = trace
        .packets
        .iter()
        .zip(data)
        .map(|(p, d)| (host_base + p.msg_id.0 * stride + p.msg_offset, d))
        .collect();
    Ok((vec![ctx], trace, Vec::new(), Expected::Host(expected)))
}
