//! Histogram: packets carry 32-bit integers in `[0, max_value]`; payload
//! handlers count them with atomic increments into a histogram in the home
//! cluster's scratchpad, so messages sharing a home share a histogram. Each
//! completion handler copies its home histogram to that cluster's host slot.

use super::{random_words, words_to_bytes, Expected, Parts, WorkloadSpec};
use crate::config::PsPinConfig;
use crate::error::SimError;
use crate::scheduler::home_cluster;
use crate::types::{Command, ExecutionContext, HandlerSet, MemRegion, MsgId};

pub(super) fn build(spec: &WorkloadSpec, cfg: &PsPinConfig) -> Result<Parts, SimError> {
    spec.require(
        !spec.misaligned && spec.packet_bytes.is_multiple_of(4),
        "packets must hold whole integers",
    )?;
    let msg_bytes = spec.msg_bytes();
    spec.require(msg_bytes.is_multiple_of(4), "messages must hold whole integers")?;
    let max_value = spec.param_u64("max_value")?;
    spec.require(max_value < u64::from(u32::MAX), "max_value too large")?;
    let bins = max_value + 1;
    let hist_bytes = bins * 4;
    let slot = hist_bytes.next_multiple_of(64);
    spec.require(slot <= cfg.l1_scratchpad_bytes, "histogram exceeds the scratchpad")?;
    let per_packet = spec.cost("per_packet")?;
    let per_element = spec.cost("per_element")?;

    let handlers = HandlerSet::payload_only(move |api| {
        api.compute(per_packet)?;
        let len = (msg_bytes - api.msg_offset()).min(u64::from(api.pkt_len()));
        let vals = api.load_u32s(api.pkt_addr(), (len / 4) as usize)?;
        let hist = api.scratchpad();
        for v in vals {
            api.compute(per_element)?;
            // Out-of-range values fault on the scratchpad bound.
            api.amo_add_u32_nowait(hist + 4 * u64::from(v), 1)?;
        }
        Ok(())
    })
    .with_completion(move |api| {
        let dst = api.host_base() + api.home_cluster() as u64 * slot;
        api.issue(Command::dma_to_host(api.scratchpad(), hist_bytes as u32, dst))
    });
    let mut ctx = ExecutionContext::new(0, handlers);
    ctx.scratchpad = MemRegion::new(0, hist_bytes);

    let mut rng = spec.rng();
    let n = cfg.num_clusters;
    let mut counts = vec![vec![0u32; bins as usize]; n];
    let trace = spec.builder().build_with(|m, _, off, size| {
        let len = (msg_bytes - off).min(u64::from(size));
        let w = random_words(&mut rng, (len / 4) as usize, bins as u32);
        let h = &mut counts[home_cluster(MsgId(m), n)];
        for x in &w {
            h[*x as usize] += 1;
        }
        Some(words_to_bytes(&w))
    })?;
    let host = ctx.host_base;
    let expected = counts
        .iter()
        .enumerate()
        .map(|(c, h)| (host + c as u64 * slot, words_to_bytes(h)))
        .collect();
    Ok((vec![ctx], trace, Vec::new(), Expected::Host(expected)))
}
