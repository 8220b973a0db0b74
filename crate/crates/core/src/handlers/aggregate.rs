//! Aggregation: payload handlers sum their packet's 32-bit integers locally
//! and add the partial sum to a per-message total in the home scratchpad.
//! The completion handler copies the total to the host.

use super::{random_words, words_to_bytes, Expected, Parts, WorkloadSpec};
use crate::config::PsPinConfig;
use crate::error::SimError;
use crate::types::{Command, ExecutionContext, HandlerSet, MemRegion};

pub(super) fn build(spec: &WorkloadSpec, cfg: &PsPinConfig) -> Result<Parts, SimError> {
    spec.require(
        !spec.misaligned && spec.packet_bytes.is_multiple_of(4),
        "packets must hold whole integers",
    )?;
    let messages = spec.messages;
    spec.require(messages * 4 <= cfg.l1_scratchpad_bytes, "totals exceed the scratchpad")?;
    let msg_bytes = spec.msg_bytes();
    spec.require(msg_bytes.is_multiple_of(4), "messages must hold whole integers")?;
    let per_packet = spec.cost("per_packet")?;
    let per_element = spec.cost("per_element")?;
    let bound = spec.param_u64("value_bound")?.clamp(1, u64::from(u32::MAX)) as u32;

    let handlers = HandlerSet::payload_only(move |api| {
        api.compute(per_packet)?;
        // Only the message's own bytes count, not the padding of a short
        // last packet.
        let len = (msg_bytes - api.msg_offset()).min(u64::from(api.pkt_len()));
        let vals = api.load_u32s(api.pkt_addr(), (len / 4) as usize)?;
        let mut sum = 0u32;
        for v in vals {
            api.compute(per_element)?;
            sum = sum.wrapping_add(v);
        }
        api.amo_add_u32(api.scratchpad() + 4 * api.msg_id().0, sum)?;
        Ok(())
    })
    .with_completion(|api| {
        let m = api.msg_id().0;
        api.issue(Command::dma_to_host(
            api.scratchpad() + 4 * m,
            4,
            api.host_base() + 4 * m,
        ))
    });
    let mut ctx = ExecutionContext::new(0, handlers);
    ctx.scratchpad = MemRegion::new(0, (messages * 4).next_multiple_of(64));

    let mut rng = spec.rng();
    let mut totals = vec![0u32; messages as usize];
    let trace = spec.builder().build_with(|m, _, off, size| {
        let len = (msg_bytes - off).min(u64::from(size));
        let w = random_words(&mut rng, (len / 4) as usize, bound);
        totals[m as usize] = w.iter().fold(totals[m as usize], |a, x| a.wrapping_add(*x));
        Some(words_to_bytes(&w))
    })?;
    let expected = vec![(ctx.host_base, words_to_bytes(&totals))];
    Ok((vec![ctx], trace, Vec::new(), Expected::Host(expected)))
}
