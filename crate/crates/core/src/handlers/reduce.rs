//! Element-wise reduction: every packet of a message carries a vector of
//! 32-bit integers that payload handlers add into an accumulator in the
//! message's home scratchpad with atomic adds. The completion handler copies
//! the accumulator to the host and posts a notification word.

use super::{random_words, words_to_bytes, Expected, Parts, WorkloadSpec};
use crate::config::PsPinConfig;
use crate::error::SimError;
use crate::types::{Command, ExecutionContext, HandlerSet, MemRegion};

/// Host offset of the notification words, after the result vectors.
fn notify_base(messages: u64, vec_bytes: u64) -> u64 {
    (messages * vec_bytes).next_multiple_of(64)
}

pub(super) fn build(spec: &WorkloadSpec, cfg: &PsPinConfig) -> Result<Parts, SimError> {
    spec.require(
        !spec.misaligned && spec.packet_bytes.is_multiple_of(4),
        "packets must hold whole integers",
    )?;
    let msg_bytes = spec.msg_bytes();
    spec.require(
        msg_bytes.is_multiple_of(u64::from(spec.packet_bytes)),
        "messages must be whole packets",
    )?;
    let vec_bytes = u64::from(spec.packet_bytes);
    let messages = spec.messages;
    spec.require(
        messages * vec_bytes <= cfg.l1_scratchpad_bytes,
        "accumulators exceed the scratchpad",
    )?;
    let per_packet = spec.cost("per_packet")?;
    let per_element = spec.cost("per_element")?;
    let bound = spec.param_u64("value_bound")?.clamp(1, u64::from(u32::MAX)) as u32;

    let notify = notify_base(messages, vec_bytes);
    let handlers = HandlerSet::payload_only(move |api| {
        api.compute(per_packet)?;
        let n = (api.pkt_len() / 4) as usize;
        let vals = api.load_u32s(api.pkt_addr(), n)?;
        let acc = api.scratchpad() + api.msg_id().0 * vec_bytes;
        for (i, v) in vals.into_iter().enumerate() {
            api.compute(per_element)?;
            api.amo_add_u32_nowait(acc + 4 * i as u64, v)?;
        }
        Ok(())
    })
    .with_completion(move |api| {
        let m = api.msg_id().0;
        let acc = api.scratchpad() + m * vec_bytes;
        let host = api.host_base();
        api.issue(Command::dma_to_host(acc, vec_bytes as u32, host + m * vec_bytes))?;
        api.issue(Command::host_direct(&(m as u32).to_le_bytes(), host + notify + 4 * m))
    });
    let mut ctx = ExecutionContext::new(0, handlers);
    ctx.scratchpad = MemRegion::new(0, messages * vec_bytes);

    let mut rng = spec.rng();
    let ints = (vec_bytes / 4) as usize;
    let mut sums = vec![vec![0u32; ints]; messages as usize];
    let trace = spec.builder().build_with(|m, _, _, _| {
        let w = random_words(&mut rng, ints, bound);
        for (s, x) in sums[m as usize].iter_mut().zip(&w) {
            *s = s.wrapping_add(*x);
        }
        Some(words_to_bytes(&w))
    })?;

    let host = ctx.host_base;
    let mut expected: Vec<(u64, Vec<u8>)> = sums
        .iter()
        .enumerate()
        .map(|(m, s)| (host + m as u64 * vec_bytes, words_to_bytes(s)))
        .collect();
    expected.extend((0..messages).map(|m| (host + notify + 4 * m, (m as u32).to_le_bytes().to_vec())));
    Ok((vec![ctx], trace, Vec::new(), Expected::Host(expected)))
}
