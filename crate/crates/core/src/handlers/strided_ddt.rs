//! Strided datatype unpack: a message is scattered to host memory in blocks
//! of `block` bytes placed `stride` bytes apart. The handler reads the
//! layout descriptor from L2 handler memory and issues one DMA per block
//! fragment straight from the L2 packet buffer.

use super::{random_bytes, words_to_bytes, Expected, Parts, WorkloadSpec};
use crate::config::PsPinConfig;
use crate::error::SimError;
use crate::memory::L2_HANDLER_BASE;
use crate::types::{Command, ExecutionContext, HandlerSet, MemRegion};

/// Host offset of message byte `off`.
pub(crate) fn strided_offset(off: u64, block: u64, stride: u64) -> u64 {
    off / block * stride + off % block
}

pub(super) fn build(spec: &WorkloadSpec, cfg: &PsPinConfig) -> Result<Parts, SimError> {
    let block = spec.param_u64("block")?;
    let stride = spec.param_u64("stride")?;
    spec.require(block > 0 && stride >= block, "need 0 < block <= stride")?;
    spec.require(
        block <= u64::from(u32::MAX) && stride <= u64::from(u32::MAX),
        "layout too large",
    )?;
    spec.require(cfg.l2_handler_bytes >= 8, "no room for the descriptor")?;
    let per_packet = spec.cost("per_packet")?;
    let per_block = spec.cost("per_block")?;
    let msg_bytes = spec.msg_bytes();
    let span = strided_offset(msg_bytes - 1, block, stride) + 1;

    let desc = L2_HANDLER_BASE;
    let handlers = HandlerSet::payload_only(move |api| {
        api.compute(per_packet)?;
        let block = u64::from(api.load_u32(desc)?);
        let stride = u64::from(api.load_u32(desc + 4)?);
        let base = api.host_base() + api.msg_id().0 * span.next_multiple_of(64);
        let len = (msg_bytes - api.msg_offset()).min(u64::from(api.pkt_len()));
        let mut done = 0;
        while done < len {
            let off = api.msg_offset() + done;
            let n = (block - off % block).min(len - done);
            api.compute(per_block)?;
            let dst = base + strided_offset(off, block, stride);
            api.issue(Command::dma_to_host(api.pkt_l2_addr() + done, n as u32, dst))?;
            done += n;
        }
        Ok(())
    });
    let mut ctx = ExecutionContext::new(0, handlers);
    ctx.handler_mem = MemRegion::new(desc, 8);
    ctx.bytes_to_l1 = 0;

    let mut rng = spec.rng();
    let mut msgs = vec![Vec::new(); spec.messages as usize];
    let trace = spec.builder().build_with(|m, _, off, size| {
        let len = (msg_bytes - off).min(u64::from(size)) as usize;
        let d = random_bytes(&mut rng, len);
        msgs[m as usize].extend_from_slice(&d);
        Some(d)
    })?;

    // Oracle: the full host image of each message, gaps included.
    let host = ctx.host_base;
    let expected = msgs
        .iter()
        .enumerate()
        .map(|(m, data)| {
            let mut img = vec![0u8; span as usize];
            for (b, chunk) in data.chunks(block as usize).enumerate() {
                let at = (b as u64 * stride) as usize;
                img[at..at + chunk.len()].copy_from_slice(chunk);
            }
            (host + m as u64 * span.next_multiple_of(64), img)
        })
        .collect();
    let init = vec![(desc, words_to_bytes(&[block as u32, stride as u32]))];
    Ok((vec![ctx], trace, init, Expected::Host(expected)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets_follow_blocks() {
        assert_eq!(strided_offset(0, 256, 512), 0);
        assert_eq!(strided_offset(255, 256, 512), 255);
        assert_eq!(strided_offset(256, 256, 512), 512);
        assert_eq!(strided_offset(700, 256, 512), 1024 + 188);
    }
}
