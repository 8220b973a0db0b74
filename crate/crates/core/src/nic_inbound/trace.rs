//! Packet traces: text format, validation and synthetic generators.
//!
//! One packet per line:
//!
//! ```text
//! # msg_id flow size kind eom [payload] [@cycle]
//! 7 0a0b 512 header 0
//! 7 0a0b 64 payload 1 deadbeef @120
//! ```
//!
//! `flow` and `payload` are hex (`-` for empty); `eom` is 0 or 1; `@cycle`
//! pins the arrival cycle, otherwise the injection rate paces the packet.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use crate::engine::SimTime;
use crate::error::SimError;
use crate::types::{FlowKey, MsgId, Packet, PacketKind, MIN_PACKET_BYTES};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    pub packets: Vec<Packet>,
}

fn parse_hex(s: &str) -> Option<Vec<u8>> {
    if s == "-" {
        return Some(Vec::new());
    }
    if !s.len().is_multiple_of(2) {
        return None;
    }
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&s[i..i + 2], 16).ok())
        .collect()
}

fn to_hex(b: &[u8]) -> String {
    if b.is_empty() {
        return "-".into();
    }
    b.iter().fold(String::with_capacity(b.len() * 2), |mut s, x| {
        let _ = write!(s, "{x:02x}");
        s
    })
}

impl Trace {
    /// Builds a trace and checks message structure.
    pub fn new(packets: Vec<Packet>) -> Result<Self, SimError> {
        let mut t = Trace::new_unchecked(packets);
        t.fill_offsets();
        t.validate()?;
        Ok(t)
    }

    /// Builds a trace without structural checks, for injecting malformed
    /// traffic (truncated messages, stray payload packets).
    pub fn new_unchecked(packets: Vec<Packet>) -> Self {
        let mut t = Trace { packets };
        t.fill_offsets();
        t
    }

    fn fill_offsets(&mut self) {
        let mut off: HashMap<MsgId, u64> = HashMap::new();
        for p in &mut self.packets {
            let o = off.entry(p.msg_id).or_default();
            p.msg_offset = *o;
            *o += u64::from(p.size_bytes);
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let mut state: HashMap<MsgId, bool> = HashMap::new(); // msg -> ended
        let mut last_arrival = 0;
        for (i, p) in self.packets.iter().enumerate() {
            let err = |m: String| SimError::TraceInvalid(format!("packet {i} (message {}): {m}", p.msg_id));
            if p.size_bytes < MIN_PACKET_BYTES {
                return Err(err(format!(
                    "size {} below the {MIN_PACKET_BYTES} byte minimum",
                    p.size_bytes
                )));
            }
            if let Some(d) = &p.payload {
                if d.len() > p.size_bytes as usize {
                    return Err(err("payload longer than packet".into()));
                }
            }
            if let Some(a) = p.arrival {
                if a < last_arrival {
                    return Err(err("arrival cycles go backwards".into()));
                }
                last_arrival = a;
            }
            match (state.get(&p.msg_id).copied(), p.kind) {
                (None, PacketKind::Header) => {}
                (None, PacketKind::Payload) => return Err(err("first packet is not a header".into())),
                (Some(true), _) => return Err(err("packet after end of message".into())),
                (Some(false), PacketKind::Header) => return Err(err("second header packet".into())),
                (Some(false), PacketKind::Payload) => {}
            }
            state.insert(p.msg_id, p.eom);
        }
        if let Some((m, _)) = state.iter().filter(|(_, &ended)| !ended).min_by_key(|(m, _)| **m) {
            return Err(SimError::TraceInvalid(format!(
                "message {m} has no end-of-message packet"
            )));
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, SimError> {
        let mut packets = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let perr = |message: String| SimError::TraceParse { line: n + 1, message };
            let mut toks: Vec<&str> = line.split_whitespace().collect();
            let arrival = match toks.last() {
                Some(t) if t.starts_with('@') => {
                    let v = t[1..]
                        .parse::<SimTime>()
                        .map_err(|e| perr(format!("bad arrival: {e}")))?;
                    toks.pop();
                    Some(v)
                }
                _ => None,
            };
            if !(5..=6).contains(&toks.len()) {
                return Err(perr(format!("expected 5 or 6 fields, found {}", toks.len())));
            }
            let msg_id = toks[0].parse::<u64>().map_err(|e| perr(format!("bad msg_id: {e}")))?;
            let flow = parse_hex(toks[1]).ok_or_else(|| perr("bad flow hex".into()))?;
            let size_bytes = toks[2].parse::<u32>().map_err(|e| perr(format!("bad size: {e}")))?;
            let kind = match toks[3] {
                "header" => PacketKind::Header,
                "payload" => PacketKind::Payload,
                k => return Err(perr(format!("unknown kind {k:?}"))),
            };
            let eom = match toks[4] {
                "0" => false,
                "1" => true,
                e => return Err(perr(format!("eom must be 0 or 1, got {e:?}"))),
            };
            let payload = match toks.get(5) {
                Some(h) => {
                    let d = parse_hex(h).ok_or_else(|| perr("bad payload hex".into()))?;
                    (!d.is_empty()).then(|| Arc::<[u8]>::from(d))
                }
                None => None,
            };
            packets.push(Packet {
                msg_id: MsgId(msg_id),
                flow: FlowKey(flow),
                size_bytes,
                kind,
                eom,
                payload,
                arrival,
                msg_offset: 0,
            });
        }
        Trace::new(packets)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# msg_id flow size kind eom [payload] [@cycle]\n");
        for p in &self.packets {
            let _ = write!(
                s,
                "{} {} {} {} {}",
                p.msg_id.0,
                to_hex(&p.flow.0),
                p.size_bytes,
                p.kind.as_str(),
                u8::from(p.eom)
            );
            if let Some(d) = &p.payload {
                let _ = write!(s, " {}", to_hex(d));
            }
            if let Some(a) = p.arrival {
                let _ = write!(s, " @{a}");
            }
            s.push('\n');
        }
        s
    }

    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    pub fn total_bytes(&self) -> u64 {
        self.packets.iter().map(|p| u64::from(p.size_bytes)).sum()
    }

    pub fn message_count(&self) -> usize {
        let mut ids: Vec<_> = self.packets.iter().map(|p| p.msg_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }
}

/// Synthetic trace generator.
///
/// Messages are split into `mtu`-sized packets; the last one carries the
/// remainder, padded up to the minimum packet size. `interleave` messages
/// are in flight at once and their packets alternate round-robin.
#[derive(Debug, Clone)]
pub struct TraceBuilder {
    pub messages: u64,
    pub msg_bytes: u64,
    pub mtu: u32,
    pub interleave: usize,
    pub first_msg_id: u64,
}

impl TraceBuilder {
    pub fn new(messages: u64, msg_bytes: u64, mtu: u32) -> Self {
        Self {
            messages,
            msg_bytes,
            mtu,
            interleave: 1,
            first_msg_id: 0,
        }
    }

    pub fn interleave(mut self, n: usize) -> Self {
        self.interleave = n.max(1);
        self
    }

    pub fn packets_per_message(&self) -> u64 {
        self.msg_bytes.div_ceil(u64::from(self.mtu)).max(1)
    }

    /// Generates the trace; `payload(msg, pkt_index, msg_offset, len)`
    /// supplies packet contents.
    pub fn build_with<F>(&self, mut payload: F) -> Result<Trace, SimError>
    where
        F: FnMut(u64, u64, u64, u32) -> Option<Vec<u8>>,
    {
        if self.mtu < MIN_PACKET_BYTES {
            return Err(SimError::InvalidArgument(format!(
                "mtu {} below {MIN_PACKET_BYTES}",
                self.mtu
            )));
        }
        if self.messages == 0 || self.msg_bytes == 0 {
            return Err(SimError::InvalidArgument("empty workload".into()));
        }
        let ppm = self.packets_per_message();
        let mut packets = Vec::with_capacity((self.messages * ppm) as usize);
        let mut m = 0;
        while m < self.messages {
            let group: Vec<u64> = (m..(m + self.interleave as u64).min(self.messages)).collect();
            for k in 0..ppm {
                for &msg in &group {
                    let off = k * u64::from(self.mtu);
                    let len = (self.msg_bytes - off).min(u64::from(self.mtu)) as u32;
                    let size = len.max(MIN_PACKET_BYTES);
                    let id = self.first_msg_id + msg;
                    packets.push(Packet {
                        msg_id: MsgId(id),
                        flow: FlowKey(id.to_le_bytes().to_vec()),
                        size_bytes: size,
                        kind: if k == 0 {
                            PacketKind::Header
                        } else {
                            PacketKind::Payload
                        },
                        eom: k + 1 == ppm,
                        payload: payload(id, k, off, size).map(Arc::from),
                        arrival: None,
                        msg_offset: 0,
                    });
                }
            }
            m += group.len() as u64;
        }
        Trace::new(packets)
    }

    pub fn build(&self) -> Result<Trace, SimError> {
        self.build_with(|_, _, _, _| None)
    }
}
