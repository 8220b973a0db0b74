//! Workload library. Each workload bundles execution contexts with their
//! handlers, a packet trace, the memory image the host installs before the
//! run, and the host-visible result an independent oracle expects.

mod aggregate;
mod filtering;
mod histogram;
mod kvstore;
mod outbound;
mod reduce;
mod strided_ddt;
mod synthetic;

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::PsPinConfig;
use crate::error::SimError;
use crate::nic_inbound::{Trace, TraceBuilder};
use crate::sim::{SimOptions, Simulator};
use crate::types::ExecutionContext;

pub use filtering::fnv1a;
pub use kvstore::{KvCache, KvExpectation, KvOp, KvRequest};

/// Where outbound microbenchmarks read the packet from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    #[default]
    L1,
    L2,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::L1 => "l1",
            Source::L2 => "l2",
        }
    }
}

/// Workload parameters and handler cost constants, as stored in the
/// workload files under `workloads/`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    pub name: String,
    pub packet_bytes: u32,
    /// Adds one byte to every packet (misaligned sweep).
    #[serde(default)]
    pub misaligned: bool,
    #[serde(default = "one")]
    pub messages: u64,
    /// Bytes per message; 0 means one packet per message.
    #[serde(default)]
    pub message_bytes: u64,
    /// Messages whose packets alternate in the trace.
    #[serde(default = "one_usize")]
    pub interleave: usize,
    #[serde(default)]
    pub seed: u64,
    /// Compute cycles of the synthetic handler.
    #[serde(default)]
    pub instructions: u64,
    #[serde(default)]
    pub source: Source,
    /// Workload-specific generator parameters.
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    /// Compute cycles charged by the handlers, per operation.
    #[serde(default)]
    pub costs: BTreeMap<String, u64>,
}

fn one() -> u64 {
    1
}

fn one_usize() -> usize {
    1
}

pub const WORKLOADS: [&str; 9] = [
    "synthetic",
    "pingpong",
    "dma_to_host",
    "reduce",
    "aggregate",
    "histogram",
    "filtering",
    "kvstore",
    "strided_ddt",
];

fn preset_text(name: &str) -> Option<&'static str> {
    Some(match name {
        "synthetic" => include_str!("../../workloads/synthetic.toml"),
        "pingpong" => include_str!("../../workloads/pingpong.toml"),
        "dma_to_host" => include_str!("../../workloads/dma_to_host.toml"),
        "reduce" => include_str!("../../workloads/reduce.toml"),
        "aggregate" => include_str!("../../workloads/aggregate.toml"),
        "histogram" => include_str!("../../workloads/histogram.toml"),
        "filtering" => include_str!("../../workloads/filtering.toml"),
        "kvstore" => include_str!("../../workloads/kvstore.toml"),
        "strided_ddt" => include_str!("../../workloads/strided_ddt.toml"),
        _ => return None,
    })
}

impl WorkloadSpec {
    /// The committed workload file for `name`.
    pub fn preset(name: &str) -> Result<Self, SimError> {
        let text = preset_text(name).ok_or_else(|| {
            SimError::Workload(format!("unknown workload `{name}` (known: {})", WORKLOADS.join(", ")))
        })?;
        Self::from_toml_str(text)
    }

    pub fn from_toml_str(s: &str) -> Result<Self, SimError> {
        let spec: Self = toml::from_str(s).map_err(|e| SimError::Workload(e.to_string()))?;
        if !WORKLOADS.contains(&spec.name.as_str()) {
            return Err(SimError::Workload(format!("unknown workload `{}`", spec.name)));
        }
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("workload spec serializes")
    }

    pub fn cost(&self, key: &str) -> Result<u64, SimError> {
        self.costs
            .get(key)
            .copied()
            .ok_or_else(|| SimError::Workload(format!("{}: missing cost `{key}`", self.name)))
    }

    pub fn param(&self, key: &str) -> Result<f64, SimError> {
        self.params
            .get(key)
            .copied()
            .ok_or_else(|| SimError::Workload(format!("{}: missing parameter `{key}`", self.name)))
    }

    /// Integer parameter; rejects fractional and negative values.
    pub fn param_u64(&self, key: &str) -> Result<u64, SimError> {
        let v = self.param(key)?;
        if v < 0.0 || v.fract() != 0.0 || v > u64::MAX as f64 {
            return Err(SimError::Workload(format!(
                "{}: `{key}` must be a non-negative integer",
                self.name
            )));
        }
        Ok(v as u64)
    }

    /// Size of each packet on the wire.
    pub fn wire_bytes(&self) -> u32 {
        self.packet_bytes + u32::from(self.misaligned)
    }

    pub fn msg_bytes(&self) -> u64 {
        if self.message_bytes == 0 {
            u64::from(self.wire_bytes())
        } else {
            self.message_bytes
        }
    }

    pub(crate) fn builder(&self) -> TraceBuilder {
        TraceBuilder::new(self.messages, self.msg_bytes(), self.wire_bytes()).interleave(self.interleave)
    }

    pub(crate) fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    fn require(&self, ok: bool, what: &str) -> Result<(), SimError> {
        if ok {
            Ok(())
        } else {
            Err(SimError::Workload(format!("{}: {what}", self.name)))
        }
    }
}

pub(crate) fn random_bytes(rng: &mut impl RngCore, n: usize) -> Vec<u8> {
    let mut v = vec![0u8; n];
    rng.fill_bytes(&mut v);
    v
}

pub(crate) fn random_words(rng: &mut impl Rng, n: usize, below: u32) -> Vec<u32> {
    (0..n).map(|_| rng.random_range(0..below)).collect()
}

pub(crate) fn words_to_bytes(w: &[u32]) -> Vec<u8> {
    w.iter().flat_map(|x| x.to_le_bytes()).collect()
}

pub(crate) fn bytes_to_words(b: &[u8]) -> Vec<u32> {
    b.chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

/// Host-visible result of a workload.
#[derive(Debug, Clone, PartialEq)]
pub enum Expected {
    /// Timing-only workload.
    Nothing,
    /// Exact host memory contents at these addresses.
    Host(Vec<(u64, Vec<u8>)>),
    /// Packets sent by NIC puts, compared as a multiset of (destination, data).
    Net(Vec<(u64, Vec<u8>)>),
    Kv(KvExpectation),
}

impl Expected {
    pub fn needs_host(&self) -> bool {
        matches!(self, Expected::Host(_))
    }

    pub fn needs_net(&self) -> bool {
        matches!(self, Expected::Net(_) | Expected::Kv(_))
    }

    pub fn verify(&self, sim: &Simulator) -> Result<(), String> {
        match self {
            Expected::Nothing => Ok(()),
            Expected::Host(regions) => {
                for (addr, want) in regions {
                    let got = sim.mem.host.read(*addr, want.len());
                    if let Some(i) = got.iter().zip(want).position(|(a, b)| a != b) {
                        return Err(format!(
                            "host byte {:#x}: got {:#04x}, expected {:#04x}",
                            addr + i as u64,
                            got[i],
                            want[i]
                        ));
                    }
                }
                Ok(())
            }
            Expected::Net(packets) => {
                let mut want: Vec<_> = packets.clone();
                let mut got: Vec<_> = sim.net_log().iter().map(|p| (p.dst, p.data.clone())).collect();
                want.sort();
                got.sort();
                if got.len() != want.len() {
                    return Err(format!("{} packets sent, expected {}", got.len(), want.len()));
                }
                match got.iter().zip(&want).position(|(a, b)| a != b) {
                    Some(i) => Err(format!("sent packet to {:#x} differs from expectation", got[i].0)),
                    None => Ok(()),
                }
            }
            Expected::Kv(k) => k.verify(sim.net_log()),
        }
    }
}

/// A ready-to-run workload.
#[derive(Debug, Clone)]
pub struct Workload {
    pub spec: WorkloadSpec,
    pub contexts: Vec<ExecutionContext>,
    pub trace: Trace,
    /// Memory the host initializes before the first packet arrives.
    pub init: Vec<(u64, Vec<u8>)>,
    pub expected: Expected,
}

impl Workload {
    /// Options capturing what the oracle needs.
    pub fn options(&self) -> SimOptions {
        SimOptions {
            capture_host: self.expected.needs_host(),
            capture_net: self.expected.needs_net(),
            ..SimOptions::default()
        }
    }

    /// Builds a simulator with the workload's memory image installed.
    pub fn simulator(&self, cfg: PsPinConfig, opts: SimOptions) -> Result<Simulator, SimError> {
        let mut sim = Simulator::new(cfg, self.contexts.clone(), self.trace.clone(), opts)?;
        for (addr, data) in &self.init {
            sim.mem
                .write(*addr, data)
                .ok_or_else(|| SimError::Workload(format!("initial image at {addr:#x} is unmapped")))?;
        }
        Ok(sim)
    }

    pub fn verify(&self, sim: &Simulator) -> Result<(), String> {
        self.expected.verify(sim)
    }
}

/// Builds the workload `spec.name` for configuration `cfg`.
pub fn build(spec: &WorkloadSpec, cfg: &PsPinConfig) -> Result<Workload, SimError> {
    spec.require(
        spec.packet_bytes >= crate::types::MIN_PACKET_BYTES,
        "packet_bytes below 64",
    )?;
    spec.require(spec.messages > 0, "no messages")?;
    let (contexts, trace, init, expected) = match spec.name.as_str() {
        "synthetic" => synthetic::build(spec)?,
        "pingpong" => outbound::build_pingpong(spec)?,
        "dma_to_host" => outbound::build_dma(spec)?,
        "reduce" => reduce::build(spec, cfg)?,
        "aggregate" => aggregate::build(spec, cfg)?,
        "histogram" => histogram::build(spec, cfg)?,
        "filtering" => filtering::build(spec, cfg)?,
        "kvstore" => kvstore::build(spec, cfg)?,
        "strided_ddt" => strided_ddt::build(spec, cfg)?,
        other => return Err(SimError::Workload(format!("unknown workload `{other}`"))),
    };
    Ok(Workload {
        spec: spec.clone(),
        contexts,
        trace,
        init,
        expected,
    })
}

pub(crate) type Parts = (Vec<ExecutionContext>, Trace, Vec<(u64, Vec<u8>)>, Expected);
