//! Architectural configuration and its validation.
//!
//! Defaults describe the reference 4-cluster, 32-HPU engine. The file format
//! is TOML; unknown keys are rejected. Timing calibration constants live
//! under the `[memory]` table.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::SimError;

const KIB: u64 = 1024;
const MIB: u64 = 1024 * KIB;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DispatchPolicy {
    /// One blocked task blocks every later task.
    #[default]
    InOrder,
    /// The dispatcher may pass a blocked task and dispatch a later one.
    SkipBlocked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PsPinConfig {
    pub num_clusters: usize,
    pub hpus_per_cluster: usize,

    pub l2_pkt_buffer_bytes: u64,
    pub l2_pkt_banks: usize,
    pub l2_handler_bytes: u64,
    pub l2_handler_banks: usize,
    pub prog_mem_bytes: u64,

    pub l1_bytes_per_cluster: u64,
    pub l1_pkt_region_bytes: u64,
    pub l1_runtime_bytes: u64,
    pub l1_scratchpad_bytes: u64,
    pub l1_banks: usize,

    pub runtime_invoke_cycles: u64,
    pub runtime_doorbell_cycles: u64,
    pub her_to_csched_cycles: u64,
    /// Worst-case wait at a cluster's feedback arbiter; reported, not enforced.
    pub feedback_arbiter_max_delay: u64,
    /// Worst-case wait at the inter-cluster notification merge; reported, not enforced.
    pub cluster_arbiter_max_delay: u64,
    /// Cluster arbiter grant to NIC inbound engine.
    pub notify_return_cycles: u64,
    pub command_issue_cycles: u64,
    pub exception_reset_cycles: u64,

    pub mpq_pool: usize,
    pub her_queue_depth: usize,
    pub csched_fifo_depth: usize,
    pub dispatch_policy: DispatchPolicy,
    pub lru_scan_period: u64,

    /// Ingress rate in Gbit/s; 0 leaves injection unlimited.
    pub injection_gbps: f64,

    pub memory: MemoryConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MemoryConfig {
    pub wide_link_bits: u32,
    pub narrow_link_bits: u32,
    pub l2_pkt_word_bits: u32,
    pub l2_handler_word_bits: u32,
    pub l1_word_bits: u32,

    /// Cluster DMA fixed latency; a transfer of `n` beats completes after
    /// `dma_base_cycles + n * dma_beat_cycles` when unloaded.
    pub dma_base_cycles: u64,
    pub dma_beat_cycles: u64,

    /// Single-word HPU access latencies.
    pub local_l1_latency: u64,
    pub remote_l1_latency: u64,
    pub l2_latency: u64,

    /// Round-trip traversal latency for outbound/off-cluster DMA reads.
    pub outbound_l2_read_latency: u64,
    pub outbound_l1_read_latency: u64,
    pub outbound_max_outstanding: usize,
    pub outbound_queue_depth: usize,
    pub command_response_cycles: u64,

    pub pcie_gbps: f64,
    pub nic_out_gbps: f64,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self {
            wide_link_bits: 512,
            narrow_link_bits: 32,
            l2_pkt_word_bits: 512,
            l2_handler_word_bits: 64,
            l1_word_bits: 32,
            dma_base_cycles: 11,
            dma_beat_cycles: 1,
            local_l1_latency: 1,
            remote_l1_latency: 15,
            l2_latency: 20,
            outbound_l2_read_latency: 6,
            outbound_l1_read_latency: 20,
            outbound_max_outstanding: 8,
            outbound_queue_depth: 16,
            command_response_cycles: 1,
            pcie_gbps: 512.0,
            nic_out_gbps: 512.0,
        }
    }
}

impl Default for PsPinConfig {
    fn default() -> Self {
        Self {
            num_clusters: 4,
            hpus_per_cluster: 8,
            l2_pkt_buffer_bytes: 4 * MIB,
            l2_pkt_banks: 32,
            l2_handler_bytes: 4 * MIB,
            l2_handler_banks: 64,
            prog_mem_bytes: 32 * KIB,
            l1_bytes_per_cluster: MIB,
            l1_pkt_region_bytes: 32 * KIB,
            l1_runtime_bytes: 8 * KIB,
            l1_scratchpad_bytes: 984 * KIB,
            l1_banks: 64,
            runtime_invoke_cycles: 7,
            runtime_doorbell_cycles: 1,
            her_to_csched_cycles: 3,
            feedback_arbiter_max_delay: 6,
            cluster_arbiter_max_delay: 2,
            notify_return_cycles: 2,
            command_issue_cycles: 7,
            exception_reset_cycles: 32,
            mpq_pool: 256,
            her_queue_depth: 64,
            csched_fifo_depth: 16,
            dispatch_policy: DispatchPolicy::InOrder,
            lru_scan_period: 64,
            injection_gbps: 0.0,
            memory: MemoryConfig::default(),
        }
    }
}

/// One failed configuration check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl PsPinConfig {
    pub fn total_hpus(&self) -> usize {
        self.num_clusters * self.hpus_per_cluster
    }

    pub fn wide_beat_bytes(&self) -> u64 {
        u64::from(self.memory.wide_link_bits / 8)
    }

    pub fn from_toml_str(s: &str) -> Result<Self, SimError> {
        toml::from_str(s).map_err(|e| SimError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Returns every violated invariant; an empty list means the config can
    /// be instantiated.
    pub fn validate(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        let mut bad = |field: &'static str, message: String| v.push(Violation { field, message });

        if self.num_clusters == 0 {
            bad("num_clusters", "must be at least 1".into());
        }
        if self.hpus_per_cluster == 0 {
            bad("hpus_per_cluster", "must be at least 1".into());
        }
        let pow2_sizes: [(&'static str, u64); 6] = [
            ("l2_pkt_buffer_bytes", self.l2_pkt_buffer_bytes),
            ("l2_handler_bytes", self.l2_handler_bytes),
            ("prog_mem_bytes", self.prog_mem_bytes),
            ("l1_bytes_per_cluster", self.l1_bytes_per_cluster),
            ("l1_pkt_region_bytes", self.l1_pkt_region_bytes),
            ("l1_runtime_bytes", self.l1_runtime_bytes),
        ];
        for (field, size) in pow2_sizes {
            if !size.is_power_of_two() {
                bad(field, format!("{size} is not a power of two"));
            }
        }
        let pow2_counts: [(&'static str, usize); 3] = [
            ("l2_pkt_banks", self.l2_pkt_banks),
            ("l2_handler_banks", self.l2_handler_banks),
            ("l1_banks", self.l1_banks),
        ];
        for (field, n) in pow2_counts {
            if !n.is_power_of_two() {
                bad(field, format!("{n} is not a power of two"));
            }
        }
        let m = &self.memory;
        for (field, bits) in [
            ("memory.wide_link_bits", m.wide_link_bits),
            ("memory.narrow_link_bits", m.narrow_link_bits),
            ("memory.l2_pkt_word_bits", m.l2_pkt_word_bits),
            ("memory.l2_handler_word_bits", m.l2_handler_word_bits),
            ("memory.l1_word_bits", m.l1_word_bits),
        ] {
            if bits < 32 || !bits.is_power_of_two() {
                bad(field, format!("{bits} must be a power of two >= 32"));
            }
        }
        if m.l2_pkt_word_bits != m.wide_link_bits {
            bad(
                "memory.l2_pkt_word_bits",
                "packet buffer word must match the wide link width".into(),
            );
        }

        let partition = self.l1_pkt_region_bytes + self.l1_runtime_bytes + self.l1_scratchpad_bytes;
        if partition > self.l1_bytes_per_cluster {
            bad(
                "l1_scratchpad_bytes",
                format!(
                    "partition exceeds {} bytes ({partition} requested)",
                    self.l1_bytes_per_cluster
                ),
            );
        } else if partition < self.l1_bytes_per_cluster {
            bad(
                "l1_scratchpad_bytes",
                format!("partition covers {partition} of {} bytes", self.l1_bytes_per_cluster),
            );
        }
        for (field, size) in [
            ("l2_pkt_buffer_bytes", self.l2_pkt_buffer_bytes),
            ("l2_handler_bytes", self.l2_handler_bytes),
        ] {
            if size > crate::memory::MAX_WINDOW {
                bad(
                    field,
                    format!("{size} exceeds the {} byte address window", crate::memory::MAX_WINDOW),
                );
            }
        }
        if self.l1_bytes_per_cluster > crate::memory::L1_STRIDE {
            bad(
                "l1_bytes_per_cluster",
                format!(
                    "exceeds the {} byte per-cluster address window",
                    crate::memory::L1_STRIDE
                ),
            );
        }
        if self.num_clusters > 64 {
            bad("num_clusters", "at most 64 clusters fit the address map".into());
        }
        if self.l1_pkt_region_bytes < self.wide_beat_bytes() {
            bad("l1_pkt_region_bytes", "smaller than one wide beat".into());
        }
        if self.mpq_pool == 0 {
            bad("mpq_pool", "must be at least 1".into());
        }
        if self.her_queue_depth == 0 {
            bad("her_queue_depth", "must be at least 1".into());
        }
        if self.csched_fifo_depth == 0 {
            bad("csched_fifo_depth", "must be at least 1".into());
        }
        if self.lru_scan_period == 0 {
            bad("lru_scan_period", "must be at least 1".into());
        }
        if self.injection_gbps < 0.0 || !self.injection_gbps.is_finite() {
            bad("injection_gbps", "must be finite and >= 0".into());
        }
        if m.outbound_max_outstanding == 0 {
            bad("memory.outbound_max_outstanding", "must be at least 1".into());
        }
        if m.outbound_queue_depth == 0 {
            bad("memory.outbound_queue_depth", "must be at least 1".into());
        }
        if m.dma_beat_cycles == 0 {
            bad("memory.dma_beat_cycles", "must be at least 1".into());
        }
        for (field, rate) in [
            ("memory.pcie_gbps", m.pcie_gbps),
            ("memory.nic_out_gbps", m.nic_out_gbps),
        ] {
            if !(rate > 0.0 && rate.is_finite()) {
                bad(field, "must be a positive rate".into());
            }
        }
        v
    }

    pub fn validated(self) -> Result<Self, SimError> {
        let violations = self.validate();
        if violations.is_empty() {
            Ok(self)
        } else {
            Err(SimError::InvalidConfig(violations))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_with_32_hpus() {
        let cfg = PsPinConfig::default();
        assert!(cfg.validate().is_empty(), "{:?}", cfg.validate());
        assert_eq!(cfg.total_hpus(), 32);
    }

    #[test]
    fn oversized_l1_partition_is_rejected() {
        let cfg = PsPinConfig {
            l1_scratchpad_bytes: 985 * KIB,
            ..Default::default()
        };
        let v = cfg.validate();
        assert_eq!(v.len(), 1);
        assert!(v[0].message.contains("partition exceeds"));
    }

    #[test]
    fn doubled_cluster_count_is_valid() {
        let cfg = PsPinConfig {
            num_clusters: 8,
            ..Default::default()
        };
        assert!(cfg.validate().is_empty());
        assert_eq!(cfg.total_hpus(), 64);
    }

    #[test]
    fn non_power_of_two_sizes_are_reported() {
        let cfg = PsPinConfig {
            l2_pkt_buffer_bytes: 3 * MIB,
            l1_banks: 48,
            ..Default::default()
        };
        let fields: Vec<_> = cfg.validate().iter().map(|v| v.field).collect();
        assert_eq!(fields, vec!["l2_pkt_buffer_bytes", "l1_banks"]);
    }

    #[test]
    fn toml_round_trip_and_unknown_keys() {
        let cfg = PsPinConfig::default();
        let text = cfg.to_toml_string();
        assert_eq!(PsPinConfig::from_toml_str(&text).unwrap(), cfg);

        let partial = PsPinConfig::from_toml_str("num_clusters = 8\n[memory]\nl2_latency = 30\n").unwrap();
        assert_eq!(partial.num_clusters, 8);
        assert_eq!(partial.memory.l2_latency, 30);
        assert_eq!(partial.hpus_per_cluster, 8);

        assert!(PsPinConfig::from_toml_str("num_cluster = 8\n").is_err());
        assert!(PsPinConfig::from_toml_str("[memory]\nbogus = 1\n").is_err());
    }
}
