//! Cycle-approximate discrete-event model of an in-NIC packet-processing
//! engine built from clusters of small RISC-V cores.

pub mod analysis;
pub mod cluster;
pub mod config;
pub mod engine;
pub mod error;
pub mod experiments;
pub mod handlers;
pub mod hpu_runtime;
pub mod memory;
pub mod nic_inbound;
pub mod outbound;
pub mod report;
pub mod scheduler;
pub mod sim;
pub mod stats;
pub mod types;

pub use config::{DispatchPolicy, MemoryConfig, PsPinConfig};
pub use error::SimError;
