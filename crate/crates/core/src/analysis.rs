//! Closed-form sizing formulas.

use crate::error::SimError;

fn positive(name: &str, v: f64) -> Result<f64, SimError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(SimError::InvalidArgument(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

/// Longest handler duration (ns) that `hpus` cores can afford per packet
/// while keeping up with `rate_gbps` of `pkt_bytes` packets.
pub fn budget_ns(hpus: u64, pkt_bytes: u64, rate_gbps: f64) -> Result<f64, SimError> {
    if hpus == 0 || pkt_bytes == 0 {
        return Err(SimError::InvalidArgument("hpus and pkt_bytes must be positive".into()));
    }
    let rate = positive("rate_gbps", rate_gbps)?;
    Ok((hpus * pkt_bytes * 8) as f64 / rate)
}

/// Buffer (bytes) needed to hold `rate_gbps` of traffic for `latency_ns`.
pub fn littles_buffer_bytes(rate_gbps: f64, latency_ns: f64) -> Result<f64, SimError> {
    let rate = positive("rate_gbps", rate_gbps)?;
    if !latency_ns.is_finite() || latency_ns < 0.0 {
        return Err(SimError::InvalidArgument(format!(
            "latency_ns must be >= 0, got {latency_ns}"
        )));
    }
    Ok(rate * latency_ns / 8.0)
}

/// Throughput bound (Gbit/s) of `hpus` cores spending `cycles` per packet
/// plus `overhead` cycles of runtime, capped by the interconnect.
pub fn max_throughput_gbps(hpus: u64, pkt_bytes: u64, cycles: u64, overhead: u64, link_gbps: f64) -> f64 {
    let per_hpu = (pkt_bytes * 8) as f64 / (cycles + overhead).max(1) as f64;
    (hpus as f64 * per_hpu).min(link_gbps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_examples() {
        assert_eq!(budget_ns(32, 64, 400.0).unwrap(), 40.96);
        assert_eq!(budget_ns(32, 1024, 400.0).unwrap(), 655.36);
        assert!(budget_ns(32, 64, 0.0).is_err());
        assert!(budget_ns(0, 64, 400.0).is_err());
        assert!(budget_ns(32, 64, f64::INFINITY).is_err());
    }

    #[test]
    fn littles_examples() {
        assert_eq!(littles_buffer_bytes(800.0, 3000.0).unwrap(), 300_000.0);
        assert_eq!(littles_buffer_bytes(400.0, 0.0).unwrap(), 0.0);
        assert_eq!(littles_buffer_bytes(200.0, 1000.0).unwrap(), 25_000.0);
        assert!(littles_buffer_bytes(-1.0, 10.0).is_err());
        assert!(littles_buffer_bytes(1.0, -10.0).is_err());
    }

    #[test]
    fn throughput_bound() {
        assert_eq!(max_throughput_gbps(32, 64, 0, 8, 512.0), 512.0);
        assert!((max_throughput_gbps(32, 64, 64, 8, 512.0) - 32.0 * 512.0 / 72.0).abs() < 1e-9);
    }
}
