use crate::engine::SimTime;

/// Fixed-rate data sink (PCIe host interface, NIC outbound port).
///
/// Requests are served FIFO in call order; time is tracked in picoseconds so
/// rates that are not a whole number of bytes per cycle do not drift.
#[derive(Debug, Clone)]
pub struct RateSink {
    pub name: &'static str,
    pub gbps: f64,
    next_free_ps: u64,
    pub bytes: u64,
    pub busy_ps: u64,
}

impl RateSink {
    pub fn new(name: &'static str, gbps: f64) -> Self {
        assert!(gbps > 0.0, "sink rate must be positive");
        Self {
            name,
            gbps,
            next_free_ps: 0,
            bytes: 0,
            busy_ps: 0,
        }
    }

    fn duration_ps(&self, bytes: u64) -> u64 {
        // 1 Gbit/s moves one bit per ns.
        ((bytes as f64 * 8.0 * 1000.0) / self.gbps).round() as u64
    }

    /// Streams `bytes` whose first byte is available at `first` and whose last
    /// byte is available at `last`. Returns the cycle the transfer has fully
    /// drained into the sink.
    pub fn serve(&mut self, first: SimTime, last: SimTime, bytes: u64) -> SimTime {
        let start = self.next_free_ps.max(first * 1000);
        let dur = self.duration_ps(bytes);
        self.next_free_ps = start + dur;
        self.bytes += bytes;
        self.busy_ps += dur;
        let end_ps = (start + dur).max(last * 1000);
        end_ps.div_ceil(1000)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_is_respected() {
        let mut s = RateSink::new("pcie", 512.0);
        let mut end = 0;
        for _ in 0..1000 {
            end = s.serve(0, 0, 64);
        }
        assert_eq!(end, 1000);
        let mut s = RateSink::new("net", 400.0);
        for _ in 0..1000 {
            end = s.serve(0, 0, 64);
        }
        assert_eq!(end, 1280);
    }

    #[test]
    fn waits_for_data() {
        let mut s = RateSink::new("pcie", 512.0);
        assert_eq!(s.serve(10, 12, 64), 12);
        assert_eq!(s.serve(0, 0, 64), 12);
    }
}
