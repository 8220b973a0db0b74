mod common;

use common::cases;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn header_payload_completion_order(seed in any::<u64>()) {
        cases::ordering(seed).map_err(TestCaseError::fail)?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn no_deadlock_under_backpressure(seed in any::<u64>()) {
        cases::backpressure(seed).map_err(TestCaseError::fail)?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn out_of_bounds_handlers_fault_without_corruption(seed in any::<u64>()) {
        cases::out_of_bounds(seed).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn watchdog_kills_at_threshold(threshold in 50u64..20_000, step in 1u64..64, mem_loop in any::<bool>()) {
        cases::watchdog(threshold, step, mem_loop).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn stale_messages_are_reset(seed in any::<u64>(), threshold in 200u64..5_000) {
        cases::stale_reset(seed, threshold).map_err(TestCaseError::fail)?;
    }
}
