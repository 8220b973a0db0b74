//! Payload handler spending a fixed number of single-cycle instructions.

use super::{Expected, Parts, WorkloadSpec};
use crate::error::SimError;
use crate::types::{ExecutionContext, HandlerSet};

pub(super) fn build(spec: &WorkloadSpec) -> Result<Parts, SimError> {
    let x = spec.instructions;
    let ctx = ExecutionContext::new(0, HandlerSet::payload_only(move |api| api.compute(x)));
    let trace = spec.builder().build()?;
    Ok((vec![ctx], trace, Vec::new(), Expected::Nothing))
}
