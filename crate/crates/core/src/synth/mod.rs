// SPDX-License-Identifier: Apache-2.0

//! Test-guided enumerative synthesis.

mod cost;
mod search;
mod testcase;

pub use cost::{default_latency_table, parse_latency_table, Cost, CostError, CostMode, CostModel};
pub use search::{
    alphabet, alphabet_regs, default_imm_pool, state_distance, synthesize, Decision, PruneConfig, SearchBudget,
    SearchStats, SynthOutcome, SynthProblem,
};
pub use testcase::{generate_tests, implicit_byte, random_registers, Testcase};

use thiserror::Error;

use crate::machine::FaultKind;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SynthError {
    #[error("no test cases")]
    NoTests,
    #[error("original program traps on a test: {0}")]
    OriginalTraps(FaultKind),
    #[error(transparent)]
    Cost(#[from] CostError),
}
