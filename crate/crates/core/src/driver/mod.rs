// SPDX-License-Identifier: Apache-2.0

//! The optimization pipeline: per-block slicing, rule matching and
//! synthesis per slice, recomposition with guards, and reporting.

mod cegis;
mod pipeline;
mod report;

pub use cegis::{cegis_optimize_slice, slice_seed, CegisStats, SliceOutcome};
pub use pipeline::{optimize_program, optimize_slice, retarget, Optimized, SliceResult, Source};
pub use report::{BlockReport, OptimizationReport, SliceReport, Totals};

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::Serialize;
use thiserror::Error;

use crate::equiv::SolverConfig;
use crate::machine::RegTypeMap;
use crate::slicer::Annotations;
use crate::synth::{CostModel, PruneConfig};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DriverError {
    #[error("window size must be at least 1")]
    ZeroWindow,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Synthesis only, mining rules from every accepted rewrite.
    #[default]
    Offline,
    /// Rule matching only.
    Online,
    /// Rule matching first, synthesis for slices no rule covers.
    Hybrid,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Offline => "offline",
            Mode::Online => "online",
            Mode::Hybrid => "hybrid",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Mode, String> {
        match s {
            "offline" => Ok(Mode::Offline),
            "online" => Ok(Mode::Online),
            "hybrid" => Ok(Mode::Hybrid),
            _ => Err(format!("unknown mode `{}`", s)),
        }
    }
}

#[derive(Clone, Debug)]
pub struct PipelineConfig {
    pub mode: Mode,
    /// Maximum slice window length.
    pub window: usize,
    /// Wall-time budget per slice.
    pub synth_timeout: Duration,
    pub cost: CostModel,
    pub solver: SolverConfig,
    pub seed: u64,
    /// Random tests each slice search starts with.
    pub initial_tests: usize,
    pub max_cegis_rounds: usize,
    pub prune: PruneConfig,
    pub allow_div: bool,
    /// Random states in the post-recomposition differential check.
    pub guard_states: usize,
    /// Prove each rewritten block equivalent to its input before keeping it.
    pub verify_blocks: bool,
    /// Deterministic cap on generated search nodes per synthesis round.
    pub node_limit: Option<u64>,
    /// Register types at program entry.
    pub entry: RegTypeMap,
    pub annotations: Annotations,
    /// Prefix for the origin recorded in mined rules, e.g. a file name.
    pub label: String,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            mode: Mode::Offline,
            window: 6,
            synth_timeout: Duration::from_secs(600),
            cost: CostModel::size(),
            solver: SolverConfig::default(),
            seed: 0,
            initial_tests: 4,
            max_cegis_rounds: 64,
            prune: PruneConfig::default(),
            allow_div: false,
            guard_states: 1000,
            verify_blocks: true,
            node_limit: None,
            entry: RegTypeMap::program_entry(),
            annotations: Annotations::default(),
            label: String::new(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), DriverError> {
        if self.window == 0 {
            return Err(DriverError::ZeroWindow);
        }
        Ok(())
    }
}
