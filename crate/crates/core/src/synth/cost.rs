// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::fmt;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::isa::{Insn, OpClass};

/// Cost units: instruction count in size mode, nanoseconds in latency mode.
pub type Cost = Ratio<u64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CostMode {
    #[default]
    Size,
    Latency,
}

impl fmt::Display for CostMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CostMode::Size => "size",
            CostMode::Latency => "latency",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CostError {
    #[error("latency table has no entry for {0}")]
    MissingLatency(OpClass),
    #[error("latency table line {line}: {reason}")]
    BadTable { line: usize, reason: String },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CostModel {
    pub mode: CostMode,
    pub latency: BTreeMap<OpClass, Cost>,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel::size()
    }
}

impl CostModel {
    pub fn size() -> CostModel {
        CostModel { mode: CostMode::Size, latency: BTreeMap::new() }
    }

    pub fn latency(table: BTreeMap<OpClass, Cost>) -> CostModel {
        CostModel { mode: CostMode::Latency, latency: table }
    }

    pub fn insn_cost(&self, i: &Insn) -> Result<Cost, CostError> {
        match self.mode {
            CostMode::Size => Ok(Cost::from_integer(1)),
            CostMode::Latency => {
                let class = i.op_class();
                class
                    .lookup_chain()
                    .iter()
                    .find_map(|c| self.latency.get(c))
                    .copied()
                    .ok_or(CostError::MissingLatency(class))
            }
        }
    }

    pub fn cost_of<'a>(&self, insns: impl IntoIterator<Item = &'a Insn>) -> Result<Cost, CostError> {
        insns.into_iter().try_fold(Cost::from_integer(0), |acc, i| Ok(acc + self.insn_cost(i)?))
    }
}

/// Built-in latencies in nanoseconds, rough figures for a JIT-compiled
/// program on a modern x86-64 core.
pub fn default_latency_table() -> BTreeMap<OpClass, Cost> {
    let r = |n: u64, d: u64| Cost::new(n, d);
    BTreeMap::from([
        (OpClass::Alu, r(1, 4)),
        (OpClass::Alu32, r(1, 4)),
        (OpClass::Mul, r(3, 4)),
        (OpClass::Div, r(10, 1)),
        (OpClass::Mod, r(10, 1)),
        (OpClass::Ldx, r(1, 1)),
        (OpClass::Stx, r(1, 1)),
        (OpClass::St, r(1, 1)),
    ])
}

fn parse_ratio(s: &str) -> Option<Cost> {
    if let Some((n, d)) = s.split_once('/') {
        let (n, d) = (n.trim().parse::<u64>().ok()?, d.trim().parse::<u64>().ok()?);
        return (d != 0).then(|| Cost::new(n, d));
    }
    match s.split_once('.') {
        Some((int, frac)) => {
            if frac.len() > 9 || !frac.chars().all(|c| c.is_ascii_digit()) {
                return None;
            }
            let scale = 10u64.pow(frac.len() as u32);
            let i = if int.is_empty() { 0 } else { int.parse::<u64>().ok()? };
            let f = if frac.is_empty() { 0 } else { frac.parse::<u64>().ok()? };
            Some(Cost::new(i.checked_mul(scale)?.checked_add(f)?, scale))
        }
        None => s.parse::<u64>().ok().map(Cost::from_integer),
    }
}

/// Parses lines of `OPCLASS <nanoseconds>`; `#` starts a comment.
/// Values may be integers, decimals or fractions `n/d`, and must be positive.
pub fn parse_latency_table(text: &str) -> Result<BTreeMap<OpClass, Cost>, CostError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |reason: String| CostError::BadTable { line: i + 1, reason };
        let mut parts = line.split_whitespace();
        let (Some(name), Some(val), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(err("expected `OPCLASS <nanoseconds>`".into()));
        };
        let class = OpClass::from_name(name).ok_or_else(|| err(format!("unknown opcode class `{}`", name)))?;
        let v = parse_ratio(val).ok_or_else(|| err(format!("bad latency `{}`", val)))?;
        if v == Cost::from_integer(0) {
            return Err(err("latency must be positive".into()));
        }
        out.insert(class, v);
    }
    Ok(out)
}
