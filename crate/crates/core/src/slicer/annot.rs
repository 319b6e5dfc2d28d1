// SPDX-License-Identifier: Apache-2.0

//! Per-block annotation sidecar.
//!
//! ```text
//! block 0 live-out: r0,r2,stack[-8..0)
//! block 0 types: r0=ctx,r7=mem1
//! ```

use std::collections::BTreeMap;

use thiserror::Error;

use crate::isa::Reg;
use crate::machine::{LiveOut, RegType, RegTypeMap};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("annotation line {line}: {reason}")]
pub struct AnnotationError {
    pub line: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Annotations {
    /// Replaces the inferred block-end liveness.
    pub live: BTreeMap<usize, LiveOut>,
    /// Overrides inferred entry types of the listed registers.
    pub types: BTreeMap<usize, Vec<(Reg, RegType)>>,
}

impl Annotations {
    pub fn parse(text: &str) -> Result<Annotations, AnnotationError> {
        let mut a = Annotations::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |reason: String| AnnotationError { line: i + 1, reason };
            let rest = line.strip_prefix("block").ok_or_else(|| err("expected `block N ...`".into()))?.trim_start();
            let (num, rest) = rest.split_once(char::is_whitespace).ok_or_else(|| err("missing block number".into()))?;
            let block: usize = num.parse().map_err(|_| err(format!("bad block number `{}`", num)))?;
            let rest = rest.trim_start();
            if let Some(v) = rest.strip_prefix("live-out:") {
                let l: LiveOut = v.parse().map_err(err)?;
                a.live.insert(block, l);
            } else if let Some(v) = rest.strip_prefix("types:") {
                let list = a.types.entry(block).or_default();
                for item in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                    let (r, t) =
                        item.split_once('=').ok_or_else(|| err(format!("expected `rN=type`, got `{}`", item)))?;
                    let r: Reg = r.trim().parse().map_err(|_| err(format!("bad register `{}`", r)))?;
                    if r == Reg::FP {
                        return Err(err("r10 is always a stack pointer".into()));
                    }
                    let t: RegType = t.parse().map_err(err)?;
                    list.push((r, t));
                }
            } else {
                return Err(err("expected `live-out:` or `types:`".into()));
            }
        }
        Ok(a)
    }

    pub fn apply_types(&self, block: usize, types: &mut RegTypeMap) {
        for (r, t) in self.types.get(&block).into_iter().flatten() {
            types.set(*r, *t);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::RegSet;

    #[test]
    fn parses_both_kinds() {
        let a = Annotations::parse(
            "# sidecar\nblock 0 live-out: r2\nblock 0 types: r0=ctx, r7=mem1\nblock 3 live-out: none\n",
        )
        .unwrap();
        assert_eq!(a.live[&0], LiveOut::regs(RegSet::single(Reg::R2)));
        assert_eq!(a.live[&3], LiveOut::regs(RegSet::EMPTY));
        let mut t = RegTypeMap::default();
        a.apply_types(0, &mut t);
        assert_eq!(t.get(Reg::R0), RegType::CTX);
        assert_eq!(t.get(Reg::R7), RegType::mem(1));
    }

    #[test]
    fn reports_line_numbers() {
        let e = Annotations::parse("block 0 live-out: r0\nblock x live-out: r1").unwrap_err();
        assert_eq!(e.line, 2);
        assert!(Annotations::parse("block 0 types: r10=ctx").is_err());
        assert!(Annotations::parse("block 0 frobs: r1").is_err());
    }
}
