// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::path::Path;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{fingerprint, AlignResidue, Costs, Preconds, Provenance, RewriteRule};
use crate::isa::{parse_insn, Insn, Reg};
use crate::machine::RegType;
use crate::synth::Cost;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("rule file line {line}: {reason}")]
    CorruptRuleFile { line: usize, reason: String },
    #[error("rule file: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Serialize, Deserialize)]
struct AlignLine {
    base: String,
    modulus: u8,
    residue: u8,
}

#[derive(Serialize, Deserialize)]
struct PrecondLine {
    dead_regs: Vec<String>,
    entry_types: BTreeMap<String, String>,
    align: Vec<AlignLine>,
}

#[derive(Serialize, Deserialize)]
struct RuleLine {
    pattern: Vec<String>,
    replacement: Vec<String>,
    preconds: PrecondLine,
    costs: Costs,
    provenance: Provenance,
}

fn to_line(r: &RewriteRule) -> RuleLine {
    RuleLine {
        pattern: r.pattern.iter().map(|i| i.to_string()).collect(),
        replacement: r.replacement.iter().map(|i| i.to_string()).collect(),
        preconds: PrecondLine {
            dead_regs: r.preconds.dead_regs.iter().map(|r| r.to_string()).collect(),
            entry_types: r.preconds.entry_types.iter().map(|(r, t)| (r.to_string(), t.to_string())).collect(),
            align: r
                .preconds
                .align
                .iter()
                .map(|a| AlignLine { base: a.base.to_string(), modulus: a.modulus, residue: a.residue })
                .collect(),
        },
        costs: Costs { size: r.cost_delta_size, latency: r.cost_delta_latency.to_string() },
        provenance: r.provenance.clone(),
    }
}

fn from_line(l: RuleLine) -> Result<RewriteRule, String> {
    let insns = |v: &[String]| -> Result<Vec<Insn>, String> {
        v.iter().map(|s| parse_insn(s).map_err(|e| format!("`{}`: {}", s, e))).collect()
    };
    let reg = |s: &str| s.parse::<Reg>().map_err(|_| format!("bad register `{}`", s));
    let mut entry_types = BTreeMap::new();
    for (r, t) in &l.preconds.entry_types {
        entry_types.insert(reg(r)?, t.parse::<RegType>()?);
    }
    let align = l
        .preconds
        .align
        .iter()
        .map(|a| {
            if a.modulus == 0 || a.residue >= a.modulus {
                return Err(format!("bad residue {} mod {}", a.residue, a.modulus));
            }
            Ok(AlignResidue { base: reg(&a.base)?, modulus: a.modulus, residue: a.residue })
        })
        .collect::<Result<Vec<_>, String>>()?;
    let latency: Cost = l.costs.latency.parse().map_err(|_| format!("bad latency `{}`", l.costs.latency))?;
    Ok(RewriteRule {
        pattern: insns(&l.pattern)?,
        replacement: insns(&l.replacement)?,
        preconds: Preconds {
            dead_regs: l.preconds.dead_regs.iter().map(|s| reg(s)).collect::<Result<_, _>>()?,
            entry_types,
            align,
        },
        cost_delta_size: l.costs.size,
        cost_delta_latency: latency,
        provenance: l.provenance,
    })
}

/// Rules indexed by pattern length and opcode fingerprint.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RuleStore {
    rules: Vec<RewriteRule>,
    index: FxHashMap<(usize, String), Vec<usize>>,
}

impl RuleStore {
    pub fn new() -> RuleStore {
        RuleStore::default()
    }

    pub fn rules(&self) -> &[RewriteRule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// Adds a rule. A rule with the same pattern and preconditions is
    /// replaced only by one with a larger size saving. Returns whether the
    /// store changed.
    pub fn insert(&mut self, rule: RewriteRule) -> bool {
        let key = (rule.pattern.len(), rule.fingerprint());
        let bucket = self.index.entry(key).or_default();
        for &i in bucket.iter() {
            let old = &self.rules[i];
            if old.pattern == rule.pattern && old.preconds == rule.preconds {
                if rule.cost_delta_size > old.cost_delta_size {
                    self.rules[i] = rule;
                    return true;
                }
                return false;
            }
        }
        bucket.push(self.rules.len());
        self.rules.push(rule);
        true
    }

    /// Indices of rules whose pattern could equal `pattern`, best saving
    /// first.
    pub fn candidates(&self, pattern: &[Insn]) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .index
            .get(&(pattern.len(), fingerprint(pattern)))
            .map(|b| b.iter().copied().filter(|&i| self.rules[i].pattern == pattern).collect())
            .unwrap_or_default();
        v.sort_by_key(|&i| {
            let r = &self.rules[i];
            (std::cmp::Reverse(r.cost_delta_size), std::cmp::Reverse(r.cost_delta_latency), i)
        });
        v
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.rules {
            out.push_str(&serde_json::to_string(&to_line(r)).expect("rule serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<RuleStore, StoreError> {
        let mut s = RuleStore::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |reason: String| StoreError::CorruptRuleFile { line: i + 1, reason };
            let l: RuleLine = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
            s.insert(from_line(l).map_err(err)?);
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<RuleStore, StoreError> {
        RuleStore::from_jsonl(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), StoreError> {
        std::fs::write(path, self.to_jsonl())?;
        Ok(())
    }

    /// Adds every rule of `other`; returns how many changed the store.
    pub fn merge(&mut self, other: &RuleStore) -> usize {
        other.rules.iter().filter(|r| self.insert((*r).clone())).count()
    }
}
