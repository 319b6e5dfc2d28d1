// SPDX-License-Identifier: Apache-2.0

//! Rewrite rules: abstraction of verified rewrites, a line-oriented rule
//! store, and matching with de-abstraction and re-verification.

mod store;

pub use store::{RuleStore, StoreError};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::equiv::{check_equiv, EquivError, EquivQuery, SolverConfig, Verdict};
use crate::isa::{Insn, Instruction, Reg, RegSet};
use crate::machine::{LiveOut, RegType, RegTypeMap};
use crate::safety::check_safety;
use crate::slicer::Slice;
use crate::synth::{Cost, CostModel};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RuleError {
    #[error("not abstractable: {0}")]
    NotAbstractable(String),
}

/// Required residue of a base's first offset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AlignResidue {
    pub base: Reg,
    pub modulus: u8,
    pub residue: u8,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Preconds {
    /// Abstract registers written by the rewrite pair that must be dead.
    pub dead_regs: Vec<Reg>,
    /// Entry types of abstract registers the pattern reads before writing;
    /// pointer offsets are not compared.
    pub entry_types: BTreeMap<Reg, RegType>,
    pub align: Vec<AlignResidue>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Costs {
    pub size: i64,
    /// Latency saving as a fraction `n/d`, in nanoseconds.
    pub latency: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub origin: String,
    /// Seconds since the Unix epoch.
    pub discovered: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RewriteRule {
    pub pattern: Vec<Insn>,
    pub replacement: Vec<Insn>,
    pub preconds: Preconds,
    pub cost_delta_size: i64,
    pub cost_delta_latency: Cost,
    pub provenance: Provenance,
}

impl RewriteRule {
    pub fn fingerprint(&self) -> String {
        fingerprint(&self.pattern)
    }
}

/// Opcode mnemonics in order.
pub fn fingerprint(insns: &[Insn]) -> String {
    insns.iter().map(|i| i.mnemonic()).collect::<Vec<_>>().join(" ")
}

/// Concrete-to-abstract renaming and per-base offset normalization of a
/// concrete instruction sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Abstraction {
    pub insns: Vec<Insn>,
    /// Concrete register for each abstract number.
    pub regs: Vec<Reg>,
    /// Normalized bases (concrete) and their first offsets.
    pub bases: BTreeMap<Reg, i16>,
}

fn first_appearance<'a>(seq: impl IntoIterator<Item = &'a Insn>) -> Vec<Reg> {
    let mut out = Vec::new();
    for i in seq {
        for r in i.operand_regs() {
            if r != Reg::FP && !out.contains(&r) {
                out.push(r);
            }
        }
    }
    out
}

fn mem_base(i: &Insn) -> Option<Reg> {
    match *i {
        Insn::Load { base, .. } | Insn::Store { base, .. } => Some(base),
        Insn::Alu { .. } => None,
    }
}

/// Bases never redefined in `insns`, with their first offsets.
fn entry_bases(insns: &[Insn]) -> BTreeMap<Reg, i16> {
    let defs: RegSet = insns.iter().filter_map(|i| i.def()).collect();
    let mut out = BTreeMap::new();
    for i in insns {
        if let Some(b) = mem_base(i) {
            if !defs.contains(b) {
                out.entry(b).or_insert(i.offset());
            }
        }
    }
    out
}

fn shift(i: &Insn, bases: &BTreeMap<Reg, i16>, sign: i32) -> Option<Insn> {
    match mem_base(i).and_then(|b| bases.get(&b)) {
        Some(&first) => {
            let off = i.offset() as i32 + sign * first as i32;
            Some(i.with_offset(i16::try_from(off).ok()?))
        }
        None => Some(*i),
    }
}

fn rename(i: &Insn, regs: &[Reg]) -> Insn {
    i.map_regs(|r| if r == Reg::FP { r } else { Reg::new(regs.iter().position(|x| *x == r).unwrap() as u8).unwrap() })
}

/// Abstracts a concrete sequence on its own (the matching side).
pub fn abstract_insns(insns: &[Insn]) -> Option<Abstraction> {
    let regs = first_appearance(insns);
    let bases = entry_bases(insns);
    let out = insns.iter().map(|i| shift(i, &bases, -1).map(|s| rename(&s, &regs))).collect::<Option<Vec<_>>>()?;
    Some(Abstraction { insns: out, regs, bases })
}

/// Registers read before any write in `insns`.
fn upward_exposed(insns: &[Insn]) -> RegSet {
    let mut defined = RegSet::EMPTY;
    let mut out = RegSet::EMPTY;
    for i in insns {
        out = out.union(i.uses().minus(defined));
        if let Some(d) = i.def() {
            defined.insert(d);
        }
    }
    out
}

fn residues(insns: &[Insn], bases: &BTreeMap<Reg, i16>, regs: &[Reg]) -> Vec<AlignResidue> {
    let mut out = Vec::new();
    for (&b, &first) in bases {
        let m = insns.iter().filter(|i| mem_base(i) == Some(b)).filter_map(|i| i.size()).max().unwrap_or(1);
        let base = if b == Reg::FP { b } else { Reg::new(regs.iter().position(|x| *x == b).unwrap() as u8).unwrap() };
        out.push(AlignResidue { base, modulus: m, residue: (first as i32).rem_euclid(m as i32) as u8 });
    }
    out
}

/// Turns a verified rewrite into a rule: registers are renamed in joint
/// first-appearance order and offsets off unmodified bases become deltas
/// from the base's first offset. Immediates stay concrete.
pub fn abstract_rule(
    orig: &[Insn],
    rewrite: &[Insn],
    live: &LiveOut,
    entry: &RegTypeMap,
    latency: &CostModel,
    origin: &str,
) -> Result<RewriteRule, RuleError> {
    let regs = first_appearance(orig);
    if let Some(r) = first_appearance(rewrite).into_iter().find(|r| !regs.contains(r)) {
        return Err(RuleError::NotAbstractable(format!("rewrite uses {} which the pattern does not", r)));
    }
    let bases = entry_bases(orig);
    if let Some(b) = rewrite.iter().filter_map(|i| i.def()).find(|d| bases.contains_key(d)) {
        return Err(RuleError::NotAbstractable(format!("rewrite redefines base {}", b)));
    }
    let conv = |insns: &[Insn]| {
        insns
            .iter()
            .map(|i| shift(i, &bases, -1).map(|s| rename(&s, &regs)))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| RuleError::NotAbstractable("offset out of range".into()))
    };
    let pattern = conv(orig)?;
    let replacement = conv(rewrite)?;
    let abs = |r: Reg| Reg::new(regs.iter().position(|x| *x == r).unwrap() as u8).unwrap();
    let defs: RegSet = orig.iter().chain(rewrite).filter_map(|i| i.def()).collect();
    let dead_regs = defs.minus(live.regs).iter().map(abs).collect();
    let entry_types = upward_exposed(orig).iter().filter(|&r| r != Reg::FP).map(|r| (abs(r), entry.get(r))).collect();
    let both: Vec<Insn> = orig.iter().chain(rewrite).copied().collect();
    let lat = |p: &[Insn]| latency.cost_of(p).unwrap_or(Cost::from_integer(0));
    Ok(RewriteRule {
        pattern,
        replacement,
        preconds: Preconds { dead_regs, entry_types, align: residues(&both, &bases, &regs) },
        cost_delta_size: orig.len() as i64 - rewrite.len() as i64,
        cost_delta_latency: lat(orig) - lat(rewrite).min(lat(orig)),
        provenance: Provenance {
            origin: origin.to_string(),
            discovered: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        },
    })
}

fn same_kind(a: RegType, b: RegType) -> bool {
    match (a, b) {
        (RegType::Ptr { region: x, .. }, RegType::Ptr { region: y, .. }) => x == y,
        _ => a == b,
    }
}

/// Instantiates `rule` for a slice whose abstraction equals the rule's
/// pattern, if every precondition holds.
pub fn instantiate(rule: &RewriteRule, abs: &Abstraction, slice: &Slice) -> Option<Vec<Insn>> {
    if rule.pattern != abs.insns {
        return None;
    }
    let conc = |r: Reg| if r == Reg::FP { Some(r) } else { abs.regs.get(r.index()).copied() };
    for &d in &rule.preconds.dead_regs {
        if slice.live.regs.contains(conc(d)?) {
            return None;
        }
    }
    for (&r, &t) in &rule.preconds.entry_types {
        if !same_kind(slice.entry.get(conc(r)?), t) {
            return None;
        }
    }
    for a in &rule.preconds.align {
        let first = *abs.bases.get(&conc(a.base)?)?;
        if (first as i32).rem_euclid(a.modulus as i32) != a.residue as i32 {
            return None;
        }
    }
    rule.replacement
        .iter()
        .map(|i| {
            let mut bad = false;
            let c = i.map_regs(|r| match conc(r) {
                Some(x) => x,
                None => {
                    bad = true;
                    r
                }
            });
            if bad {
                None
            } else {
                shift(&c, &abs.bases, 1)
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MatchOutcome {
    Applied { rule: usize, insns: Vec<Insn> },
    NoMatch,
}

/// Tries the store's rules for this slice, best saving first. A
/// de-abstracted rewrite is used only if it passes the safety checks and is
/// proven equivalent on the concrete slice.
pub fn match_and_apply(
    slice: &Slice,
    store: &RuleStore,
    cost: &CostModel,
    solver: &SolverConfig,
) -> Result<MatchOutcome, EquivError> {
    let plain = slice.plain_insns();
    let Some(abs) = abstract_insns(&plain) else { return Ok(MatchOutcome::NoMatch) };
    let before = cost.cost_of(&plain).ok();
    for idx in store.candidates(&abs.insns) {
        let rule = &store.rules()[idx];
        let Some(new) = instantiate(rule, &abs, slice) else { continue };
        if new.iter().any(|i| i.validate().is_err()) {
            continue;
        }
        match (before, cost.cost_of(&new).ok()) {
            (Some(b), Some(a)) if a < b => {}
            _ => continue,
        }
        let cand: Vec<Instruction> = new.iter().map(|i| Instruction::new(*i)).collect();
        if !check_safety(&cand, &slice.entry).ok() {
            continue;
        }
        let q = EquivQuery::new(&slice.insns, &cand, slice.live, slice.entry);
        if check_equiv(&q, solver)? == Verdict::Equivalent {
            return Ok(MatchOutcome::Applied { rule: idx, insns: new });
        }
    }
    Ok(MatchOutcome::NoMatch)
}

#[cfg(test)]
mod tests;
