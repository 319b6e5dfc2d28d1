// SPDX-License-Identifier: Apache-2.0

//! Splitting a straight-line block into per-destination slices and putting
//! (possibly rewritten) slices back together.

mod annot;
mod flow;
mod recompose;

pub use annot::{AnnotationError, Annotations};
pub use flow::{block_entry_types, block_live_regs, block_liveness, live_before, Access};
pub use recompose::recompose;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::isa::{Insn, Instruction, Reg};
use crate::machine::{LiveOut, RegTypeMap};
use crate::safety::type_trace;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SliceError {
    #[error("window size must be at least 1")]
    ZeroWindow,
    #[error("slices have a cyclic dependency")]
    CyclicDependency,
    #[error("a slice overwrites a register another slice still needs")]
    Clobbered,
}

/// Packs a store destination into one integer: offset, access size in
/// bytes and base register number.
pub fn mem_id(base: Reg, off: i16, width_bytes: u8) -> i64 {
    ((off as i64) << 8) | ((width_bytes as i64) << 4) | base.index() as i64
}

/// What a slice computes: a register, or memory written by a store.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum SliceId {
    Reg(Reg),
    Mem(i64),
}

impl fmt::Display for SliceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SliceId::Reg(r) => write!(f, "{}", r),
            SliceId::Mem(m) => write!(f, "mem#{}", m),
        }
    }
}

/// A window of one computation chain.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Slice {
    pub id: SliceId,
    pub insns: Vec<Instruction>,
    /// Locations observable after the window.
    pub live: LiveOut,
    /// Register types when the window starts.
    pub entry: RegTypeMap,
    /// Window index within the chain and number of windows.
    pub window: (usize, usize),
    /// Origin of the last original instruction in the window; replacement
    /// code is placed relative to it.
    pub anchor: usize,
}

impl Slice {
    pub fn plain_insns(&self) -> Vec<Insn> {
        self.insns.iter().map(|i| i.insn).collect()
    }

    /// The same window with different code.
    pub fn with_insns(&self, insns: Vec<Instruction>) -> Slice {
        Slice { insns, ..self.clone() }
    }
}

struct StoreChain {
    id: i64,
    base: Reg,
    lo: i64,
    hi: i64,
    pos: usize,
    chain: BTreeSet<usize>,
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Extracts the slices of `block` whose results are observable in
/// `live_end`, merges stores to touching byte ranges off the same base, and
/// cuts each chain into windows of at most `window` instructions.
/// Instructions without provenance get their block position as origin.
pub fn extract_slices(
    block: &[Instruction],
    live_end: LiveOut,
    entry: &RegTypeMap,
    window: usize,
) -> Result<Vec<Slice>, SliceError> {
    if window == 0 {
        return Err(SliceError::ZeroWindow);
    }
    let block: Vec<Instruction> = block
        .iter()
        .enumerate()
        .map(|(k, i)| Instruction { insn: i.insn, origin: Some(i.origin.unwrap_or(k)) })
        .collect();
    let insns: Vec<Insn> = block.iter().map(|i| i.insn).collect();
    let types = type_trace(&insns, entry);
    let access: Vec<Option<Access>> = insns.iter().zip(&types).map(|(i, t)| Access::of(i, t)).collect();
    let live = block_liveness(&insns, entry, live_end);

    let mut regs: [Option<BTreeSet<usize>>; Reg::COUNT] = Default::default();
    let mut stores: Vec<StoreChain> = Vec::new();
    for (i, insn) in insns.iter().enumerate() {
        let mut chain = BTreeSet::from([i]);
        for r in insn.uses().iter() {
            if let Some(c) = &regs[r.index()] {
                chain.extend(c);
            }
        }
        if insn.is_load() {
            let a = access[i].unwrap();
            for s in &stores {
                if access[s.pos].unwrap().may_alias(&a) {
                    chain.extend(&s.chain);
                }
            }
        }
        match *insn {
            Insn::Store { base, off, width, .. } => {
                let id = mem_id(base, off, width.bytes());
                stores.retain(|s| s.id != id);
                let (lo, hi) = (off as i64, off as i64 + width.bytes() as i64);
                stores.push(StoreChain { id, base, lo, hi, pos: i, chain });
            }
            _ => {
                let d = insn.def().expect("non-store defines a register");
                regs[d.index()] = Some(chain);
            }
        }
    }

    // chains whose result is observable
    let mut chains: Vec<(SliceId, BTreeSet<usize>)> = Vec::new();
    for r in live_end.regs.iter() {
        if let Some(c) = regs[r.index()].take() {
            chains.push((SliceId::Reg(r), c));
        }
    }
    stores.retain(|s| {
        let a = access[s.pos].unwrap();
        match a.stack_span() {
            Some((lo, hi)) => (lo..hi).any(|o| live[s.pos].stack.contains(o)),
            None => true,
        }
    });
    let mut parent: Vec<usize> = (0..stores.len()).collect();
    for i in 0..stores.len() {
        for j in 0..i {
            let (a, b) = (&stores[i], &stores[j]);
            if a.base == b.base && a.lo <= b.hi && b.lo <= a.hi {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                parent[ri.max(rj)] = ri.min(rj);
            }
        }
    }
    let mut groups: BTreeMap<usize, (i64, BTreeSet<usize>)> = BTreeMap::new();
    for i in 0..stores.len() {
        let root = find(&mut parent, i);
        let g = groups.entry(root).or_insert_with(|| (stores[root].id, BTreeSet::new()));
        g.1.extend(&stores[i].chain);
    }
    chains.extend(groups.into_values().map(|(id, c)| (SliceId::Mem(id), c)));
    chains.sort_by_key(|(id, c)| (*c.iter().next_back().unwrap(), *id));

    let mut out = Vec::new();
    for (id, chain) in chains {
        let pos: Vec<usize> = chain.into_iter().collect();
        let chain_insns: Vec<Insn> = pos.iter().map(|&p| insns[p]).collect();
        let chain_types = type_trace(&chain_insns, entry);
        let n = pos.len().div_ceil(window);
        for (w, chunk) in pos.chunks(window).enumerate() {
            let last = *chunk.last().unwrap();
            out.push(Slice {
                id,
                insns: chunk.iter().map(|&p| block[p]).collect(),
                live: live[last],
                entry: chain_types[w * window],
                window: (w, n),
                anchor: block[last].origin.unwrap(),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
