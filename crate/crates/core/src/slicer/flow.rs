// SPDX-License-Identifier: Apache-2.0

//! Register types, memory access summaries and liveness.

use crate::isa::{Control, Insn, Program, Reg, RegSet, Stmt};
use crate::machine::{LiveOut, RegType, RegTypeMap, Region, StackMask};
use crate::safety::type_trace;

/// Statically known part of a memory access.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Access {
    pub region: Option<Region>,
    /// Offset from the region base.
    pub off: Option<i64>,
    pub len: i64,
}

impl Access {
    pub fn of(insn: &Insn, types: &RegTypeMap) -> Option<Access> {
        let (base, off, len) = match *insn {
            Insn::Load { base, off, width, .. } | Insn::Store { base, off, width, .. } => {
                (base, off, width.bytes() as i64)
            }
            Insn::Alu { .. } => return None,
        };
        Some(match types.get(base) {
            RegType::Ptr { region, off: p } => {
                Access { region: Some(region), off: p.map(|p| p as i64 + off as i64), len }
            }
            _ => Access { region: None, off: None, len },
        })
    }

    pub fn may_alias(&self, o: &Access) -> bool {
        match (self.region, o.region) {
            (Some(a), Some(b)) if a != b => false,
            (Some(_), Some(_)) => match (self.off, o.off) {
                (Some(x), Some(y)) => x < y + o.len && y < x + self.len,
                _ => true,
            },
            _ => true,
        }
    }

    /// Stack bytes certainly covered, if any.
    pub fn stack_span(&self) -> Option<(i64, i64)> {
        match (self.region, self.off) {
            (Some(Region::Stack), Some(o)) => Some((o, o + self.len)),
            _ => None,
        }
    }

    /// Whether the access may touch the stack.
    pub fn may_touch_stack(&self) -> bool {
        matches!(self.region, None | Some(Region::Stack))
    }
}

/// Locations live before `insn`, given those live after it.
pub fn live_before(insn: &Insn, types: &RegTypeMap, after: LiveOut) -> LiveOut {
    let mut regs = after.regs;
    if let Some(d) = insn.def() {
        regs.remove(d);
    }
    regs = regs.union(insn.uses());
    let mut stack = after.stack;
    if let Some(a) = Access::of(insn, types) {
        if insn.is_store() {
            if let Some((lo, hi)) = a.stack_span() {
                stack.remove_range(lo.max(-512), hi.min(0));
            }
        } else if a.may_touch_stack() {
            match a.stack_span() {
                Some((lo, hi)) => stack.insert_range(lo.max(-512), hi.min(0)),
                None => stack = StackMask::ALL,
            }
        }
    }
    LiveOut::new(regs, stack)
}

/// Live locations after each instruction of a straight-line block.
pub fn block_liveness(insns: &[Insn], entry: &RegTypeMap, end: LiveOut) -> Vec<LiveOut> {
    let types = type_trace(insns, entry);
    let mut out = vec![end; insns.len()];
    let mut live = end;
    for i in (0..insns.len()).rev() {
        out[i] = live;
        live = live_before(&insns[i], &types[i], live);
    }
    out
}

fn successors(stmts: &[Stmt], i: usize) -> Vec<usize> {
    let n = stmts.len() as i64;
    let next = |t: i64| (0..n).contains(&t).then_some(t as usize);
    match stmts[i] {
        Stmt::Insn(_) => next(i as i64 + 1).into_iter().collect(),
        Stmt::Control(c) => match c {
            Control::Exit => vec![],
            Control::Ja { off } => next(i as i64 + 1 + off as i64).into_iter().collect(),
            Control::Cond { off, .. } => {
                let mut v: Vec<usize> = next(i as i64 + 1).into_iter().collect();
                v.extend(next(i as i64 + 1 + off as i64));
                v
            }
            Control::Call { .. } => next(i as i64 + 1).into_iter().collect(),
        },
    }
}

/// Registers live at the end of each block, including those read by the
/// control statement that closes it.
pub fn block_live_regs(p: &Program) -> Vec<RegSet> {
    let n = p.stmts.len();
    let mut live_in = vec![RegSet::EMPTY; n + 1];
    let mut changed = true;
    while changed {
        changed = false;
        for i in (0..n).rev() {
            let mut out = RegSet::EMPTY;
            for s in successors(&p.stmts, i) {
                out = out.union(live_in[s]);
            }
            let v = match &p.stmts[i] {
                Stmt::Insn(ins) => {
                    let mut v = out;
                    if let Some(d) = ins.insn.def() {
                        v.remove(d);
                    }
                    v.union(ins.insn.uses())
                }
                Stmt::Control(c) => out.minus(c.defs()).union(c.uses()),
            };
            if v != live_in[i] {
                live_in[i] = v;
                changed = true;
            }
        }
    }
    p.blocks.iter().map(|b| live_in[b.end]).collect()
}

/// Register types at the start of each block, joined over all
/// predecessors. Unreachable blocks get the default (all uninitialized).
pub fn block_entry_types(p: &Program, entry: &RegTypeMap) -> Vec<RegTypeMap> {
    let n = p.stmts.len();
    let mut at: Vec<Option<RegTypeMap>> = vec![None; n];
    if n > 0 {
        at[0] = Some(*entry);
    }
    let mut work: Vec<usize> = vec![0];
    while let Some(i) = work.pop() {
        if i >= n {
            continue;
        }
        let Some(cur) = at[i] else { continue };
        let out = match &p.stmts[i] {
            Stmt::Insn(ins) => type_trace([&ins.insn], &cur)[1],
            Stmt::Control(Control::Call { .. }) => {
                let mut t = cur;
                t.set(Reg::R0, RegType::Scalar);
                for r in [Reg::R1, Reg::R2, Reg::R3, Reg::R4, Reg::R5] {
                    t.set(r, RegType::Uninit);
                }
                t
            }
            Stmt::Control(_) => cur,
        };
        for s in successors(&p.stmts, i) {
            let joined = match at[s] {
                None => out,
                Some(old) => old.join(&out),
            };
            if at[s] != Some(joined) {
                at[s] = Some(joined);
                work.push(s);
            }
        }
    }
    p.blocks.iter().map(|b| at[b.start].unwrap_or_default()).collect()
}
