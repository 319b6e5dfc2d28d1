// SPDX-License-Identifier: Apache-2.0

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};

use rustc_hash::FxHashMap;

use super::{Access, Slice, SliceError, SliceId};
use crate::isa::{Insn, Instruction, Reg};
use crate::safety::type_trace;

/// Placement key: original instructions sort by origin; replacement code
/// sits right after its window's anchor, in slice order.
type Key = (usize, u8, usize, usize);

struct Node {
    insn: Instruction,
    key: Key,
    slice: usize,
    access: Option<Access>,
    deps: BTreeSet<usize>,
    /// Producer each used register must see; `None` is the block entry.
    reads: Vec<(Reg, Option<usize>)>,
}

fn conflicts(a: &Node, b: &Node) -> bool {
    let (x, y) = (&a.insn.insn, &b.insn.insn);
    let writes = |i: &Insn, r: Reg| i.def() == Some(r);
    for r in Reg::all() {
        let (xw, yw) = (writes(x, r), writes(y, r));
        if (xw && (yw || y.uses().contains(r))) || (yw && x.uses().contains(r)) {
            return true;
        }
    }
    match (a.access, b.access) {
        (Some(p), Some(q)) if x.is_store() || y.is_store() => p.may_alias(&q),
        _ => false,
    }
}

/// Merges slices back into one instruction list. Instructions shared by
/// several slices (same origin, or a new instruction identical to one of
/// another slice with identical inputs) are emitted once; order follows def-use edges within each slice plus an
/// edge between every pair of conflicting instructions from different
/// slices, broken toward original program order.
pub fn recompose(slices: &[Slice]) -> Result<Vec<Instruction>, SliceError> {
    let mut nodes: Vec<Node> = Vec::new();
    let mut by_origin: FxHashMap<usize, usize> = FxHashMap::default();
    let mut results: Vec<(Reg, usize)> = Vec::new();
    // definitions and stores carried from a chain's earlier windows
    let mut carried: FxHashMap<SliceId, ([Option<usize>; Reg::COUNT], Vec<usize>)> = FxHashMap::default();
    for (si, s) in slices.iter().enumerate() {
        let plain: Vec<Insn> = s.insns.iter().map(|i| i.insn).collect();
        let types = type_trace(&plain, &s.entry);
        let (mut last_def, mut stores) = match s.window.0 {
            0 => ([None; Reg::COUNT], Vec::new()),
            _ => carried.remove(&s.id).unwrap_or(([None; Reg::COUNT], Vec::new())),
        };
        for (k, ins) in s.insns.iter().enumerate() {
            let access = Access::of(&ins.insn, &types[k]);
            let reads: Vec<(Reg, Option<usize>)> = ins.insn.uses().iter().map(|r| (r, last_def[r.index()])).collect();
            let mut deps: BTreeSet<usize> = reads.iter().filter_map(|r| r.1).collect();
            if ins.insn.is_load() {
                let a = access.unwrap();
                deps.extend(stores.iter().copied().filter(|&n| nodes[n].access.is_some_and(|b| b.may_alias(&a))));
            }
            let existing = match ins.origin {
                Some(o) => by_origin.get(&o).copied(),
                None => nodes
                    .iter()
                    .position(|n| n.slice != si && n.insn.insn == ins.insn && n.deps == deps && n.reads == reads),
            };
            let id = match existing {
                Some(id) => id,
                None => {
                    let key = match ins.origin {
                        Some(o) => (o, 0, 0, 0),
                        None => (s.anchor, 1, si, k),
                    };
                    nodes.push(Node { insn: *ins, key, slice: si, access, deps, reads });
                    if let Some(o) = ins.origin {
                        by_origin.insert(o, nodes.len() - 1);
                    }
                    nodes.len() - 1
                }
            };
            if let Some(d) = ins.insn.def() {
                last_def[d.index()] = Some(id);
            }
            if ins.insn.is_store() {
                stores.push(id);
            }
        }
        match s.id {
            SliceId::Reg(r) if s.window.0 + 1 == s.window.1 => results.extend(last_def[r.index()].map(|id| (r, id))),
            _ => {}
        }
        carried.insert(s.id, (last_def, stores));
    }

    let n = nodes.len();
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut indeg = vec![0usize; n];
    let add = |a: usize, b: usize, succ: &mut Vec<Vec<usize>>, indeg: &mut Vec<usize>| {
        if !succ[a].contains(&b) {
            succ[a].push(b);
            indeg[b] += 1;
        }
    };
    for (b, node) in nodes.iter().enumerate() {
        for &a in &node.deps {
            add(a, b, &mut succ, &mut indeg);
        }
    }
    for a in 0..n {
        for b in a + 1..n {
            if conflicts(&nodes[a], &nodes[b]) {
                let (lo, hi) = if nodes[a].key <= nodes[b].key { (a, b) } else { (b, a) };
                add(lo, hi, &mut succ, &mut indeg);
            }
        }
    }
    let mut ready: BinaryHeap<Reverse<(Key, usize)>> =
        (0..n).filter(|&i| indeg[i] == 0).map(|i| Reverse((nodes[i].key, i))).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse((_, i))) = ready.pop() {
        order.push(i);
        for &j in &succ[i] {
            indeg[j] -= 1;
            if indeg[j] == 0 {
                ready.push(Reverse((nodes[j].key, j)));
            }
        }
    }
    if order.len() != n {
        return Err(SliceError::CyclicDependency);
    }
    // a write from one slice must not land between another slice's
    // definition and its use, nor after a slice's result
    let mut writer: [Option<usize>; Reg::COUNT] = [None; Reg::COUNT];
    for &i in &order {
        if nodes[i].reads.iter().any(|&(r, p)| writer[r.index()] != p) {
            return Err(SliceError::Clobbered);
        }
        if let Some(d) = nodes[i].insn.insn.def() {
            writer[d.index()] = Some(i);
        }
    }
    if results.iter().any(|&(r, id)| writer[r.index()] != Some(id)) {
        return Err(SliceError::Clobbered);
    }
    Ok(order.into_iter().map(|i| nodes[i].insn).collect())
}
