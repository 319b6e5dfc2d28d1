// SPDX-License-Identifier: Apache-2.0

use super::{MachineState, MemKey, Region};
use crate::isa::{Reg, RegSet};

/// Registers and memory bytes that make up the observable output.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Footprint {
    pub regs: RegSet,
    /// Sorted, deduplicated byte keys.
    pub mem: Vec<MemKey>,
}

impl Footprint {
    pub fn new(regs: RegSet, mut mem: Vec<MemKey>) -> Footprint {
        mem.sort();
        mem.dedup();
        Footprint { regs, mem }
    }

    pub fn regs_only(regs: RegSet) -> Footprint {
        Footprint { regs, mem: Vec::new() }
    }
}

/// Minimum number of 8-byte windows covering every offset in `offs`
/// (sorted ascending). A single store writes at most one such window, so
/// this bounds the number of stores needed to fix the differing bytes.
pub fn mem_cover(offs: impl IntoIterator<Item = i64>) -> u32 {
    let mut n = 0;
    let mut covered_to = i64::MIN;
    for o in offs {
        if o >= covered_to {
            n += 1;
            covered_to = o + 8;
        }
    }
    n
}

/// Lower bound on the number of instructions needed to turn `s` into `t`
/// on the footprint: one per differing register plus the window cover of
/// differing bytes in each region.
pub fn distance(s: &MachineState, t: &MachineState, fp: &Footprint) -> u32 {
    let regs = fp.regs.iter().filter(|r| s.reg(*r) != t.reg(*r)).count() as u32;
    let mut total = regs;
    let mut region: Option<Region> = None;
    let mut run: Vec<i64> = Vec::new();
    for k in &fp.mem {
        if s.byte(*k) == t.byte(*k) {
            continue;
        }
        if region != Some(k.region) {
            total += mem_cover(run.drain(..));
            region = Some(k.region);
        }
        run.push(k.off);
    }
    total + mem_cover(run)
}

/// Register-only part of the metric over raw values and init masks.
pub fn reg_distance(a: &[u64; Reg::COUNT], a_init: RegSet, b: &[u64; Reg::COUNT], b_init: RegSet, regs: RegSet) -> u32 {
    regs.iter()
        .filter(|r| {
            let i = r.index();
            let ai = a_init.contains(*r);
            ai != b_init.contains(*r) || (ai && a[i] != b[i])
        })
        .count() as u32
}
