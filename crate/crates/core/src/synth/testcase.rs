// SPDX-License-Identifier: Apache-2.0

use rand::Rng;

use crate::isa::{Insn, Reg};
use crate::machine::{ExecState, FaultKind, Layout, MachineState, MemKey, RegType, RegTypeMap, Region};

/// A concrete input. Stack bytes must be listed explicitly; other memory
/// bytes absent from `input.mem` take pseudo-random values derived from
/// `seed`, so every in-bounds context or packet byte is readable.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Testcase {
    pub input: MachineState,
    pub seed: u64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Implicit value of a non-stack byte.
pub fn implicit_byte(seed: u64, k: MemKey) -> Option<u8> {
    if k.region == Region::Stack {
        return None;
    }
    Some(splitmix(seed ^ splitmix(k.addr())) as u8)
}

impl Testcase {
    pub fn fill(&self) -> impl FnMut(MemKey) -> Option<u8> + '_ {
        move |k| implicit_byte(self.seed, k)
    }

    /// Runs `insns`, returning the final state or the fault.
    pub fn run(&self, insns: &[Insn], types: &RegTypeMap, layout: &Layout) -> Result<ExecState, FaultKind> {
        let mut st = ExecState::new(&self.input, types);
        let mut fill = self.fill();
        for i in insns {
            st.step(i, &self.input.mem, layout, &mut fill)?;
        }
        Ok(st)
    }

    /// Makes every implicit byte `insns` reads explicit.
    pub fn materialize(&mut self, insns: &[Insn], types: &RegTypeMap, layout: &Layout) {
        let mut st = ExecState::new(&self.input, types);
        let seed = self.seed;
        let mut seen = Vec::new();
        let mut fill = |k: MemKey| {
            let b = implicit_byte(seed, k);
            if let Some(b) = b {
                seen.push((k, b));
            }
            b
        };
        for i in insns {
            if st.step(i, &self.input.mem, layout, &mut fill).is_err() {
                break;
            }
        }
        for (k, b) in seen {
            self.input.mem.insert(k, b);
        }
    }
}

fn scalar_value(rng: &mut impl Rng) -> u64 {
    const EDGES: [u64; 8] =
        [0, 1, u64::MAX, 0x7fff_ffff, 0x8000_0000, 0xffff_ffff, 0x8000_0000_0000_0000, 0x7fff_ffff_ffff_ffff];
    match rng.gen_range(0..10) {
        0..=3 => rng.gen_range(0..64),
        4..=5 => EDGES[rng.gen_range(0..EDGES.len())],
        6 => rng.gen::<u32>() as u64,
        _ => rng.gen(),
    }
}

/// Random input registers for `types`; memory left empty.
pub fn random_registers(types: &RegTypeMap, rng: &mut impl Rng) -> MachineState {
    let mut s = MachineState::default();
    for (r, t) in types.iter() {
        if r == Reg::FP {
            continue;
        }
        match t {
            RegType::Uninit => {}
            RegType::Scalar => s.set_reg(r, scalar_value(rng)),
            RegType::Ptr { region, off: Some(o) } => s.set_reg(r, region.base().wrapping_add(o as i64 as u64)),
            RegType::Ptr { region, off: None } => {
                let o = if region == Region::Stack { -64 } else { rng.gen_range(0..64) };
                s.set_reg(r, region.base().wrapping_add(o as u64))
            }
        }
    }
    s
}

/// Up to `n` random inputs on which `insns` runs without trapping. Stack
/// bytes the program reads are filled with random values.
pub fn generate_tests(
    insns: &[Insn],
    types: &RegTypeMap,
    layout: &Layout,
    n: usize,
    rng: &mut impl Rng,
) -> Vec<Testcase> {
    let mut out = Vec::new();
    let mut attempts = 0;
    while out.len() < n && attempts < 64 * n.max(1) {
        attempts += 1;
        let input = random_registers(types, rng);
        let mut t = Testcase { input, seed: rng.gen() };
        let mut st = ExecState::new(&t.input, types);
        let mut stack_bytes = Vec::new();
        let seed = t.seed;
        let mut fill = |k: MemKey| match implicit_byte(seed, k) {
            Some(b) => Some(b),
            None => {
                let b = splitmix(seed ^ 0x5bd1_e995 ^ k.addr()) as u8;
                stack_bytes.push((k, b));
                Some(b)
            }
        };
        let ok = insns.iter().all(|i| st.step(i, &t.input.mem, layout, &mut fill).is_ok());
        if ok {
            for (k, b) in stack_bytes {
                t.input.mem.insert(k, b);
            }
            if !out.contains(&t) {
                out.push(t);
            }
        }
    }
    out
}
