// SPDX-License-Identifier: Apache-2.0

//! Random straight-line blocks for property tests.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;

use bpf_superopt::isa::{AluOp, Insn, Instruction, Reg, RegSet, Source, Width};
use bpf_superopt::machine::{LiveOut, RegType, RegTypeMap, StackMask};

/// Scalar registers the fuzzer writes; r6 is a context pointer and r7 a
/// buffer pointer, and both keep their values.
pub const SCALARS: [Reg; 7] = [Reg::R0, Reg::R1, Reg::R2, Reg::R3, Reg::R4, Reg::R5, Reg::R9];

pub fn entry() -> RegTypeMap {
    let mut t = RegTypeMap::default();
    for r in SCALARS {
        t.set(r, RegType::Scalar);
    }
    t.set(Reg::R6, RegType::CTX);
    t.set(Reg::R7, RegType::mem(1));
    t
}

const IMMS: [i32; 10] = [0, 1, -1, 2, 3, 7, 8, 16, 255, 0x7fff];

fn source(rng: &mut impl Rng, regs: &[Reg]) -> Source {
    if rng.gen_bool(0.5) {
        Source::Reg(*regs.choose(rng).unwrap())
    } else {
        Source::Imm(*IMMS.choose(rng).unwrap())
    }
}

fn width(rng: &mut impl Rng) -> Width {
    *Width::ALL.choose(rng).unwrap()
}

fn aligned(rng: &mut impl Rng, w: Width, lo: i16, hi: i16) -> i16 {
    let n = w.bytes() as i16;
    let slots = (hi - lo) / n;
    lo + n * rng.gen_range(0..slots)
}

/// One instruction over `regs` (a subset of [`SCALARS`]).
pub fn random_insn(rng: &mut impl Rng, regs: &[Reg], div: bool) -> Insn {
    loop {
        let dst = *regs.choose(rng).unwrap();
        let cand = match rng.gen_range(0..10) {
            0..=5 => {
                let op = *AluOp::ALL.choose(rng).unwrap();
                if !div && matches!(op, AluOp::Div | AluOp::Mod) {
                    continue;
                }
                let src = match op {
                    AluOp::Neg => Source::Imm(0),
                    o if o.is_shift() && rng.gen_bool(0.7) => Source::Imm(rng.gen_range(0..32)),
                    _ => source(rng, regs),
                };
                Insn::Alu { wide: rng.gen_bool(0.7), op, dst, src }
            }
            6..=7 => {
                let w = width(rng);
                match rng.gen_range(0..3) {
                    0 => Insn::Load { width: w, dst, base: Reg::R6, off: aligned(rng, w, 0, 64) },
                    1 => Insn::Load { width: w, dst, base: Reg::R7, off: aligned(rng, w, 0, 64) },
                    _ => Insn::Load { width: w, dst, base: Reg::FP, off: aligned(rng, w, -32, 0) },
                }
            }
            _ => {
                let w = width(rng);
                let (base, off) = if rng.gen_bool(0.5) {
                    (Reg::R7, aligned(rng, w, 0, 64))
                } else {
                    (Reg::FP, aligned(rng, w, -32, 0))
                };
                Insn::Store { width: w, base, off, src: source(rng, regs) }
            }
        };
        if cand.validate().is_ok() {
            return cand;
        }
    }
}

pub fn random_block(rng: &mut impl Rng, len: usize, regs: &[Reg]) -> Vec<Insn> {
    (0..len).map(|_| random_insn(rng, regs, true)).collect()
}

pub fn with_origins(insns: &[Insn]) -> Vec<Instruction> {
    insns.iter().enumerate().map(|(k, i)| Instruction::with_origin(*i, k)).collect()
}

pub fn random_live(rng: &mut impl Rng) -> LiveOut {
    let regs: RegSet = SCALARS.iter().copied().filter(|_| rng.gen_bool(0.4)).collect();
    let mut stack = StackMask::NONE;
    if rng.gen_bool(0.5) {
        let lo = -8 * rng.gen_range(1..=4) as i64;
        stack.insert_range(lo, lo + 8);
    }
    LiveOut::new(regs, stack)
}
