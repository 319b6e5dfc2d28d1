// SPDX-License-Identifier: Apache-2.0

use super::*;
use crate::isa::{parse_asm, RegSet};
use crate::machine::{RegType, StackMask};

fn block(src: &str) -> Vec<Instruction> {
    parse_asm(src).unwrap().block_insns(0)
}

fn text(insns: &[Instruction]) -> String {
    insns.iter().map(|i| i.insn.to_string()).collect::<Vec<_>>().join("\n")
}

fn regs(rs: &[Reg]) -> LiveOut {
    LiveOut::regs(rs.iter().copied().collect())
}

#[test]
fn mem_id_packing() {
    assert_eq!(mem_id(Reg::FP, 4, 4), 1098);
    assert_eq!(mem_id(Reg::R0, 0, 1), 16);
    assert_eq!(mem_id(Reg::FP, 0, 8), 138);
    assert_eq!(mem_id(Reg::FP, -2, 1), (-2 << 8) | 16 | 10);
}

#[test]
fn adjacent_byte_stores_form_one_slice() {
    let b = block("*(u8 *)(r10 - 2) = r1\nr1 >>= 8\n*(u8 *)(r10 - 1) = r1");
    let mut stack = StackMask::NONE;
    stack.insert_range(-2, 0);
    let s = extract_slices(&b, LiveOut::new(RegSet::EMPTY, stack), &RegTypeMap::all_scalar(), 6).unwrap();
    assert_eq!(s.len(), 1);
    assert_eq!(s[0].insns.len(), 3);
    assert_eq!(s[0].live.stack.ranges(), vec![(-2, 0)]);
    assert!(s[0].live.regs.is_empty());
}

#[test]
fn single_definition() {
    let s = extract_slices(&block("r1 = r2"), regs(&[Reg::R1]), &RegTypeMap::all_scalar(), 6).unwrap();
    assert_eq!(s.len(), 1);
    assert_eq!(s[0].id, SliceId::Reg(Reg::R1));
    assert_eq!(text(&s[0].insns), "r1 = r2");
}

#[test]
fn independent_chains_stay_apart() {
    let b = block("r1 = r2\nr1 += 1\nr3 = r4");
    let s = extract_slices(&b, regs(&[Reg::R1, Reg::R3]), &RegTypeMap::all_scalar(), 6).unwrap();
    assert_eq!(s.len(), 2);
    assert_eq!(text(&s[0].insns), "r1 = r2\nr1 += 1");
    assert_eq!(text(&s[1].insns), "r3 = r4");
}

#[test]
fn dead_chains_are_dropped() {
    let b = block("r1 = *(u32 *)(r0 + 8)\nr2 = *(u32 *)(r0 + 12)\nr2 <<= 32\nr2 |= r1");
    let entry = RegTypeMap::default().with(Reg::R0, RegType::CTX);
    let s = extract_slices(&b, regs(&[Reg::R2]), &entry, 6).unwrap();
    assert_eq!(s.len(), 1);
    assert_eq!(s[0].insns.len(), 4);
    assert_eq!(s[0].live, regs(&[Reg::R2]));
    assert!(extract_slices(&b, regs(&[Reg::R5]), &entry, 6).unwrap().is_empty());
}

#[test]
fn windows_bound_slice_length() {
    let b = block("r1 = 1\nr1 += 2\nr1 += 3\nr1 += 4\nr1 += 5");
    let s = extract_slices(&b, regs(&[Reg::R1]), &RegTypeMap::default(), 2).unwrap();
    assert_eq!(s.iter().map(|s| s.insns.len()).collect::<Vec<_>>(), vec![2, 2, 1]);
    assert_eq!(s[1].window, (1, 3));
    // r1 flows from one window into the next
    assert!(s[0].live.regs.contains(Reg::R1));
    assert_eq!(s[1].entry.get(Reg::R1), RegType::Scalar);
    assert_eq!(extract_slices(&b, regs(&[]), &RegTypeMap::default(), 0), Err(SliceError::ZeroWindow));
}

#[test]
fn later_overwrite_kills_liveness() {
    let b = block("r3 = r7\nr3 += r1\nr3 = *(u16 *)(r3 + 2)\nr1 = r4");
    let entry = RegTypeMap::default()
        .with(Reg::R7, RegType::mem(1))
        .with(Reg::R1, RegType::Scalar)
        .with(Reg::R4, RegType::Scalar);
    let s = extract_slices(&b, regs(&[Reg::R1, Reg::R3]), &entry, 6).unwrap();
    assert_eq!(s.len(), 2);
    let r3 = s.iter().find(|s| s.id == SliceId::Reg(Reg::R3)).unwrap();
    assert!(!r3.live.regs.contains(Reg::R1));
}

#[test]
fn recompose_identity() {
    let b = block("r1 = r2\nr1 += 1");
    let s = extract_slices(&b, regs(&[Reg::R1]), &RegTypeMap::all_scalar(), 6).unwrap();
    assert_eq!(recompose(&s).unwrap(), b);
}

#[test]
fn shared_prefix_emitted_once() {
    let b = block("r1 = *(u32 *)(r0 + 0)\nr2 = r1\nr2 += 1\nr3 = r1\nr3 += 2");
    let entry = RegTypeMap::default().with(Reg::R0, RegType::CTX);
    let s = extract_slices(&b, regs(&[Reg::R2, Reg::R3]), &entry, 6).unwrap();
    assert_eq!(s.len(), 2);
    assert!(s.iter().all(|s| s.insns[0] == b[0]));
    let out = recompose(&s).unwrap();
    assert_eq!(out, b);
}

#[test]
fn replacement_code_respects_clobbers() {
    // the rewritten r3 chain clobbers r1, which the r1 chain redefines
    let b = block("r3 = r7\nr3 += r1\nr3 = *(u16 *)(r3 + 2)\nr1 = r4");
    let entry = RegTypeMap::default()
        .with(Reg::R7, RegType::mem(1))
        .with(Reg::R1, RegType::Scalar)
        .with(Reg::R4, RegType::Scalar);
    let mut s = extract_slices(&b, regs(&[Reg::R1, Reg::R3]), &entry, 6).unwrap();
    let i = s.iter().position(|s| s.id == SliceId::Reg(Reg::R3)).unwrap();
    let new: Vec<Instruction> =
        block("r1 += r7\nr3 = *(u16 *)(r1 + 2)").into_iter().map(|i| Instruction::new(i.insn)).collect();
    s[i] = s[i].with_insns(new);
    assert_eq!(text(&recompose(&s).unwrap()), "r1 += r7\nr3 = *(u16 *)(r1 + 2)\nr1 = r4");
}

#[test]
fn structural_dedup_of_replacements() {
    let b = block("r1 = r2\nr3 = r2");
    let mut s = extract_slices(&b, regs(&[Reg::R1, Reg::R3]), &RegTypeMap::all_scalar(), 6).unwrap();
    for sl in &mut s {
        *sl = sl.with_insns(vec![Instruction::new(crate::isa::parse_insn("r5 = r2").unwrap())]);
    }
    assert_eq!(recompose(&s).unwrap().len(), 1);
}

#[test]
fn restated_shared_definition_is_rejected() {
    // the r4 chain recomputes r1 itself, so r1 would be negated twice
    let b = block("r1 = -r1\nr4 ^= r1");
    let mut s = extract_slices(&b, regs(&[Reg::R1, Reg::R4]), &RegTypeMap::all_scalar(), 6).unwrap();
    let i = s.iter().position(|s| s.id == SliceId::Reg(Reg::R4)).unwrap();
    let new: Vec<Instruction> = block("r1 *= -1\nr4 ^= r1").into_iter().map(|i| Instruction::new(i.insn)).collect();
    s[i] = s[i].with_insns(new);
    assert_eq!(recompose(&s), Err(SliceError::Clobbered));
}

#[test]
fn later_windows_read_earlier_windows() {
    let b = block("r1 = r2\nr1 += 1\nr1 <<= 2\nr1 |= 3\nr1 ^= r2");
    let s = extract_slices(&b, regs(&[Reg::R1]), &RegTypeMap::all_scalar(), 2).unwrap();
    assert_eq!(s.len(), 3);
    assert_eq!(recompose(&s).unwrap(), b);
}
