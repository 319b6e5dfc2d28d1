// SPDX-License-Identifier: Apache-2.0

use super::*;
use crate::isa::{parse_asm, RegSet};
use crate::machine::{interpret, RegType, StackMask};

fn insns(src: &str) -> Vec<Instruction> {
    parse_asm(src).unwrap().block_insns(0)
}

fn solver() -> SolverConfig {
    SolverConfig::default()
}

const EXAMPLE1: &str = "r1 = *(u32 *)(r0 + 8)\nr2 = *(u32 *)(r0 + 12)\nr2 <<= 32\nr2 |= r1";

fn ctx_r0() -> RegTypeMap {
    RegTypeMap::default().with(Reg::R0, RegType::CTX)
}

#[test]
fn wide_load_replaces_two_narrow_loads() {
    let q = EquivQuery::new(
        &insns(EXAMPLE1),
        &insns("r2 = *(u64 *)(r0 + 8)"),
        LiveOut::regs(RegSet::single(Reg::R2)),
        ctx_r0(),
    );
    assert_eq!(check_equiv(&q, &solver()).unwrap(), Verdict::Equivalent);
}

#[test]
fn live_clobbered_register_yields_counterexample() {
    let live = LiveOut::regs([Reg::R1, Reg::R2].into_iter().collect());
    let q = EquivQuery::new(&insns(EXAMPLE1), &insns("r2 = *(u64 *)(r0 + 8)"), live, ctx_r0());
    let Verdict::NotEquivalent(cex) = check_equiv(&q, &solver()).unwrap() else { panic!("expected counterexample") };
    let u32_at_8 = cex.input.read_le(Region::Ctx, 8, 4).unwrap();
    let s = interpret(&insns("r2 = *(u64 *)(r0 + 8)"), &cex.input, &cex.types).unwrap();
    assert_ne!(s.reg(Reg::R1), Some(u32_at_8));
    assert!(cex.mismatch.starts_with("r1"), "{}", cex.mismatch);
}

#[test]
fn identical_programs_need_no_solver() {
    let p = insns(EXAMPLE1);
    let q = EquivQuery::new(&p, &p, LiveOut::everything(), ctx_r0());
    let unavailable = SolverConfig::from_command_line("/nonexistent", std::time::Duration::from_secs(1));
    assert_eq!(check_equiv(&q, &unavailable).unwrap(), Verdict::Equivalent);
}

#[test]
fn bounded_identity() {
    let q = EquivQuery::new(&insns("r1 += 0"), &[], LiveOut::regs(RegSet::single(Reg::R1)), RegTypeMap::all_scalar());
    for bits in [1, 4, 8] {
        assert_eq!(bounded_check(&q, bits).unwrap(), Verdict::BoundedEquivalent);
    }
}

#[test]
fn bounded_minimal_witness() {
    let q = EquivQuery::new(
        &insns("r1 &= 0xff"),
        &insns("r1 = r1"),
        LiveOut::regs(RegSet::single(Reg::R1)),
        RegTypeMap::all_scalar(),
    );
    let Verdict::NotEquivalent(cex) = bounded_check(&q, 12).unwrap() else { panic!() };
    assert_eq!(cex.input.reg(Reg::R1), Some(0x100));
    // the same witness by brute force over the interpreter
    let first = (0u64..1 << 12)
        .find(|v| {
            let mut s = MachineState::default();
            s.set_reg(Reg::R1, *v);
            interpret(&insns("r1 &= 0xff"), &s, &RegTypeMap::all_scalar()).unwrap().reg(Reg::R1) != Some(*v)
        })
        .unwrap();
    assert_eq!(first, 0x100);
}

#[test]
fn bounded_space_guard() {
    let q = EquivQuery::new(
        &insns("r1 += r2"),
        &insns("r1 -= r2"),
        LiveOut::regs(RegSet::single(Reg::R1)),
        RegTypeMap::all_scalar(),
    );
    assert!(matches!(bounded_check(&q, 15), Err(EquivError::SpaceTooLarge(n)) if n == 1 << 30));
}

#[test]
fn store_merge_is_equivalent() {
    let orig = insns("*(u8 *)(r10 - 2) = r1\nr1 >>= 8\n*(u8 *)(r10 - 1) = r1");
    let cand = insns("*(u16 *)(r10 - 2) = r1");
    let mut stack = StackMask::NONE;
    stack.insert_range(-2, 0);
    let q = EquivQuery::new(&orig, &cand, LiveOut::new(RegSet::EMPTY, stack), RegTypeMap::all_scalar());
    assert_eq!(check_equiv(&q, &solver()).unwrap(), Verdict::Equivalent);
    // r1 live: the shift is observable
    let q = EquivQuery { live: LiveOut::new(RegSet::single(Reg::R1), stack), ..q };
    assert!(matches!(check_equiv(&q, &solver()).unwrap(), Verdict::NotEquivalent(_)));
}

#[test]
fn candidate_reading_unread_stack_is_rejected() {
    let orig = insns("r0 = 0");
    let cand = insns("r0 = *(u64 *)(r10 - 8)\nr0 = 0");
    let q = EquivQuery::new(&orig, &cand, LiveOut::regs(RegSet::single(Reg::R0)), RegTypeMap::default());
    let Verdict::NotEquivalent(cex) = check_equiv(&q, &solver()).unwrap() else { panic!() };
    assert!(cex.mismatch.contains("traps"), "{}", cex.mismatch);
}

#[test]
fn symbolic_offsets_alias_consistently() {
    // packet pointer plus scalar; reading the same address twice must agree
    let entry = RegTypeMap::default().with(Reg::R7, RegType::mem(1)).with(Reg::R1, RegType::Scalar);
    let orig = insns("r1 += r7\nr3 = *(u16 *)(r1 + 2)\nr4 = *(u16 *)(r1 + 2)");
    let cand = insns("r1 += r7\nr3 = *(u16 *)(r1 + 2)\nr4 = r3");
    let live = LiveOut::regs([Reg::R3, Reg::R4].into_iter().collect());
    let q = EquivQuery::new(&orig, &cand, live, entry);
    assert_eq!(check_equiv(&q, &solver()).unwrap(), Verdict::Equivalent);
    let bad = insns("r1 += r7\nr3 = *(u16 *)(r1 + 2)\nr4 = *(u16 *)(r1 + 4)");
    let q = EquivQuery { candidate: bad.iter().map(|i| i.insn).collect(), ..q };
    let Verdict::NotEquivalent(cex) = check_equiv(&q, &solver()).unwrap() else { panic!() };
    assert!(cex.mismatch.starts_with("r4"), "{}", cex.mismatch);
}

#[test]
fn value_ranges_restrict_inputs() {
    let entry = RegTypeMap::all_scalar();
    let live = LiveOut::regs(RegSet::single(Reg::R1));
    let mut q = EquivQuery::new(&insns("r1 &= 0xff"), &[], live, entry);
    assert!(matches!(check_equiv(&q, &solver()).unwrap(), Verdict::NotEquivalent(_)));
    q.ranges.push(RangeBound { reg: Reg::R1, lo: 0, hi: 255 });
    assert_eq!(check_equiv(&q, &solver()).unwrap(), Verdict::Equivalent);
}

#[test]
fn pointer_type_matters() {
    let entry = RegTypeMap::program_entry();
    let live = LiveOut::regs(RegSet::single(Reg::R2));
    let q = EquivQuery::new(&insns("r2 = r1"), &insns("r2 = 0x2000\nr2 <<= 32"), live, entry);
    let v = check_equiv(&q, &solver()).unwrap();
    let Verdict::NotEquivalent(cex) = v else { panic!() };
    assert!(cex.mismatch.contains("type"), "{}", cex.mismatch);
}

#[test]
fn symbolic_program_evaluates_like_interpreter() {
    let entry = ctx_r0();
    let prog = insns(EXAMPLE1);
    let sym =
        SymbolicProgram::new(&prog.iter().map(|i| i.insn).collect::<Vec<_>>(), &entry, Layout::default()).unwrap();
    let mut s0 = MachineState::for_types(&entry);
    s0.write_le(Region::Ctx, 8, 8, 0x1122_3344_5566_7788);
    let want = interpret(&prog, &s0, &entry).unwrap();
    let Evaluated::Done { regs, mem } = sym.evaluate(&s0) else { panic!() };
    assert_eq!(regs[2], want.reg(Reg::R2));
    assert_eq!(mem, want.mem);
}
