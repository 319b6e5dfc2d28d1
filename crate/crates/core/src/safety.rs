// SPDX-License-Identifier: Apache-2.0

//! Static checks mirroring the kernel verifier's per-instruction rules for
//! straight-line code.

use std::fmt;

use serde::Serialize;

use crate::isa::{AluOp, Insn, Instruction, Reg, Source};
use crate::machine::{RegType, RegTypeMap, Region, STACK_SIZE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SafetyRule {
    /// Access address not a multiple of the access width.
    Align,
    /// Immediate store through a context pointer.
    CtxStoreImm,
    /// Context dereference through a pointer with a nonzero or variable offset.
    CtxModified,
    UninitRead,
    FramePointerWrite,
    StackBounds,
    PointerArith,
    /// Pointer stored anywhere but a full 8-byte stack slot.
    PointerLeak,
    ScalarDeref,
    Opcode,
}

impl SafetyRule {
    pub fn id(self) -> &'static str {
        match self {
            SafetyRule::Align => "align",
            SafetyRule::CtxStoreImm => "ctx-store-imm",
            SafetyRule::CtxModified => "ctx-modified",
            SafetyRule::UninitRead => "uninit-read",
            SafetyRule::FramePointerWrite => "r10-write",
            SafetyRule::StackBounds => "stack-bounds",
            SafetyRule::PointerArith => "pointer-arith",
            SafetyRule::PointerLeak => "pointer-leak",
            SafetyRule::ScalarDeref => "scalar-deref",
            SafetyRule::Opcode => "opcode",
        }
    }
}

impl fmt::Display for SafetyRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub rule: SafetyRule,
    pub pc: usize,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "insn {}: [{}] {}", self.pc, self.rule, self.message)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SafetyVerdict {
    pub violations: Vec<Violation>,
}

impl SafetyVerdict {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, rule: SafetyRule) -> bool {
        self.violations.iter().any(|v| v.rule == rule)
    }
}

/// Abstract value: scalars carry a constant when known, pointers their
/// offset from the region base when known.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Val {
    Uninit,
    Scalar(Option<u64>),
    Ptr(Region, Option<i64>),
}

impl Val {
    fn from_type(t: RegType) -> Val {
        match t {
            RegType::Uninit => Val::Uninit,
            RegType::Scalar => Val::Scalar(None),
            RegType::Ptr { region, off } => Val::Ptr(region, off.map(i64::from)),
        }
    }
}

struct Checker {
    regs: [Val; Reg::COUNT],
    out: Vec<Violation>,
    pc: usize,
}

impl Checker {
    fn flag(&mut self, rule: SafetyRule, message: String) {
        self.out.push(Violation { rule, pc: self.pc, message });
    }

    fn read(&mut self, r: Reg) -> Val {
        let v = self.regs[r.index()];
        if v == Val::Uninit {
            self.flag(SafetyRule::UninitRead, format!("{} is not initialized", r));
        }
        v
    }

    fn source(&mut self, s: Source) -> Val {
        match s {
            Source::Reg(r) => self.read(r),
            Source::Imm(i) => Val::Scalar(Some(i as i64 as u64)),
        }
    }

    fn access(&mut self, base: Reg, off: i16, width: u8) -> Option<Region> {
        match self.read(base) {
            Val::Uninit => None,
            Val::Scalar(_) => {
                self.flag(SafetyRule::ScalarDeref, format!("{} is not a pointer", base));
                None
            }
            Val::Ptr(region, poff) => {
                let addr = poff.map(|p| p + off as i64);
                match (region, addr) {
                    (Region::Stack, None) => {
                        self.flag(SafetyRule::StackBounds, "variable stack offset".into());
                    }
                    (Region::Stack, Some(a)) if a < -STACK_SIZE || a + width as i64 > 0 => {
                        self.flag(SafetyRule::StackBounds, format!("stack access at {} of size {}", a, width));
                    }
                    (Region::Ctx, _) if poff != Some(0) => {
                        self.flag(SafetyRule::CtxModified, format!("context access through modified {}", base));
                    }
                    _ => {}
                }
                if let Some(a) = addr {
                    if a.rem_euclid(width as i64) != 0 {
                        self.flag(
                            SafetyRule::Align,
                            format!("misaligned {}-byte access at {} offset {}", width, region, a),
                        );
                    }
                }
                Some(region)
            }
        }
    }

    fn alu(&mut self, wide: bool, op: AluOp, dst: Reg, src: Source) {
        if let (AluOp::Div | AluOp::Mod, Source::Imm(0)) = (op, src) {
            self.flag(SafetyRule::Opcode, "division by immediate zero".into());
        }
        let b = self.source(src);
        let a = if op == AluOp::Mov { Val::Scalar(None) } else { self.read(dst) };
        let result = match (op, a, b) {
            (AluOp::Mov, _, Val::Ptr(..)) if wide => b,
            (AluOp::Mov, _, Val::Scalar(k)) => Val::Scalar(k.map(|k| if wide { k } else { k as u32 as u64 })),
            (_, Val::Scalar(x), Val::Scalar(y)) if op != AluOp::Mov => {
                let v = match (x, y) {
                    (Some(x), Some(y)) => Some(crate::machine::alu_eval(op, wide, x, y)),
                    (Some(x), _) if op == AluOp::Neg => Some(crate::machine::alu_eval(op, wide, x, 0)),
                    _ => None,
                };
                Val::Scalar(v)
            }
            (AluOp::Add, Val::Ptr(r, o), Val::Scalar(k)) | (AluOp::Add, Val::Scalar(k), Val::Ptr(r, o)) if wide => {
                Val::Ptr(r, o.zip(k).map(|(o, k)| o.wrapping_add(k as i64)))
            }
            (AluOp::Sub, Val::Ptr(r, o), Val::Scalar(k)) if wide => {
                Val::Ptr(r, o.zip(k).map(|(o, k)| o.wrapping_sub(k as i64)))
            }
            (_, Val::Uninit, _) | (_, _, Val::Uninit) => Val::Scalar(None),
            _ => {
                self.flag(
                    SafetyRule::PointerArith,
                    format!("{} on pointer operand is not allowed", Insn::Alu { wide, op, dst, src }.mnemonic()),
                );
                Val::Scalar(None)
            }
        };
        self.regs[dst.index()] = result;
    }

    fn step(&mut self, insn: &Insn) {
        if let Err(e) = insn.validate() {
            let rule = if e == crate::isa::InsnError::FramePointerWrite {
                SafetyRule::FramePointerWrite
            } else {
                SafetyRule::Opcode
            };
            self.flag(rule, e.to_string());
            return;
        }
        match *insn {
            Insn::Alu { wide, op, dst, src } => self.alu(wide, op, dst, src),
            Insn::Load { width, dst, base, off } => {
                self.access(base, off, width.bytes());
                self.regs[dst.index()] = Val::Scalar(None);
            }
            Insn::Store { width, base, off, src } => {
                let v = self.source(src);
                let region = self.access(base, off, width.bytes());
                if region == Some(Region::Ctx) && src.imm().is_some() {
                    self.flag(SafetyRule::CtxStoreImm, "immediate store through context pointer".into());
                }
                if let (Val::Ptr(..), Some(r)) = (v, region) {
                    if r != Region::Stack || width.bytes() != 8 {
                        self.flag(SafetyRule::PointerLeak, format!("pointer stored to {}", r));
                    }
                }
            }
        }
    }
}

/// Checks every instruction against the verifier rules, threading register
/// types and known constants forward from `entry`.
pub fn check_safety(insns: &[Instruction], entry: &RegTypeMap) -> SafetyVerdict {
    check_safety_insns(insns.iter().map(|i| &i.insn), entry)
}

pub fn check_safety_insns<'a>(insns: impl IntoIterator<Item = &'a Insn>, entry: &RegTypeMap) -> SafetyVerdict {
    let mut regs = [Val::Uninit; Reg::COUNT];
    for (r, t) in entry.iter() {
        regs[r.index()] = Val::from_type(t);
    }
    let mut c = Checker { regs, out: Vec::new(), pc: 0 };
    for (pc, insn) in insns.into_iter().enumerate() {
        c.pc = pc;
        c.step(insn);
    }
    SafetyVerdict { violations: c.out }
}

/// Register types before each instruction, followed by the types after the
/// last one.
pub fn type_trace<'a>(insns: impl IntoIterator<Item = &'a Insn>, entry: &RegTypeMap) -> Vec<RegTypeMap> {
    let mut regs = [Val::Uninit; Reg::COUNT];
    for (r, t) in entry.iter() {
        regs[r.index()] = Val::from_type(t);
    }
    let mut c = Checker { regs, out: Vec::new(), pc: 0 };
    let snapshot = |c: &Checker| {
        let mut m = *entry;
        for r in Reg::all().filter(|r| *r != Reg::FP) {
            m.set(
                r,
                match c.regs[r.index()] {
                    Val::Uninit => RegType::Uninit,
                    Val::Scalar(_) => RegType::Scalar,
                    Val::Ptr(region, off) => RegType::Ptr { region, off: off.and_then(|o| i32::try_from(o).ok()) },
                },
            );
        }
        m
    };
    let mut out = vec![snapshot(&c)];
    for insn in insns {
        c.step(insn);
        out.push(snapshot(&c));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::parse_asm;

    fn check(src: &str, entry: &RegTypeMap) -> SafetyVerdict {
        check_safety(&parse_asm(src).unwrap().block_insns(0), entry)
    }

    fn scalars() -> RegTypeMap {
        RegTypeMap::all_scalar()
    }

    #[test]
    fn misaligned_stack_store() {
        let v = check("*(u16 *)(r10 - 1) = r1", &scalars());
        assert!(v.has(SafetyRule::Align));
        assert!(check("*(u16 *)(r10 - 2) = r1", &scalars()).ok());
        assert!(check("*(u16 *)(r10 - 3) = r1", &scalars()).has(SafetyRule::Align));
    }

    #[test]
    fn immediate_store_to_ctx() {
        let v = check("*(u32 *)(r1 + 0) = 42", &RegTypeMap::program_entry());
        assert!(v.has(SafetyRule::CtxStoreImm));
        let mut t = RegTypeMap::program_entry();
        t.set(Reg::R2, RegType::Scalar);
        assert!(check("*(u32 *)(r1 + 0) = r2", &t).ok());
    }

    #[test]
    fn constant_move_is_safe() {
        assert!(check("r0 = 0", &RegTypeMap::default()).ok());
    }

    #[test]
    fn uninit_read_and_scalar_deref() {
        assert!(check("r0 = r3", &RegTypeMap::default()).has(SafetyRule::UninitRead));
        assert!(check("r0 = *(u8 *)(r3 + 0)", &scalars()).has(SafetyRule::ScalarDeref));
    }

    #[test]
    fn stack_bounds() {
        assert!(check("r0 = *(u64 *)(r10 - 520)", &scalars()).has(SafetyRule::StackBounds));
        assert!(check("r0 = *(u32 *)(r10 + 0)", &scalars()).has(SafetyRule::StackBounds));
        assert!(check("r2 = r10\nr2 += -16\nr0 = *(u64 *)(r2 + 8)", &scalars()).ok());
        assert!(check("r2 = r10\nr2 += r3\nr0 = *(u8 *)(r2 + 0)", &scalars()).has(SafetyRule::StackBounds));
    }

    #[test]
    fn pointer_arithmetic() {
        let t = RegTypeMap::program_entry().with(Reg::R2, RegType::Scalar);
        assert!(check("r1 *= 2", &t).has(SafetyRule::PointerArith));
        assert!(check("w1 += 2", &t).has(SafetyRule::PointerArith));
        assert!(check("r2 -= r1", &t).has(SafetyRule::PointerArith));
        assert!(check("r1 += 8\nr0 = *(u32 *)(r1 + 0)", &t).has(SafetyRule::CtxModified));
        let m = RegTypeMap::default().with(Reg::R7, RegType::mem(1)).with(Reg::R1, RegType::Scalar);
        assert!(check("r1 += r7\nr3 = *(u16 *)(r1 + 2)", &m).ok());
    }

    #[test]
    fn pointer_spills() {
        let t = RegTypeMap::program_entry();
        assert!(check("*(u64 *)(r10 - 8) = r1", &t).ok());
        assert!(check("*(u32 *)(r10 - 8) = r1", &t).has(SafetyRule::PointerLeak));
    }

    #[test]
    fn frame_pointer_write() {
        let bad = Insn::Alu { wide: true, op: AluOp::Mov, dst: Reg::FP, src: Source::Imm(0) };
        let v = check_safety(&[Instruction::new(bad)], &RegTypeMap::default());
        assert!(v.has(SafetyRule::FramePointerWrite));
    }

    #[test]
    fn removing_a_tail_insn_keeps_earlier_verdicts() {
        let src = "r2 = r10\n*(u16 *)(r2 - 3) = r1\nr0 = *(u8 *)(r4 + 0)";
        let full = check(src, &scalars());
        let insns = parse_asm(src).unwrap().block_insns(0);
        let prefix = check_safety(&insns[..2], &scalars());
        assert_eq!(prefix.violations, full.violations.iter().filter(|v| v.pc < 2).cloned().collect::<Vec<_>>());
    }
}
