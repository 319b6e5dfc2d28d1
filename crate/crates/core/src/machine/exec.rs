// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use super::{Layout, MachineState, MemKey, RegTypeMap, Region};
use crate::isa::{AluOp, Insn, Instruction, Reg, Source};

/// Dynamic type the interpreter tracks alongside each register value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Shadow {
    Uninit,
    Scalar,
    Ptr(Region),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FaultKind {
    UninitReg(Reg),
    UninitMem(MemKey),
    OutOfBounds {
        region: Region,
        off: i64,
        len: u8,
    },
    /// Dereference through a register that does not hold a pointer.
    BadRegion(Reg),
}

impl fmt::Display for FaultKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            FaultKind::UninitReg(r) => write!(f, "read of uninitialized register {}", r),
            FaultKind::UninitMem(k) => write!(f, "read of uninitialized byte {}", k),
            FaultKind::OutOfBounds { region, off, len } => {
                write!(f, "{}-byte access at {}[{}] is out of bounds", len, region, off)
            }
            FaultKind::BadRegion(r) => write!(f, "dereference of non-pointer {}", r),
        }
    }
}

/// A trap raised while executing instruction `pc`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Error)]
#[error("fault at insn {pc}: {kind}")]
pub struct Fault {
    pub pc: usize,
    pub kind: FaultKind,
}

/// Execution state with memory kept as an overlay of written bytes on top
/// of a read-only input image. Cheap to clone when few bytes were written.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ExecState {
    pub regs: [u64; Reg::COUNT],
    pub shadow: [Shadow; Reg::COUNT],
    /// Written bytes, sorted by key.
    pub writes: Vec<(MemKey, u8)>,
}

impl ExecState {
    pub fn new(s0: &MachineState, types: &RegTypeMap) -> ExecState {
        let mut shadow = [Shadow::Uninit; Reg::COUNT];
        for (r, t) in types.iter() {
            shadow[r.index()] = match t.region() {
                Some(region) => Shadow::Ptr(region),
                None if t.is_init() || s0.init.contains(r) => Shadow::Scalar,
                None => Shadow::Uninit,
            };
        }
        let mut regs = s0.regs;
        if !s0.init.contains(Reg::FP) {
            regs[Reg::FP.index()] = Region::Stack.base();
        }
        ExecState { regs, shadow, writes: Vec::new() }
    }

    pub fn reg(&self, r: Reg) -> Option<u64> {
        (self.shadow[r.index()] != Shadow::Uninit).then(|| self.regs[r.index()])
    }

    fn read_reg(&self, r: Reg) -> Result<u64, FaultKind> {
        self.reg(r).ok_or(FaultKind::UninitReg(r))
    }

    pub fn written(&self, k: MemKey) -> Option<u8> {
        self.writes.binary_search_by(|(x, _)| x.cmp(&k)).ok().map(|i| self.writes[i].1)
    }

    fn write_byte(&mut self, k: MemKey, v: u8) {
        match self.writes.binary_search_by(|(x, _)| x.cmp(&k)) {
            Ok(i) => self.writes[i].1 = v,
            Err(i) => self.writes.insert(i, (k, v)),
        }
    }

    /// Resolves `base + off` to a region offset, checking bounds.
    pub fn address(&self, base: Reg, off: i16, len: u8, layout: &Layout) -> Result<MemKey, FaultKind> {
        let v = self.read_reg(base)?;
        let region = match self.shadow[base.index()] {
            Shadow::Ptr(r) => r,
            _ => return Err(FaultKind::BadRegion(base)),
        };
        let roff = (v.wrapping_sub(region.base()) as i64).wrapping_add(off as i64);
        if !layout.in_bounds(region, roff, len as i64) {
            return Err(FaultKind::OutOfBounds { region, off: roff, len });
        }
        Ok(MemKey::new(region, roff))
    }

    /// Executes one instruction. Bytes missing from both the overlay and
    /// `input` are requested from `fill`; `None` means uninitialized.
    pub fn step(
        &mut self,
        insn: &Insn,
        input: &BTreeMap<MemKey, u8>,
        layout: &Layout,
        fill: &mut dyn FnMut(MemKey) -> Option<u8>,
    ) -> Result<(), FaultKind> {
        match *insn {
            Insn::Alu { wide, op, dst, src } => {
                let (b, src_shadow) = match src {
                    Source::Reg(r) => (self.read_reg(r)?, self.shadow[r.index()]),
                    Source::Imm(i) => (i as i64 as u64, Shadow::Scalar),
                };
                let a = if op == AluOp::Mov { 0 } else { self.read_reg(dst)? };
                let dst_shadow = self.shadow[dst.index()];
                let v = alu_eval(op, wide, a, b);
                let shadow = match (op, wide, dst_shadow, src_shadow) {
                    (AluOp::Mov, true, _, s) => s,
                    (AluOp::Add, true, Shadow::Ptr(r), Shadow::Scalar)
                    | (AluOp::Add, true, Shadow::Scalar, Shadow::Ptr(r))
                    | (AluOp::Sub, true, Shadow::Ptr(r), Shadow::Scalar) => Shadow::Ptr(r),
                    _ => Shadow::Scalar,
                };
                self.regs[dst.index()] = v;
                self.shadow[dst.index()] = shadow;
            }
            Insn::Load { width, dst, base, off } => {
                let n = width.bytes();
                let k = self.address(base, off, n, layout)?;
                let mut v = 0u64;
                for i in 0..n as i64 {
                    let kb = MemKey::new(k.region, k.off + i);
                    let byte = match self.written(kb) {
                        Some(b) => b,
                        None => match input.get(&kb) {
                            Some(b) => *b,
                            None => fill(kb).ok_or(FaultKind::UninitMem(kb))?,
                        },
                    };
                    v |= (byte as u64) << (8 * i);
                }
                self.regs[dst.index()] = v;
                self.shadow[dst.index()] = Shadow::Scalar;
            }
            Insn::Store { width, base, off, src } => {
                let v = match src {
                    Source::Reg(r) => self.read_reg(r)?,
                    Source::Imm(i) => i as i64 as u64,
                };
                let n = width.bytes();
                let k = self.address(base, off, n, layout)?;
                for i in 0..n as i64 {
                    self.write_byte(MemKey::new(k.region, k.off + i), (v >> (8 * i)) as u8);
                }
            }
        }
        Ok(())
    }

    /// Materializes the full state: input image with the overlay applied.
    pub fn to_state(&self, input: &BTreeMap<MemKey, u8>) -> MachineState {
        let mut mem = input.clone();
        for (k, v) in &self.writes {
            mem.insert(*k, *v);
        }
        let init = Reg::all().filter(|r| self.shadow[r.index()] != Shadow::Uninit).collect();
        MachineState { regs: self.regs, init, mem }
    }
}

/// Value of an ALU operation. `a` is the destination operand, `b` the
/// source (immediates already sign-extended to 64 bits).
pub fn alu_eval(op: AluOp, wide: bool, a: u64, b: u64) -> u64 {
    if wide {
        match op {
            AluOp::Mov => b,
            AluOp::Add => a.wrapping_add(b),
            AluOp::Sub => a.wrapping_sub(b),
            AluOp::Mul => a.wrapping_mul(b),
            AluOp::Div => a.checked_div(b).unwrap_or(0),
            AluOp::Mod => a.checked_rem(b).unwrap_or(a),
            AluOp::And => a & b,
            AluOp::Or => a | b,
            AluOp::Xor => a ^ b,
            AluOp::Lsh => a << (b & 63),
            AluOp::Rsh => a >> (b & 63),
            AluOp::Arsh => ((a as i64) >> (b & 63)) as u64,
            AluOp::Neg => a.wrapping_neg(),
        }
    } else {
        let (a, b) = (a as u32, b as u32);
        let v = match op {
            AluOp::Mov => b,
            AluOp::Add => a.wrapping_add(b),
            AluOp::Sub => a.wrapping_sub(b),
            AluOp::Mul => a.wrapping_mul(b),
            AluOp::Div => a.checked_div(b).unwrap_or(0),
            AluOp::Mod => a.checked_rem(b).unwrap_or(a),
            AluOp::And => a & b,
            AluOp::Or => a | b,
            AluOp::Xor => a ^ b,
            AluOp::Lsh => a << (b & 31),
            AluOp::Rsh => a >> (b & 31),
            AluOp::Arsh => ((a as i32) >> (b & 31)) as u32,
            AluOp::Neg => a.wrapping_neg(),
        };
        v as u64
    }
}

/// Runs `insns` from `s0` with the default layout.
pub fn interpret(insns: &[Instruction], s0: &MachineState, types: &RegTypeMap) -> Result<MachineState, Fault> {
    interpret_with(insns, s0, types, &Layout::default()).map(|(s, _)| s)
}

/// Runs `insns` from `s0`, returning the final state and register shadows.
pub fn interpret_with(
    insns: &[Instruction],
    s0: &MachineState,
    types: &RegTypeMap,
    layout: &Layout,
) -> Result<(MachineState, [Shadow; Reg::COUNT]), Fault> {
    let mut st = ExecState::new(s0, types);
    for (pc, i) in insns.iter().enumerate() {
        st.step(&i.insn, &s0.mem, layout, &mut |_| None).map_err(|kind| Fault { pc, kind })?;
    }
    Ok((st.to_state(&s0.mem), st.shadow))
}
