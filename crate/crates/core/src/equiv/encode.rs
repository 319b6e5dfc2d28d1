// SPDX-License-Identifier: Apache-2.0

//! Symbolic execution of straight-line code into bitvector terms.
//!
//! Registers are 64-bit terms. Memory is byte-addressed: each program keeps
//! an ordered list of byte writes, and a read resolves to an if-then-else
//! chain over earlier writes ending in an input byte. Input bytes at
//! constant offsets are named variables shared between programs; bytes at
//! symbolic offsets get fresh variables tied together by functional
//! consistency constraints.

use rustc_hash::FxHashMap;

use super::term::{Op2, TermStore, T};
use crate::isa::{AluOp, Insn, Reg, Source};
use crate::machine::{FaultKind, Layout, MemKey, RegType, RegTypeMap, Region, Shadow};

/// Which side of a comparison a program is encoded for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    /// Reference program; its stack reads define the initialized input bytes.
    Original,
    /// Program under test; reading a stack byte the original never read is
    /// treated as a read of uninitialized memory.
    Candidate,
    /// No cross-program assumptions.
    Standalone,
}

#[derive(Clone, Debug)]
pub struct Cell {
    pub region: Region,
    /// 64-bit region offset.
    pub off: T,
    /// 8-bit value variable.
    pub val: T,
    pub key: Option<i64>,
    pub read_by_original: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct ByteWrite {
    pub region: Region,
    pub off: T,
    pub val: T,
    pub key: Option<i64>,
    /// Stored value came from a pointer register.
    pub ptr: bool,
}

/// How an entry register is represented.
#[derive(Clone, Copy, Debug)]
pub enum RegInput {
    Uninit,
    Scalar(T),
    /// Pointer with a constant value.
    Ptr(Region, u64),
    /// Pointer `base + var`.
    VarPtr(Region, T),
}

/// Final symbolic state of one program.
#[derive(Clone, Debug)]
pub struct ProgRun {
    pub regs: [Option<T>; Reg::COUNT],
    pub shadow: [Shadow; Reg::COUNT],
    pub writes: Vec<ByteWrite>,
    /// Condition under which the program traps.
    pub fault: T,
    /// A trap that happens on every input, with the instruction index.
    pub static_fault: Option<(usize, FaultKind)>,
}

pub struct Encoder {
    pub s: TermStore,
    pub layout: Layout,
    pub inputs: [RegInput; Reg::COUNT],
    pub cells: Vec<Cell>,
    concrete: FxHashMap<MemKey, usize>,
    /// Facts assumed about the inputs.
    pub pre: Vec<T>,
}

fn var_name(region: Region, off: i64) -> String {
    if off < 0 {
        format!("m_{}_n{}", region, -off)
    } else {
        format!("m_{}_{}", region, off)
    }
}

impl Encoder {
    pub fn new(entry: &RegTypeMap, layout: Layout) -> Encoder {
        let mut s = TermStore::new();
        let mut pre = Vec::new();
        let mut inputs = [RegInput::Uninit; Reg::COUNT];
        for (r, t) in entry.iter() {
            inputs[r.index()] = match t {
                RegType::Uninit => RegInput::Uninit,
                RegType::Scalar => RegInput::Scalar(s.var(format!("r{}", r.index()), 64)),
                RegType::Ptr { region, off: Some(o) } => {
                    RegInput::Ptr(region, region.base().wrapping_add(o as i64 as u64))
                }
                RegType::Ptr { region, off: None } => {
                    let v = s.var(format!("p{}", r.index()), 64);
                    let (lo, hi) = layout.bounds(region);
                    let lo = s.konst(lo as u64, 64);
                    let hi = s.konst(hi as u64, 64);
                    let a = s.bin(Op2::Sle, lo, v);
                    let b = s.bin(Op2::Sle, v, hi);
                    pre.push(a);
                    pre.push(b);
                    RegInput::VarPtr(region, v)
                }
            };
        }
        Encoder { s, layout, inputs, cells: Vec::new(), concrete: FxHashMap::default(), pre }
    }

    fn input_reg(&mut self, r: Reg) -> (Option<T>, Shadow) {
        match self.inputs[r.index()] {
            RegInput::Uninit => (None, Shadow::Uninit),
            RegInput::Scalar(t) => (Some(t), Shadow::Scalar),
            RegInput::Ptr(region, v) => (Some(self.s.konst(v, 64)), Shadow::Ptr(region)),
            RegInput::VarPtr(region, off) => {
                let base = self.s.konst(region.base(), 64);
                (Some(self.s.bin(Op2::Add, base, off)), Shadow::Ptr(region))
            }
        }
    }

    /// Input byte at `region[off]`; `None` when a candidate reads a stack
    /// byte the original did not.
    fn input_byte(&mut self, region: Region, off: T, role: Role) -> Option<T> {
        if let Some(k) = self.s.as_const(off) {
            let key = MemKey::new(region, k as i64);
            if let Some(&i) = self.concrete.get(&key) {
                let c = &mut self.cells[i];
                if role == Role::Candidate && region == Region::Stack && !c.read_by_original {
                    return None;
                }
                if role == Role::Original {
                    c.read_by_original = true;
                }
                return Some(c.val);
            }
            if role == Role::Candidate && region == Region::Stack {
                return None;
            }
            let val = self.s.var(var_name(region, k as i64), 8);
            self.concrete.insert(key, self.cells.len());
            self.cells.push(Cell { region, off, val, key: Some(k as i64), read_by_original: role == Role::Original });
            return Some(val);
        }
        let val = self.s.var(format!("s_{}_{}", region, self.cells.len()), 8);
        self.cells.push(Cell { region, off, val, key: None, read_by_original: role == Role::Original });
        Some(val)
    }

    /// Current value of `region[off]` after `writes`, without recording a
    /// program read. Used to compare final memories.
    pub fn final_byte(&mut self, writes: &[ByteWrite], region: Region, off: T) -> T {
        self.read_byte(writes, region, off, Role::Standalone).expect("standalone reads never trap")
    }

    fn read_byte(&mut self, writes: &[ByteWrite], region: Region, off: T, role: Role) -> Option<T> {
        let mut pending: Vec<(T, T)> = Vec::new();
        let mut base = None;
        for w in writes.iter().rev().filter(|w| w.region == region) {
            let c = self.s.eq(w.off, off);
            if self.s.is_true(c) {
                base = Some(w.val);
                break;
            }
            if !self.s.is_false(c) {
                pending.push((c, w.val));
            }
        }
        let mut acc = match base {
            Some(v) => v,
            None => self.input_byte(region, off, role)?,
        };
        for (c, v) in pending.into_iter().rev() {
            acc = self.s.ite(c, v, acc);
        }
        Some(acc)
    }

    /// Functional consistency between input bytes that may alias.
    pub fn aliasing_constraints(&mut self) -> Vec<T> {
        let mut out = Vec::new();
        for i in 0..self.cells.len() {
            for j in i + 1..self.cells.len() {
                let (a, b) = (&self.cells[i], &self.cells[j]);
                if a.region != b.region || (a.key.is_some() && b.key.is_some()) {
                    continue;
                }
                let (ao, bo, av, bv) = (a.off, b.off, a.val, b.val);
                let same = self.s.eq(ao, bo);
                let eqv = self.s.eq(av, bv);
                let ns = self.s.not(same);
                out.push(self.s.or(ns, eqv));
            }
        }
        out
    }

    /// Encodes `insns` from the entry state.
    pub fn run(&mut self, insns: &[Insn], role: Role) -> ProgRun {
        let mut regs = [None; Reg::COUNT];
        let mut shadow = [Shadow::Uninit; Reg::COUNT];
        for r in Reg::all() {
            let (v, sh) = self.input_reg(r);
            regs[r.index()] = v;
            shadow[r.index()] = sh;
        }
        let fls = self.s.fls();
        let mut run = ProgRun { regs, shadow, writes: Vec::new(), fault: fls, static_fault: None };
        for (pc, insn) in insns.iter().enumerate() {
            if let Err(kind) = self.step(&mut run, insn, role) {
                run.static_fault = Some((pc, kind));
                run.fault = self.s.tru();
                break;
            }
        }
        run
    }

    fn reg(&self, run: &ProgRun, r: Reg) -> Result<T, FaultKind> {
        run.regs[r.index()].ok_or(FaultKind::UninitReg(r))
    }

    /// Offset term for an access, adding its bounds condition to the fault.
    fn address(&mut self, run: &mut ProgRun, base: Reg, off: i16, len: u8) -> Result<(Region, T), FaultKind> {
        let v = self.reg(run, base)?;
        let region = match run.shadow[base.index()] {
            Shadow::Ptr(r) => r,
            _ => return Err(FaultKind::BadRegion(base)),
        };
        let rb = self.s.konst(region.base(), 64);
        let rel = self.s.bin(Op2::Sub, v, rb);
        let k = self.s.konst(off as i64 as u64, 64);
        let o = self.s.bin(Op2::Add, rel, k);
        let (lo, hi) = self.layout.bounds(region);
        if let Some(c) = self.s.as_const(o) {
            if !self.layout.in_bounds(region, c as i64, len as i64) {
                return Err(FaultKind::OutOfBounds { region, off: c as i64, len });
            }
        } else {
            let lo_t = self.s.konst(lo as u64, 64);
            let hi_t = self.s.konst((hi - len as i64) as u64, 64);
            let a = self.s.bin(Op2::Sle, lo_t, o);
            let b = self.s.bin(Op2::Sle, o, hi_t);
            let inb = self.s.and(a, b);
            let out = self.s.not(inb);
            run.fault = self.s.or(run.fault, out);
        }
        Ok((region, o))
    }

    fn byte_off(&mut self, o: T, i: u8) -> T {
        let k = self.s.konst(i as u64, 64);
        self.s.bin(Op2::Add, o, k)
    }

    fn step(&mut self, run: &mut ProgRun, insn: &Insn, role: Role) -> Result<(), FaultKind> {
        match *insn {
            Insn::Alu { wide, op, dst, src } => {
                let (b, sb) = match src {
                    Source::Reg(r) => (self.reg(run, r)?, run.shadow[r.index()]),
                    Source::Imm(i) => (self.s.konst(i as i64 as u64, 64), Shadow::Scalar),
                };
                let a = if op == AluOp::Mov { b } else { self.reg(run, dst)? };
                let sa = run.shadow[dst.index()];
                let v = self.alu(op, wide, a, b);
                run.shadow[dst.index()] = match (op, wide, sa, sb) {
                    (AluOp::Mov, true, _, s) => s,
                    (AluOp::Add, true, Shadow::Ptr(r), Shadow::Scalar)
                    | (AluOp::Add, true, Shadow::Scalar, Shadow::Ptr(r))
                    | (AluOp::Sub, true, Shadow::Ptr(r), Shadow::Scalar) => Shadow::Ptr(r),
                    _ => Shadow::Scalar,
                };
                run.regs[dst.index()] = Some(v);
            }
            Insn::Load { width, dst, base, off } => {
                let n = width.bytes();
                let (region, o) = self.address(run, base, off, n)?;
                let mut acc: Option<T> = None;
                for i in 0..n {
                    let bo = self.byte_off(o, i);
                    let byte = match self.read_byte(&run.writes, region, bo, role) {
                        Some(b) => b,
                        None => {
                            let k = self.s.as_const(bo).unwrap_or(0) as i64;
                            return Err(FaultKind::UninitMem(MemKey::new(region, k)));
                        }
                    };
                    acc = Some(match acc {
                        None => byte,
                        Some(lo) => self.s.concat(byte, lo),
                    });
                }
                let v = acc.expect("width is at least one byte");
                let w = self.s.width(v);
                let v = self.s.zext(64 - w, v);
                run.regs[dst.index()] = Some(v);
                run.shadow[dst.index()] = Shadow::Scalar;
            }
            Insn::Store { width, base, off, src } => {
                let (v, ptr) = match src {
                    Source::Reg(r) => (self.reg(run, r)?, matches!(run.shadow[r.index()], Shadow::Ptr(_))),
                    Source::Imm(i) => (self.s.konst(i as i64 as u64, 64), false),
                };
                let n = width.bytes();
                let (region, o) = self.address(run, base, off, n)?;
                for i in 0..n {
                    let bo = self.byte_off(o, i);
                    let val = self.s.extract(8 * i + 7, 8 * i, v);
                    let key = self.s.as_const(bo).map(|k| k as i64);
                    run.writes.push(ByteWrite { region, off: bo, val, key, ptr });
                }
            }
        }
        Ok(())
    }

    fn alu(&mut self, op: AluOp, wide: bool, a: T, b: T) -> T {
        if !wide {
            let a32 = self.s.extract(31, 0, a);
            let b32 = self.s.extract(31, 0, b);
            let r = self.alu_w(op, 32, a32, b32);
            return self.s.zext(32, r);
        }
        self.alu_w(op, 64, a, b)
    }

    fn alu_w(&mut self, op: AluOp, w: u8, a: T, b: T) -> T {
        let s = &mut self.s;
        let shift_mask = s.konst(w as u64 - 1, w);
        match op {
            AluOp::Mov => b,
            AluOp::Add => s.bin(Op2::Add, a, b),
            AluOp::Sub => s.bin(Op2::Sub, a, b),
            AluOp::Mul => s.bin(Op2::Mul, a, b),
            AluOp::Div => {
                let z = s.konst(0, w);
                let isz = s.eq(b, z);
                let q = s.bin(Op2::Udiv, a, b);
                s.ite(isz, z, q)
            }
            AluOp::Mod => {
                let z = s.konst(0, w);
                let isz = s.eq(b, z);
                let r = s.bin(Op2::Urem, a, b);
                s.ite(isz, a, r)
            }
            AluOp::And => s.bin(Op2::And, a, b),
            AluOp::Or => s.bin(Op2::Or, a, b),
            AluOp::Xor => s.bin(Op2::Xor, a, b),
            AluOp::Lsh | AluOp::Rsh | AluOp::Arsh => {
                let amt = s.bin(Op2::And, b, shift_mask);
                let op2 = match op {
                    AluOp::Lsh => Op2::Shl,
                    AluOp::Rsh => Op2::Lshr,
                    _ => Op2::Ashr,
                };
                s.bin(op2, a, amt)
            }
            AluOp::Neg => s.neg(a),
        }
    }
}
