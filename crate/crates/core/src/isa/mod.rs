// SPDX-License-Identifier: Apache-2.0

//! The supported eBPF instruction subset.
//!
//! Straight-line instructions (ALU64/ALU32, register loads, register and
//! immediate stores) are modelled precisely. Jumps, calls and `exit` are
//! kept as [`Control`] statements: they delimit basic blocks and are never
//! rewritten.

mod encode;
mod parse;
mod print;

use std::fmt;
use std::ops::Range;

use thiserror::Error;

pub use encode::{decode, decode_program, decode_stmt, encode, encode_program, encode_stmt, DecodeError};
pub use parse::{parse_asm, parse_insn, ParseError};
pub use print::{print_asm, print_insns};

/// Size of one encoded instruction record.
pub const INSN_SIZE: usize = 8;

/// A register index `r0`..`r10`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Reg(u8);

impl Reg {
    pub const R0: Reg = Reg(0);
    pub const R1: Reg = Reg(1);
    pub const R2: Reg = Reg(2);
    pub const R3: Reg = Reg(3);
    pub const R4: Reg = Reg(4);
    pub const R5: Reg = Reg(5);
    pub const R6: Reg = Reg(6);
    pub const R7: Reg = Reg(7);
    pub const R8: Reg = Reg(8);
    pub const R9: Reg = Reg(9);
    /// Read-only frame pointer.
    pub const FP: Reg = Reg(10);

    pub const COUNT: usize = 11;

    pub fn new(index: u8) -> Result<Reg, InsnError> {
        if index as usize >= Self::COUNT {
            return Err(InsnError::BadRegister(index));
        }
        Ok(Reg(index))
    }

    pub const fn index(self) -> usize {
        self.0 as usize
    }

    pub fn all() -> impl Iterator<Item = Reg> {
        (0..Self::COUNT as u8).map(Reg)
    }
}

impl TryFrom<u8> for Reg {
    type Error = InsnError;
    fn try_from(v: u8) -> Result<Self, Self::Error> {
        Reg::new(v)
    }
}

impl std::str::FromStr for Reg {
    type Err = InsnError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let n = s.strip_prefix('r').and_then(|d| d.parse::<u8>().ok()).unwrap_or(u8::MAX);
        Reg::new(n)
    }
}

impl From<Reg> for u8 {
    fn from(r: Reg) -> u8 {
        r.0
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

/// A small set of registers, one bit per register.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RegSet(u16);

impl RegSet {
    pub const EMPTY: RegSet = RegSet(0);

    pub fn all_general() -> RegSet {
        RegSet(0x03ff)
    }

    pub fn single(r: Reg) -> RegSet {
        RegSet(1 << r.0)
    }

    pub fn contains(self, r: Reg) -> bool {
        self.0 & (1 << r.0) != 0
    }

    pub fn insert(&mut self, r: Reg) {
        self.0 |= 1 << r.0;
    }

    pub fn remove(&mut self, r: Reg) {
        self.0 &= !(1 << r.0);
    }

    pub fn union(self, o: RegSet) -> RegSet {
        RegSet(self.0 | o.0)
    }

    pub fn intersect(self, o: RegSet) -> RegSet {
        RegSet(self.0 & o.0)
    }

    pub fn minus(self, o: RegSet) -> RegSet {
        RegSet(self.0 & !o.0)
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn bits(self) -> u16 {
        self.0
    }

    pub fn iter(self) -> impl Iterator<Item = Reg> {
        (0..Reg::COUNT as u8).filter(move |i| self.0 & (1 << i) != 0).map(Reg)
    }
}

impl FromIterator<Reg> for RegSet {
    fn from_iter<T: IntoIterator<Item = Reg>>(iter: T) -> Self {
        let mut s = RegSet::EMPTY;
        for r in iter {
            s.insert(r);
        }
        s
    }
}

impl fmt::Debug for RegSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

impl fmt::Display for RegSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = self.iter().map(|r| r.to_string()).collect();
        write!(f, "{}", names.join(","))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AluOp {
    Mov,
    Add,
    Sub,
    Mul,
    Div,
    Mod,
    And,
    Or,
    Xor,
    Lsh,
    Rsh,
    Arsh,
    Neg,
}

impl AluOp {
    pub const ALL: [AluOp; 13] = [
        AluOp::Mov,
        AluOp::Add,
        AluOp::Sub,
        AluOp::Mul,
        AluOp::Div,
        AluOp::Mod,
        AluOp::And,
        AluOp::Or,
        AluOp::Xor,
        AluOp::Lsh,
        AluOp::Rsh,
        AluOp::Arsh,
        AluOp::Neg,
    ];

    pub fn is_shift(self) -> bool {
        matches!(self, AluOp::Lsh | AluOp::Rsh | AluOp::Arsh)
    }

    pub fn mnemonic(self) -> &'static str {
        match self {
            AluOp::Mov => "mov",
            AluOp::Add => "add",
            AluOp::Sub => "sub",
            AluOp::Mul => "mul",
            AluOp::Div => "div",
            AluOp::Mod => "mod",
            AluOp::And => "and",
            AluOp::Or => "or",
            AluOp::Xor => "xor",
            AluOp::Lsh => "lsh",
            AluOp::Rsh => "rsh",
            AluOp::Arsh => "arsh",
            AluOp::Neg => "neg",
        }
    }
}

/// Memory access width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Width {
    B,
    H,
    W,
    DW,
}

impl Width {
    pub const ALL: [Width; 4] = [Width::B, Width::H, Width::W, Width::DW];

    pub const fn bytes(self) -> u8 {
        match self {
            Width::B => 1,
            Width::H => 2,
            Width::W => 4,
            Width::DW => 8,
        }
    }

    pub fn from_bytes(n: u8) -> Option<Width> {
        match n {
            1 => Some(Width::B),
            2 => Some(Width::H),
            4 => Some(Width::W),
            8 => Some(Width::DW),
            _ => None,
        }
    }

    pub fn mask(self) -> u64 {
        match self {
            Width::DW => u64::MAX,
            w => (1u64 << (w.bytes() as u32 * 8)) - 1,
        }
    }
}

impl TryFrom<u8> for Width {
    type Error = InsnError;
    fn try_from(v: u8) -> Result<Self, Self::Error> {
        Width::from_bytes(v).ok_or(InsnError::BadWidth(v))
    }
}

impl From<Width> for u8 {
    fn from(w: Width) -> u8 {
        w.bytes()
    }
}

/// Second operand of an ALU operation or the value of a store.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Reg(Reg),
    Imm(i32),
}

impl Source {
    pub fn reg(self) -> Option<Reg> {
        match self {
            Source::Reg(r) => Some(r),
            Source::Imm(_) => None,
        }
    }

    pub fn imm(self) -> Option<i32> {
        match self {
            Source::Imm(i) => Some(i),
            Source::Reg(_) => None,
        }
    }
}

/// A straight-line instruction of the supported subset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Insn {
    /// `wide` selects ALU64 over ALU32.
    Alu { wide: bool, op: AluOp, dst: Reg, src: Source },
    /// LDX: `dst = *(uW *)(base + off)`.
    Load { width: Width, dst: Reg, base: Reg, off: i16 },
    /// STX (register source) or ST (immediate source): `*(uW *)(base + off) = src`.
    Store { width: Width, base: Reg, off: i16, src: Source },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InsnError {
    #[error("register index {0} out of range")]
    BadRegister(u8),
    #[error("invalid access width {0}")]
    BadWidth(u8),
    #[error("r10 is read-only")]
    FramePointerWrite,
    #[error("shift amount {0} out of range")]
    ShiftRange(i32),
    #[error("neg takes no source operand")]
    NegOperand,
}

impl Insn {
    pub fn alu64(op: AluOp, dst: Reg, src: Source) -> Result<Insn, InsnError> {
        Insn::Alu { wide: true, op, dst, src }.validated()
    }

    pub fn alu32(op: AluOp, dst: Reg, src: Source) -> Result<Insn, InsnError> {
        Insn::Alu { wide: false, op, dst, src }.validated()
    }

    pub fn load(width: Width, dst: Reg, base: Reg, off: i16) -> Result<Insn, InsnError> {
        Insn::Load { width, dst, base, off }.validated()
    }

    pub fn store(width: Width, base: Reg, off: i16, src: Source) -> Result<Insn, InsnError> {
        Insn::Store { width, base, off, src }.validated()
    }

    /// Checks the structural invariants every constructed instruction must hold.
    pub fn validate(&self) -> Result<(), InsnError> {
        match *self {
            Insn::Alu { wide, op, dst, src } => {
                if dst == Reg::FP {
                    return Err(InsnError::FramePointerWrite);
                }
                if op == AluOp::Neg && src != Source::Imm(0) {
                    return Err(InsnError::NegOperand);
                }
                if op.is_shift() {
                    if let Source::Imm(k) = src {
                        let limit = if wide { 63 } else { 31 };
                        if !(0..=limit).contains(&k) {
                            return Err(InsnError::ShiftRange(k));
                        }
                    }
                }
                Ok(())
            }
            Insn::Load { dst, .. } => {
                if dst == Reg::FP {
                    return Err(InsnError::FramePointerWrite);
                }
                Ok(())
            }
            Insn::Store { .. } => Ok(()),
        }
    }

    pub fn validated(self) -> Result<Insn, InsnError> {
        self.validate().map(|_| self)
    }

    pub fn is_mem(&self) -> bool {
        !matches!(self, Insn::Alu { .. })
    }

    pub fn is_store(&self) -> bool {
        matches!(self, Insn::Store { .. })
    }

    pub fn is_load(&self) -> bool {
        matches!(self, Insn::Load { .. })
    }

    /// Register written by the instruction, if any.
    pub fn def(&self) -> Option<Reg> {
        match *self {
            Insn::Alu { dst, .. } | Insn::Load { dst, .. } => Some(dst),
            Insn::Store { .. } => None,
        }
    }

    /// Registers read by the instruction.
    pub fn uses(&self) -> RegSet {
        let mut s = RegSet::EMPTY;
        match *self {
            Insn::Alu { op, dst, src, .. } => {
                if op != AluOp::Mov {
                    s.insert(dst);
                }
                if let Source::Reg(r) = src {
                    s.insert(r);
                }
            }
            Insn::Load { base, .. } => s.insert(base),
            Insn::Store { base, src, .. } => {
                s.insert(base);
                if let Source::Reg(r) = src {
                    s.insert(r);
                }
            }
        }
        s
    }

    /// Whether the instruction reads its own destination register.
    pub fn reads_dst(&self) -> bool {
        matches!(self, Insn::Alu { op, .. } if *op != AluOp::Mov)
    }

    /// Register read through the `src` field (ALU/STX source or LDX base).
    pub fn src_reg(&self) -> Option<Reg> {
        match *self {
            Insn::Alu { src, .. } | Insn::Store { src, .. } => src.reg(),
            Insn::Load { base, .. } => Some(base),
        }
    }

    /// Register held in the `dst` field; for stores this is the base pointer.
    pub fn dst_reg(&self) -> Reg {
        match *self {
            Insn::Alu { dst, .. } | Insn::Load { dst, .. } => dst,
            Insn::Store { base, .. } => base,
        }
    }

    pub fn offset(&self) -> i16 {
        match *self {
            Insn::Load { off, .. } | Insn::Store { off, .. } => off,
            Insn::Alu { .. } => 0,
        }
    }

    pub fn imm(&self) -> Option<i32> {
        match *self {
            Insn::Alu { src, .. } | Insn::Store { src, .. } => src.imm(),
            Insn::Load { .. } => None,
        }
    }

    /// Access width in bytes for memory instructions.
    pub fn size(&self) -> Option<u8> {
        match *self {
            Insn::Load { width, .. } | Insn::Store { width, .. } => Some(width.bytes()),
            Insn::Alu { .. } => None,
        }
    }

    /// Registers in operand order: `src` field first, then `dst` field.
    pub fn operand_regs(&self) -> impl Iterator<Item = Reg> {
        let src = self.src_reg();
        let dst = Some(self.dst_reg());
        src.into_iter().chain(dst)
    }

    /// Short opcode mnemonic, e.g. `add64x`, `ldxw`, `stdw`.
    pub fn mnemonic(&self) -> String {
        match *self {
            Insn::Alu { wide, op, src, .. } => {
                let k = if op == AluOp::Neg {
                    ""
                } else if src.reg().is_some() {
                    "x"
                } else {
                    "k"
                };
                format!("{}{}{}", op.mnemonic(), if wide { "64" } else { "32" }, k)
            }
            Insn::Load { width, .. } => format!("ldx{}", width_letter(width)),
            Insn::Store { width, src: Source::Reg(_), .. } => format!("stx{}", width_letter(width)),
            Insn::Store { width, src: Source::Imm(_), .. } => format!("st{}", width_letter(width)),
        }
    }

    /// Coarse opcode class used by latency tables.
    pub fn op_class(&self) -> OpClass {
        match *self {
            Insn::Alu { wide, op, .. } => match op {
                AluOp::Mul => OpClass::Mul,
                AluOp::Div => OpClass::Div,
                AluOp::Mod => OpClass::Mod,
                _ if wide => OpClass::Alu,
                _ => OpClass::Alu32,
            },
            Insn::Load { .. } => OpClass::Ldx,
            Insn::Store { src: Source::Reg(_), .. } => OpClass::Stx,
            Insn::Store { src: Source::Imm(_), .. } => OpClass::St,
        }
    }

    /// Applies `f` to every register operand.
    pub fn map_regs(&self, mut f: impl FnMut(Reg) -> Reg) -> Insn {
        let map_src = |s: Source, f: &mut dyn FnMut(Reg) -> Reg| match s {
            Source::Reg(r) => Source::Reg(f(r)),
            imm => imm,
        };
        match *self {
            Insn::Alu { wide, op, dst, src } => {
                let src = map_src(src, &mut f);
                Insn::Alu { wide, op, dst: f(dst), src }
            }
            Insn::Load { width, dst, base, off } => {
                let base = f(base);
                Insn::Load { width, dst: f(dst), base, off }
            }
            Insn::Store { width, base, off, src } => {
                let src = map_src(src, &mut f);
                Insn::Store { width, base: f(base), off, src }
            }
        }
    }

    pub fn with_offset(&self, new_off: i16) -> Insn {
        match *self {
            Insn::Load { width, dst, base, .. } => Insn::Load { width, dst, base, off: new_off },
            Insn::Store { width, base, src, .. } => Insn::Store { width, base, off: new_off, src },
            alu => alu,
        }
    }
}

fn width_letter(w: Width) -> &'static str {
    match w {
        Width::B => "b",
        Width::H => "h",
        Width::W => "w",
        Width::DW => "dw",
    }
}

/// Latency-table opcode classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpClass {
    Alu,
    Alu32,
    Mul,
    Div,
    Mod,
    Ldx,
    Stx,
    St,
}

impl OpClass {
    pub const ALL: [OpClass; 8] = [
        OpClass::Alu,
        OpClass::Alu32,
        OpClass::Mul,
        OpClass::Div,
        OpClass::Mod,
        OpClass::Ldx,
        OpClass::Stx,
        OpClass::St,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpClass::Alu => "ALU",
            OpClass::Alu32 => "ALU32",
            OpClass::Mul => "MUL",
            OpClass::Div => "DIV",
            OpClass::Mod => "MOD",
            OpClass::Ldx => "LDX",
            OpClass::Stx => "STX",
            OpClass::St => "ST",
        }
    }

    pub fn from_name(s: &str) -> Option<OpClass> {
        OpClass::ALL.into_iter().find(|c| c.name().eq_ignore_ascii_case(s))
    }

    /// Classes consulted, most specific first, when a table lacks an entry.
    pub fn lookup_chain(self) -> &'static [OpClass] {
        match self {
            OpClass::Alu => &[OpClass::Alu],
            OpClass::Alu32 => &[OpClass::Alu32, OpClass::Alu],
            OpClass::Mul => &[OpClass::Mul, OpClass::Alu],
            OpClass::Div => &[OpClass::Div, OpClass::Alu],
            OpClass::Mod => &[OpClass::Mod, OpClass::Div, OpClass::Alu],
            OpClass::Ldx => &[OpClass::Ldx],
            OpClass::Stx => &[OpClass::Stx],
            OpClass::St => &[OpClass::St, OpClass::Stx],
        }
    }
}

impl fmt::Display for OpClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// An instruction plus its index in the original program, if it came from one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Instruction {
    pub insn: Insn,
    pub origin: Option<usize>,
}

impl Instruction {
    pub fn new(insn: Insn) -> Instruction {
        Instruction { insn, origin: None }
    }

    pub fn with_origin(insn: Insn, origin: usize) -> Instruction {
        Instruction { insn, origin: Some(origin) }
    }
}

impl From<Insn> for Instruction {
    fn from(insn: Insn) -> Self {
        Instruction::new(insn)
    }
}

/// Jump condition codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum JmpOp {
    Jeq,
    Jgt,
    Jge,
    Jset,
    Jne,
    Jsgt,
    Jsge,
    Jlt,
    Jle,
    Jslt,
    Jsle,
}

impl JmpOp {
    pub const ALL: [JmpOp; 11] = [
        JmpOp::Jeq,
        JmpOp::Jgt,
        JmpOp::Jge,
        JmpOp::Jset,
        JmpOp::Jne,
        JmpOp::Jsgt,
        JmpOp::Jsge,
        JmpOp::Jlt,
        JmpOp::Jle,
        JmpOp::Jslt,
        JmpOp::Jsle,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            JmpOp::Jeq => "==",
            JmpOp::Jgt => ">",
            JmpOp::Jge => ">=",
            JmpOp::Jset => "&",
            JmpOp::Jne => "!=",
            JmpOp::Jsgt => "s>",
            JmpOp::Jsge => "s>=",
            JmpOp::Jlt => "<",
            JmpOp::Jle => "<=",
            JmpOp::Jslt => "s<",
            JmpOp::Jsle => "s<=",
        }
    }
}

/// Control-flow statements. They pass through optimization untouched apart
/// from jump offsets, which are retargeted when blocks shrink.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Control {
    Ja { off: i16 },
    Cond { wide: bool, op: JmpOp, dst: Reg, src: Source, off: i16 },
    Call { imm: i32 },
    Exit,
}

impl Control {
    pub fn jump_offset(&self) -> Option<i16> {
        match *self {
            Control::Ja { off } | Control::Cond { off, .. } => Some(off),
            _ => None,
        }
    }

    pub fn with_jump_offset(&self, new_off: i16) -> Control {
        match *self {
            Control::Ja { .. } => Control::Ja { off: new_off },
            Control::Cond { wide, op, dst, src, .. } => Control::Cond { wide, op, dst, src, off: new_off },
            other => other,
        }
    }

    /// Whether execution may continue with the next statement.
    pub fn falls_through(&self) -> bool {
        !matches!(self, Control::Ja { .. } | Control::Exit)
    }

    pub fn uses(&self) -> RegSet {
        match *self {
            Control::Cond { dst, src, .. } => {
                let mut s = RegSet::single(dst);
                if let Source::Reg(r) = src {
                    s.insert(r);
                }
                s
            }
            // Helper arguments.
            Control::Call { .. } => [Reg::R1, Reg::R2, Reg::R3, Reg::R4, Reg::R5].into_iter().collect(),
            Control::Exit => RegSet::single(Reg::R0),
            Control::Ja { .. } => RegSet::EMPTY,
        }
    }

    pub fn defs(&self) -> RegSet {
        match self {
            Control::Call { .. } => [Reg::R0, Reg::R1, Reg::R2, Reg::R3, Reg::R4, Reg::R5].into_iter().collect(),
            _ => RegSet::EMPTY,
        }
    }
}

/// One program statement.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stmt {
    Insn(Instruction),
    Control(Control),
}

impl Stmt {
    pub fn as_insn(&self) -> Option<&Instruction> {
        match self {
            Stmt::Insn(i) => Some(i),
            Stmt::Control(_) => None,
        }
    }
}

/// A parsed program: statements plus the straight-line blocks between
/// control-flow statements and jump targets.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Program {
    pub stmts: Vec<Stmt>,
    pub blocks: Vec<Range<usize>>,
}

impl Program {
    /// Builds a program from statements, assigning provenance to every
    /// instruction and computing block boundaries.
    pub fn from_stmts(mut stmts: Vec<Stmt>) -> Program {
        for (i, s) in stmts.iter_mut().enumerate() {
            if let Stmt::Insn(ins) = s {
                ins.origin = Some(i);
            }
        }
        let blocks = compute_blocks(&stmts);
        Program { stmts, blocks }
    }

    pub fn len(&self) -> usize {
        self.stmts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stmts.is_empty()
    }

    /// Instructions of block `b`.
    pub fn block_insns(&self, b: usize) -> Vec<Instruction> {
        self.stmts[self.blocks[b].clone()].iter().filter_map(|s| s.as_insn().copied()).collect()
    }

    /// Number of straight-line instructions (control statements excluded).
    pub fn insn_count(&self) -> usize {
        self.stmts.iter().filter(|s| matches!(s, Stmt::Insn(_))).count()
    }
}

/// Straight-line runs of instructions. A run ends at every control statement
/// and is split at every jump target.
pub fn compute_blocks(stmts: &[Stmt]) -> Vec<Range<usize>> {
    let n = stmts.len();
    let mut leader = vec![false; n + 1];
    for (i, s) in stmts.iter().enumerate() {
        if let Stmt::Control(c) = s {
            if let Some(off) = c.jump_offset() {
                let t = i as i64 + 1 + off as i64;
                if (0..=n as i64).contains(&t) {
                    leader[t as usize] = true;
                }
            }
        }
    }
    let mut blocks = Vec::new();
    let mut start: Option<usize> = None;
    for (i, s) in stmts.iter().enumerate() {
        if leader[i] {
            if let Some(st) = start.take() {
                blocks.push(st..i);
            }
        }
        match s {
            Stmt::Insn(_) => {
                if start.is_none() {
                    start = Some(i);
                }
            }
            Stmt::Control(_) => {
                if let Some(st) = start.take() {
                    blocks.push(st..i);
                }
            }
        }
    }
    if let Some(st) = start {
        blocks.push(st..n);
    }
    blocks
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validating_constructor_rejects_bad_shapes() {
        assert_eq!(Insn::alu64(AluOp::Mov, Reg::FP, Source::Imm(0)), Err(InsnError::FramePointerWrite));
        assert_eq!(Insn::alu64(AluOp::Lsh, Reg::R1, Source::Imm(64)), Err(InsnError::ShiftRange(64)));
        assert_eq!(Insn::alu32(AluOp::Rsh, Reg::R1, Source::Imm(32)), Err(InsnError::ShiftRange(32)));
        assert!(Insn::alu32(AluOp::Rsh, Reg::R1, Source::Imm(31)).is_ok());
        assert_eq!(Insn::alu64(AluOp::Neg, Reg::R1, Source::Reg(Reg::R2)), Err(InsnError::NegOperand));
        assert!(Insn::load(Width::W, Reg::FP, Reg::R1, 0).is_err());
        assert!(Reg::new(11).is_err());
    }

    #[test]
    fn uses_and_defs() {
        let i = Insn::alu64(AluOp::Or, Reg::R2, Source::Reg(Reg::R1)).unwrap();
        assert_eq!(i.def(), Some(Reg::R2));
        assert_eq!(i.uses(), [Reg::R1, Reg::R2].into_iter().collect());
        let mov = Insn::alu64(AluOp::Mov, Reg::R2, Source::Reg(Reg::R1)).unwrap();
        assert_eq!(mov.uses(), RegSet::single(Reg::R1));
        let st = Insn::store(Width::B, Reg::FP, -2, Source::Reg(Reg::R1)).unwrap();
        assert_eq!(st.def(), None);
        assert_eq!(st.uses(), [Reg::R1, Reg::FP].into_iter().collect());
    }

    #[test]
    fn blocks_split_at_controls_and_targets() {
        let p = parse_asm("r1 = 1\nif r1 > 2 goto +2\nr2 = 3\nr3 = 4\nr0 = 0\nexit\n").unwrap();
        // target of the branch is statement 4
        assert_eq!(p.blocks, vec![0..1, 2..4, 4..5]);
    }
}
