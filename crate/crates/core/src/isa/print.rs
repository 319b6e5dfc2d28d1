// SPDX-License-Identifier: Apache-2.0

use std::fmt;

use super::{AluOp, Control, Insn, Instruction, Program, Reg, Source, Stmt, Width};

fn reg_name(r: Reg, wide: bool) -> String {
    format!("{}{}", if wide { 'r' } else { 'w' }, r.index())
}

fn src_text(s: Source, wide: bool) -> String {
    match s {
        Source::Reg(r) => reg_name(r, wide),
        Source::Imm(i) => i.to_string(),
    }
}

fn mem_text(width: Width, base: Reg, off: i16) -> String {
    let bits = width.bytes() as u32 * 8;
    if off < 0 {
        format!("*(u{} *)({} - {})", bits, base, -(off as i32))
    } else {
        format!("*(u{} *)({} + {})", bits, base, off)
    }
}

fn op_symbol(op: AluOp) -> &'static str {
    match op {
        AluOp::Add => "+=",
        AluOp::Sub => "-=",
        AluOp::Mul => "*=",
        AluOp::Div => "/=",
        AluOp::Mod => "%=",
        AluOp::And => "&=",
        AluOp::Or => "|=",
        AluOp::Xor => "^=",
        AluOp::Lsh => "<<=",
        AluOp::Rsh => ">>=",
        AluOp::Arsh => "s>>=",
        AluOp::Mov | AluOp::Neg => "=",
    }
}

impl fmt::Display for Insn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Insn::Alu { wide, op: AluOp::Neg, dst, .. } => {
                let d = reg_name(dst, wide);
                write!(f, "{} = -{}", d, d)
            }
            Insn::Alu { wide, op, dst, src } => {
                write!(f, "{} {} {}", reg_name(dst, wide), op_symbol(op), src_text(src, wide))
            }
            Insn::Load { width, dst, base, off } => write!(f, "{} = {}", dst, mem_text(width, base, off)),
            Insn::Store { width, base, off, src } => {
                write!(f, "{} = {}", mem_text(width, base, off), src_text(src, true))
            }
        }
    }
}

fn jump_text(off: i16) -> String {
    if off < 0 {
        format!("-{}", -(off as i32))
    } else {
        format!("+{}", off)
    }
}

impl fmt::Display for Control {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Control::Ja { off } => write!(f, "goto {}", jump_text(off)),
            Control::Cond { wide, op, dst, src, off } => {
                write!(f, "if {} {} {} goto {}", reg_name(dst, wide), op.symbol(), src_text(src, wide), jump_text(off))
            }
            Control::Call { imm } => write!(f, "call {}", imm),
            Control::Exit => f.write_str("exit"),
        }
    }
}

impl fmt::Display for Stmt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stmt::Insn(i) => i.insn.fmt(f),
            Stmt::Control(c) => c.fmt(f),
        }
    }
}

/// Renders a program, one statement per line.
pub fn print_asm(p: &Program) -> String {
    let mut out = String::new();
    for s in &p.stmts {
        out.push_str(&s.to_string());
        out.push('\n');
    }
    out
}

/// Renders an instruction list, one per line.
pub fn print_insns(insns: &[Instruction]) -> String {
    let mut out = String::new();
    for i in insns {
        out.push_str(&i.insn.to_string());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::parse_asm;

    #[test]
    fn renders_memory_forms() {
        let ld = Insn::Load { width: Width::H, dst: Reg::R3, base: Reg::R1, off: 2 };
        assert_eq!(ld.to_string(), "r3 = *(u16 *)(r1 + 2)");
        let st = Insn::Store { width: Width::B, base: Reg::FP, off: -2, src: Source::Reg(Reg::R1) };
        assert_eq!(st.to_string(), "*(u8 *)(r10 - 2) = r1");
    }

    #[test]
    fn renders_mov_reg() {
        let mov = Insn::Alu { wide: true, op: AluOp::Mov, dst: Reg::R1, src: Source::Reg(Reg::R4) };
        assert_eq!(mov.to_string(), "r1 = r4");
        let neg = Insn::Alu { wide: false, op: AluOp::Neg, dst: Reg::R2, src: Source::Imm(0) };
        assert_eq!(neg.to_string(), "w2 = -w2");
    }

    #[test]
    fn canonical_text_round_trips_token_for_token() {
        let src = "r1 = *(u32 *)(r0 + 8)\nr2 = *(u32 *)(r0 + 12)\nr2 <<= 32\nr2 |= r1\n\
                   if w2 s< -3 goto -4\nw3 s>>= 5\n*(u64 *)(r10 - 8) = -1\ncall 7\ngoto +0\nexit\n";
        let p = parse_asm(src).unwrap();
        assert_eq!(print_asm(&p), src);
    }
}
