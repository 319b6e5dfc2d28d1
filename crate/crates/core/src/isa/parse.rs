// SPDX-License-Identifier: Apache-2.0

//! Parser for the kernel-verifier style assembly syntax, e.g.
//! `r1 = *(u32 *)(r10 - 4)` or `w2 <<= 3`.

use thiserror::Error;

use super::{AluOp, Control, Insn, InsnError, Instruction, JmpOp, Program, Reg, Source, Stmt, Width};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("line {line}: syntax error: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("line {line}: unsupported instruction `{text}`")]
    Unsupported { line: usize, text: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Num(i64),
    Punct(&'static str),
}

const PUNCT: [&str; 25] = [
    "s>>=", "<<=", ">>=", "s>=", "s<=", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "==", "!=", ">=", "<=", "s>",
    "s<", ">", "<", "=", "*", "(", ")",
];
const SINGLE: [&str; 4] = ["+", "-", "&", ":"];

fn tokenize(s: &str) -> Result<Vec<Tok>, String> {
    let b = s.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    'outer: while i < b.len() {
        let c = b[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        for p in PUNCT.iter().chain(SINGLE.iter()) {
            if s[i..].starts_with(p) {
                // `s` followed by a comparison is an operator, but `s` alone is not an identifier we use
                if p.starts_with('s') && i > 0 && (b[i - 1].is_ascii_alphanumeric() || b[i - 1] == b'_') {
                    continue;
                }
                // `&=` vs `&`: PUNCT is scanned first so compound forms win
                out.push(Tok::Punct(p));
                i += p.len();
                continue 'outer;
            }
        }
        if c.is_ascii_digit() {
            let start = i;
            let (radix, digits_start) =
                if s[i..].starts_with("0x") || s[i..].starts_with("0X") { (16, i + 2) } else { (10, i) };
            i = digits_start;
            while i < b.len() && b[i].is_ascii_alphanumeric() {
                i += 1;
            }
            let digits = &s[digits_start..i];
            let v = i64::from_str_radix(digits, radix)
                .or_else(|_| u64::from_str_radix(digits, radix).map(|v| v as i64))
                .map_err(|_| format!("bad number `{}`", &s[start..i]))?;
            out.push(Tok::Num(v));
            continue;
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            let start = i;
            while i < b.len() && (b[i].is_ascii_alphanumeric() || b[i] == b'_') {
                i += 1;
            }
            out.push(Tok::Ident(s[start..i].to_string()));
            continue;
        }
        return Err(format!("unexpected character `{}`", c as char));
    }
    Ok(out)
}

struct Cursor<'a> {
    toks: &'a [Tok],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<&'a Tok> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<&'a Tok> {
        let t = self.toks.get(self.pos);
        self.pos += 1;
        t
    }

    fn eat_punct(&mut self, p: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Punct(q)) if *q == p) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_punct(&mut self, p: &str) -> Result<(), String> {
        if self.eat_punct(p) {
            Ok(())
        } else {
            Err(format!("expected `{}`", p))
        }
    }

    fn eat_ident(&mut self, name: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Ident(q)) if q == name) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    fn finish(&self) -> Result<(), String> {
        if self.at_end() {
            Ok(())
        } else {
            Err(format!("trailing tokens starting at {:?}", self.toks[self.pos]))
        }
    }

    /// Signed integer literal with an optional leading `-` or `+`.
    fn signed(&mut self) -> Result<i64, String> {
        let neg = if self.eat_punct("-") {
            true
        } else {
            self.eat_punct("+");
            false
        };
        match self.next() {
            Some(Tok::Num(v)) => Ok(if neg { v.wrapping_neg() } else { *v }),
            other => Err(format!("expected number, found {:?}", other)),
        }
    }
}

/// `rN` is 64-bit, `wN` is the 32-bit view.
fn reg_token(t: Option<&Tok>) -> Option<(Reg, bool)> {
    let Tok::Ident(name) = t? else { return None };
    let wide = match name.as_bytes().first()? {
        b'r' => true,
        b'w' => false,
        _ => return None,
    };
    let idx: u8 = name[1..].parse().ok()?;
    Reg::new(idx).ok().map(|r| (r, wide))
}

fn imm32(v: i64) -> Result<i32, String> {
    if (i32::MIN as i64..=i32::MAX as i64).contains(&v) {
        Ok(v as i32)
    } else if (0..=u32::MAX as i64).contains(&v) {
        Ok(v as u32 as i32)
    } else {
        Err(format!("immediate {} does not fit in 32 bits", v))
    }
}

fn off16(v: i64) -> Result<i16, String> {
    i16::try_from(v).map_err(|_| format!("offset {} does not fit in 16 bits", v))
}

fn width_ident(c: &mut Cursor) -> Result<Width, String> {
    match c.next() {
        Some(Tok::Ident(s)) => match s.as_str() {
            "u8" => Ok(Width::B),
            "u16" => Ok(Width::H),
            "u32" => Ok(Width::W),
            "u64" => Ok(Width::DW),
            _ => Err(format!("bad access size `{}`", s)),
        },
        other => Err(format!("expected access size, found {:?}", other)),
    }
}

/// `*(uW *)(rB + OFF)`, with the leading `*` already consumed.
fn mem_operand(c: &mut Cursor) -> Result<(Width, Reg, i16), String> {
    c.expect_punct("(")?;
    let w = width_ident(c)?;
    c.expect_punct("*")?;
    c.expect_punct(")")?;
    c.expect_punct("(")?;
    let (base, wide) = reg_token(c.next()).ok_or("expected base register")?;
    if !wide {
        return Err("base register must be 64-bit".into());
    }
    let off = if c.eat_punct(")") {
        0
    } else {
        let neg = if c.eat_punct("-") {
            true
        } else {
            c.expect_punct("+")?;
            false
        };
        let v = c.signed()?;
        c.expect_punct(")")?;
        off16(if neg { -v } else { v })?
    };
    Ok((w, base, off))
}

fn source(c: &mut Cursor, wide: bool) -> Result<Source, String> {
    if let Some((r, w)) = reg_token(c.peek()) {
        c.pos += 1;
        if w != wide {
            return Err("mixed 32-bit and 64-bit register operands".into());
        }
        return Ok(Source::Reg(r));
    }
    Ok(Source::Imm(imm32(c.signed()?)?))
}

fn jump_target(c: &mut Cursor) -> Result<i16, String> {
    c.eat_ident("pc");
    let v = c.signed()?;
    off16(v)
}

fn compound_op(p: &str) -> Option<AluOp> {
    Some(match p {
        "+=" => AluOp::Add,
        "-=" => AluOp::Sub,
        "*=" => AluOp::Mul,
        "/=" => AluOp::Div,
        "%=" => AluOp::Mod,
        "&=" => AluOp::And,
        "|=" => AluOp::Or,
        "^=" => AluOp::Xor,
        "<<=" => AluOp::Lsh,
        ">>=" => AluOp::Rsh,
        "s>>=" => AluOp::Arsh,
        _ => return None,
    })
}

fn jmp_op(p: &str) -> Option<JmpOp> {
    JmpOp::ALL.into_iter().find(|o| o.symbol() == p)
}

enum Parsed {
    Stmt(Stmt),
    Unsupported,
}

fn insn_err(e: InsnError) -> String {
    e.to_string()
}

fn parse_tokens(toks: &[Tok]) -> Result<Parsed, String> {
    let mut c = Cursor { toks, pos: 0 };
    // optional `N:` statement index prefix
    if matches!((toks.first(), toks.get(1)), (Some(Tok::Num(_)), Some(Tok::Punct(":")))) {
        c.pos = 2;
    }
    let first = c.peek().ok_or("empty statement")?.clone();
    match &first {
        Tok::Ident(k) if k == "exit" => {
            c.pos += 1;
            c.finish()?;
            return Ok(Parsed::Stmt(Stmt::Control(Control::Exit)));
        }
        Tok::Ident(k) if k == "call" => {
            c.pos += 1;
            let imm = imm32(c.signed().map_err(|_| "call expects a helper number".to_string())?)?;
            c.finish()?;
            return Ok(Parsed::Stmt(Stmt::Control(Control::Call { imm })));
        }
        Tok::Ident(k) if k == "goto" => {
            c.pos += 1;
            let off = jump_target(&mut c)?;
            c.finish()?;
            return Ok(Parsed::Stmt(Stmt::Control(Control::Ja { off })));
        }
        Tok::Ident(k) if k == "if" => {
            c.pos += 1;
            let (dst, wide) = reg_token(c.next()).ok_or("expected register after `if`")?;
            let op = match c.next() {
                Some(Tok::Punct(p)) => jmp_op(p).ok_or_else(|| format!("bad comparison `{}`", p))?,
                other => return Err(format!("expected comparison, found {:?}", other)),
            };
            let src = source(&mut c, wide)?;
            if !c.eat_ident("goto") {
                return Err("expected `goto`".into());
            }
            let off = jump_target(&mut c)?;
            c.finish()?;
            return Ok(Parsed::Stmt(Stmt::Control(Control::Cond { wide, op, dst, src, off })));
        }
        Tok::Ident(k) if k == "lock" || k == "callx" => return Ok(Parsed::Unsupported),
        Tok::Punct("*") => {
            c.pos += 1;
            let (width, base, off) = mem_operand(&mut c)?;
            if c.peek().is_some_and(|t| matches!(t, Tok::Punct(p) if *p != "=")) {
                // atomic `*(u64 *)(r1 + 0) += r2`
                return Ok(Parsed::Unsupported);
            }
            c.expect_punct("=")?;
            let src = source(&mut c, true)?;
            c.finish()?;
            let insn = Insn::store(width, base, off, src).map_err(insn_err)?;
            return Ok(Parsed::Stmt(Stmt::Insn(insn.into())));
        }
        _ => {}
    }
    let (dst, wide) = reg_token(c.next()).ok_or_else(|| format!("unrecognized statement start {:?}", first))?;
    let op_tok = match c.next() {
        Some(Tok::Punct(p)) => *p,
        other => return Err(format!("expected operator, found {:?}", other)),
    };
    if op_tok == "=" {
        // load, neg, mov, or something unsupported (lddw, byte swap)
        if c.eat_punct("*") {
            if !wide {
                return Err("load destination must be 64-bit".into());
            }
            let (width, base, off) = mem_operand(&mut c)?;
            c.finish()?;
            return Ok(Parsed::Stmt(Stmt::Insn(Insn::load(width, dst, base, off).map_err(insn_err)?.into())));
        }
        if matches!(c.peek(), Some(Tok::Ident(_))) && reg_token(c.peek()).is_none() {
            // byte swaps (`be16 r1`) and friends
            return Ok(Parsed::Unsupported);
        }
        if c.eat_punct("-") {
            if let Some((r, w)) = reg_token(c.peek()) {
                c.pos += 1;
                if r != dst || w != wide {
                    return Err("negation must be of the destination register".into());
                }
                c.finish()?;
                let insn =
                    Insn::Alu { wide, op: AluOp::Neg, dst, src: Source::Imm(0) }.validated().map_err(insn_err)?;
                return Ok(Parsed::Stmt(Stmt::Insn(insn.into())));
            }
            c.pos -= 1;
        }
        let src = source(&mut c, wide)?;
        if c.eat_ident("ll") {
            return Ok(Parsed::Unsupported);
        }
        c.finish()?;
        let insn = Insn::Alu { wide, op: AluOp::Mov, dst, src }.validated().map_err(insn_err)?;
        return Ok(Parsed::Stmt(Stmt::Insn(insn.into())));
    }
    let op = compound_op(op_tok).ok_or_else(|| format!("unknown operator `{}`", op_tok))?;
    let src = source(&mut c, wide)?;
    c.finish()?;
    let insn = Insn::Alu { wide, op, dst, src }.validated().map_err(insn_err)?;
    Ok(Parsed::Stmt(Stmt::Insn(insn.into())))
}

fn strip_comment(line: &str) -> &str {
    let mut end = line.len();
    for pat in ["#", ";", "//"] {
        if let Some(i) = line.find(pat) {
            end = end.min(i);
        }
    }
    &line[..end]
}

fn parse_line(line: &str, lineno: usize) -> Result<Option<Stmt>, ParseError> {
    let text = strip_comment(line).trim();
    if text.is_empty() {
        return Ok(None);
    }
    let syntax = |reason: String| ParseError::Syntax { line: lineno, reason };
    let toks = tokenize(text).map_err(syntax)?;
    match parse_tokens(&toks).map_err(syntax)? {
        Parsed::Stmt(s) => Ok(Some(s)),
        Parsed::Unsupported => Err(ParseError::Unsupported { line: lineno, text: text.to_string() }),
    }
}

/// Parses newline-separated assembly into a [`Program`].
pub fn parse_asm(text: &str) -> Result<Program, ParseError> {
    let mut stmts = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if let Some(s) = parse_line(line, i + 1)? {
            stmts.push(s);
        }
    }
    Ok(Program::from_stmts(stmts))
}

/// Parses a single straight-line instruction.
pub fn parse_insn(text: &str) -> Result<Insn, ParseError> {
    match parse_line(text, 1)? {
        Some(Stmt::Insn(Instruction { insn, .. })) => Ok(insn),
        Some(Stmt::Control(_)) | None => Err(ParseError::Unsupported { line: 1, text: text.trim().to_string() }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn load_u64() {
        let i = parse_insn("r2 = *(u64 *)(r0 + 8)").unwrap();
        assert_eq!(i, Insn::Load { width: Width::DW, dst: Reg::R2, base: Reg::R0, off: 8 });
        assert_eq!(i.size(), Some(8));
    }

    #[test]
    fn shift_right_imm() {
        let i = parse_insn("r1 >>= 1").unwrap();
        assert_eq!(i, Insn::Alu { wide: true, op: AluOp::Rsh, dst: Reg::R1, src: Source::Imm(1) });
    }

    #[test]
    fn empty_input_is_empty_program() {
        let p = parse_asm("").unwrap();
        assert!(p.stmts.is_empty());
        assert!(p.blocks.is_empty());
    }

    #[test]
    fn compact_spacing_and_negative_offsets() {
        assert_eq!(
            parse_insn("*(u8*)(r10-2) = r1").unwrap(),
            Insn::Store { width: Width::B, base: Reg::FP, off: -2, src: Source::Reg(Reg::R1) }
        );
        assert_eq!(
            parse_insn("*(u32 *)(r1 + 0) = 42").unwrap(),
            Insn::Store { width: Width::W, base: Reg::R1, off: 0, src: Source::Imm(42) }
        );
        assert_eq!(
            parse_insn("r1 = *(u32 *)(r10 + -4)").unwrap(),
            Insn::Load { width: Width::W, dst: Reg::R1, base: Reg::FP, off: -4 }
        );
    }

    #[test]
    fn alu32_and_neg_and_arsh() {
        assert_eq!(
            parse_insn("w3 += w4").unwrap(),
            Insn::Alu { wide: false, op: AluOp::Add, dst: Reg::R3, src: Source::Reg(Reg::R4) }
        );
        assert_eq!(
            parse_insn("r5 = -r5").unwrap(),
            Insn::Alu { wide: true, op: AluOp::Neg, dst: Reg::R5, src: Source::Imm(0) }
        );
        assert_eq!(
            parse_insn("r5 s>>= 3").unwrap(),
            Insn::Alu { wide: true, op: AluOp::Arsh, dst: Reg::R5, src: Source::Imm(3) }
        );
        assert_eq!(
            parse_insn("r1 = -7").unwrap(),
            Insn::Alu { wide: true, op: AluOp::Mov, dst: Reg::R1, src: Source::Imm(-7) }
        );
        assert_eq!(
            parse_insn("r1 &= 0xffffffff").unwrap(),
            Insn::Alu { wide: true, op: AluOp::And, dst: Reg::R1, src: Source::Imm(-1) }
        );
    }

    #[test]
    fn control_flow_is_kept() {
        let p = parse_asm("r0 = 0 # comment\nif r1 s>= 5 goto pc+1\ncall 12\n; nothing\nexit").unwrap();
        assert_eq!(p.stmts.len(), 4);
        assert_eq!(
            p.stmts[1],
            Stmt::Control(Control::Cond { wide: true, op: JmpOp::Jsge, dst: Reg::R1, src: Source::Imm(5), off: 1 })
        );
        assert_eq!(p.stmts[2], Stmt::Control(Control::Call { imm: 12 }));
        assert_eq!(p.stmts[3], Stmt::Control(Control::Exit));
    }

    #[test]
    fn errors_carry_line_numbers() {
        assert!(matches!(parse_asm("r1 = 1\nr1 +=\n"), Err(ParseError::Syntax { line: 2, .. })));
        assert!(matches!(parse_asm("r1 = 5 ll"), Err(ParseError::Unsupported { line: 1, .. })));
        assert!(matches!(parse_asm("\n\nr1 = be16 r1"), Err(ParseError::Unsupported { line: 3, .. })));
        assert!(matches!(parse_asm("lock *(u64 *)(r1 + 0) += r2"), Err(ParseError::Unsupported { .. })));
        assert!(matches!(parse_asm("*(u64 *)(r1 + 0) += r2"), Err(ParseError::Unsupported { .. })));
        assert!(matches!(parse_asm("r10 = 1"), Err(ParseError::Syntax { .. })));
        assert!(matches!(parse_asm("r1 <<= 64"), Err(ParseError::Syntax { .. })));
        assert!(matches!(parse_asm("r1 = w2"), Err(ParseError::Syntax { .. })));
    }

    #[test]
    fn statement_index_prefix_is_ignored() {
        let p = parse_asm("0: r1 = 1\n1: exit").unwrap();
        assert_eq!(p.stmts.len(), 2);
    }
}
