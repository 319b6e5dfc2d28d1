// SPDX-License-Identifier: Apache-2.0

//! Standard 8-byte eBPF instruction records:
//! opcode (u8), dst:src register nibbles (u8), offset (i16 LE), immediate (i32 LE).

use thiserror::Error;

use super::{AluOp, Control, Insn, InsnError, JmpOp, Program, Reg, Source, Stmt, Width, INSN_SIZE};

const CLS_LDX: u8 = 0x01;
const CLS_ST: u8 = 0x02;
const CLS_STX: u8 = 0x03;
const CLS_ALU: u8 = 0x04;
const CLS_JMP: u8 = 0x05;
const CLS_JMP32: u8 = 0x06;
const CLS_ALU64: u8 = 0x07;

const MODE_MEM: u8 = 0x60;
const SRC_X: u8 = 0x08;

const JA: u8 = 0x00;
const CALL: u8 = 0x80;
const EXIT: u8 = 0x90;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("unknown opcode {0:#04x}")]
    UnknownOpcode(u8),
    #[error("instruction record must be {INSN_SIZE} bytes, got {0}")]
    Length(usize),
    #[error("reserved field set in opcode {0:#04x}")]
    ReservedField(u8),
    #[error(transparent)]
    Invalid(#[from] InsnError),
}

fn alu_code(op: AluOp) -> u8 {
    match op {
        AluOp::Add => 0x00,
        AluOp::Sub => 0x10,
        AluOp::Mul => 0x20,
        AluOp::Div => 0x30,
        AluOp::Or => 0x40,
        AluOp::And => 0x50,
        AluOp::Lsh => 0x60,
        AluOp::Rsh => 0x70,
        AluOp::Neg => 0x80,
        AluOp::Mod => 0x90,
        AluOp::Xor => 0xa0,
        AluOp::Mov => 0xb0,
        AluOp::Arsh => 0xc0,
    }
}

fn alu_from_code(c: u8) -> Option<AluOp> {
    AluOp::ALL.into_iter().find(|op| alu_code(*op) == c)
}

fn size_code(w: Width) -> u8 {
    match w {
        Width::W => 0x00,
        Width::H => 0x08,
        Width::B => 0x10,
        Width::DW => 0x18,
    }
}

fn size_from_code(c: u8) -> Width {
    match c & 0x18 {
        0x00 => Width::W,
        0x08 => Width::H,
        0x10 => Width::B,
        _ => Width::DW,
    }
}

fn jmp_code(op: JmpOp) -> u8 {
    match op {
        JmpOp::Jeq => 0x10,
        JmpOp::Jgt => 0x20,
        JmpOp::Jge => 0x30,
        JmpOp::Jset => 0x40,
        JmpOp::Jne => 0x50,
        JmpOp::Jsgt => 0x60,
        JmpOp::Jsge => 0x70,
        JmpOp::Jlt => 0xa0,
        JmpOp::Jle => 0xb0,
        JmpOp::Jslt => 0xc0,
        JmpOp::Jsle => 0xd0,
    }
}

fn record(opcode: u8, dst: u8, src: u8, off: i16, imm: i32) -> [u8; 8] {
    let mut b = [0u8; 8];
    b[0] = opcode;
    b[1] = (src << 4) | (dst & 0x0f);
    b[2..4].copy_from_slice(&off.to_le_bytes());
    b[4..8].copy_from_slice(&imm.to_le_bytes());
    b
}

fn split_source(src: Source) -> (u8, u8, i32) {
    match src {
        Source::Reg(r) => (SRC_X, r.index() as u8, 0),
        Source::Imm(i) => (0, 0, i),
    }
}

/// Encodes one straight-line instruction.
pub fn encode(i: &Insn) -> [u8; 8] {
    match *i {
        Insn::Alu { wide, op, dst, src } => {
            let cls = if wide { CLS_ALU64 } else { CLS_ALU };
            let (x, s, imm) = split_source(src);
            record(alu_code(op) | x | cls, dst.index() as u8, s, 0, imm)
        }
        Insn::Load { width, dst, base, off } => {
            record(MODE_MEM | size_code(width) | CLS_LDX, dst.index() as u8, base.index() as u8, off, 0)
        }
        Insn::Store { width, base, off, src: Source::Reg(r) } => {
            record(MODE_MEM | size_code(width) | CLS_STX, base.index() as u8, r.index() as u8, off, 0)
        }
        Insn::Store { width, base, off, src: Source::Imm(imm) } => {
            record(MODE_MEM | size_code(width) | CLS_ST, base.index() as u8, 0, off, imm)
        }
    }
}

pub fn encode_stmt(s: &Stmt) -> [u8; 8] {
    match s {
        Stmt::Insn(i) => encode(&i.insn),
        Stmt::Control(Control::Ja { off }) => record(JA | CLS_JMP, 0, 0, *off, 0),
        Stmt::Control(Control::Cond { wide, op, dst, src, off }) => {
            let (x, s, imm) = split_source(*src);
            let cls = if *wide { CLS_JMP } else { CLS_JMP32 };
            record(jmp_code(*op) | x | cls, dst.index() as u8, s, *off, imm)
        }
        Stmt::Control(Control::Call { imm }) => record(CALL | CLS_JMP, 0, 0, 0, *imm),
        Stmt::Control(Control::Exit) => record(EXIT | CLS_JMP, 0, 0, 0, 0),
    }
}

pub fn encode_program(p: &Program) -> Vec<u8> {
    p.stmts.iter().flat_map(encode_stmt).collect()
}

struct Fields {
    opcode: u8,
    dst: u8,
    src: u8,
    off: i16,
    imm: i32,
}

fn fields(bytes: &[u8]) -> Result<Fields, DecodeError> {
    if bytes.len() != INSN_SIZE {
        return Err(DecodeError::Length(bytes.len()));
    }
    Ok(Fields {
        opcode: bytes[0],
        dst: bytes[1] & 0x0f,
        src: bytes[1] >> 4,
        off: i16::from_le_bytes([bytes[2], bytes[3]]),
        imm: i32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]),
    })
}

fn source_of(f: &Fields) -> Result<Source, DecodeError> {
    if f.opcode & SRC_X != 0 {
        if f.imm != 0 {
            return Err(DecodeError::ReservedField(f.opcode));
        }
        Ok(Source::Reg(Reg::new(f.src)?))
    } else {
        if f.src != 0 {
            return Err(DecodeError::ReservedField(f.opcode));
        }
        Ok(Source::Imm(f.imm))
    }
}

/// Decodes one record into a statement (straight-line instruction or control flow).
pub fn decode_stmt(bytes: &[u8]) -> Result<Stmt, DecodeError> {
    let f = fields(bytes)?;
    let op = f.opcode;
    let cls = op & 0x07;
    match cls {
        CLS_ALU | CLS_ALU64 => {
            let alu = alu_from_code(op & 0xf0).ok_or(DecodeError::UnknownOpcode(op))?;
            if f.off != 0 {
                return Err(DecodeError::ReservedField(op));
            }
            if alu == AluOp::Neg && (op & SRC_X != 0 || f.imm != 0 || f.src != 0) {
                return Err(DecodeError::ReservedField(op));
            }
            let src = source_of(&f)?;
            let insn = Insn::Alu { wide: cls == CLS_ALU64, op: alu, dst: Reg::new(f.dst)?, src }.validated()?;
            Ok(Stmt::Insn(insn.into()))
        }
        CLS_LDX | CLS_ST | CLS_STX => {
            if op & 0xe0 != MODE_MEM {
                return Err(DecodeError::UnknownOpcode(op));
            }
            let width = size_from_code(op);
            let insn = match cls {
                CLS_LDX => {
                    if f.imm != 0 {
                        return Err(DecodeError::ReservedField(op));
                    }
                    Insn::Load { width, dst: Reg::new(f.dst)?, base: Reg::new(f.src)?, off: f.off }
                }
                CLS_STX => {
                    if f.imm != 0 {
                        return Err(DecodeError::ReservedField(op));
                    }
                    Insn::Store { width, base: Reg::new(f.dst)?, off: f.off, src: Source::Reg(Reg::new(f.src)?) }
                }
                _ => {
                    if f.src != 0 {
                        return Err(DecodeError::ReservedField(op));
                    }
                    Insn::Store { width, base: Reg::new(f.dst)?, off: f.off, src: Source::Imm(f.imm) }
                }
            };
            Ok(Stmt::Insn(insn.validated()?.into()))
        }
        CLS_JMP | CLS_JMP32 => {
            let code = op & 0xf0;
            if cls == CLS_JMP && op & SRC_X == 0 {
                match code {
                    JA => return Ok(Stmt::Control(Control::Ja { off: f.off })),
                    CALL => return Ok(Stmt::Control(Control::Call { imm: f.imm })),
                    EXIT => return Ok(Stmt::Control(Control::Exit)),
                    _ => {}
                }
            }
            let jop = JmpOp::ALL.into_iter().find(|o| jmp_code(*o) == code).ok_or(DecodeError::UnknownOpcode(op))?;
            let src = source_of(&f)?;
            Ok(Stmt::Control(Control::Cond { wide: cls == CLS_JMP, op: jop, dst: Reg::new(f.dst)?, src, off: f.off }))
        }
        _ => Err(DecodeError::UnknownOpcode(op)),
    }
}

/// Decodes one straight-line instruction; control flow is rejected.
pub fn decode(bytes: &[u8]) -> Result<Insn, DecodeError> {
    match decode_stmt(bytes)? {
        Stmt::Insn(i) => Ok(i.insn),
        Stmt::Control(_) => Err(DecodeError::UnknownOpcode(bytes[0])),
    }
}

/// Decodes a flat sequence of 8-byte records.
pub fn decode_program(bytes: &[u8]) -> Result<Program, (usize, DecodeError)> {
    if !bytes.len().is_multiple_of(INSN_SIZE) {
        return Err((bytes.len() / INSN_SIZE, DecodeError::Length(bytes.len() % INSN_SIZE)));
    }
    let stmts = bytes
        .chunks(INSN_SIZE)
        .enumerate()
        .map(|(i, c)| decode_stmt(c).map_err(|e| (i, e)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Program::from_stmts(stmts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn neg_has_zero_payload() {
        let b = encode(&Insn::Alu { wide: true, op: AluOp::Neg, dst: Reg::R0, src: Source::Imm(0) });
        assert_eq!(b, [0x87, 0, 0, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn all_zero_word_is_unknown() {
        assert_eq!(decode(&[0u8; 8]), Err(DecodeError::UnknownOpcode(0)));
    }

    #[test]
    fn known_encodings() {
        // r2 = *(u64 *)(r0 + 8)
        let b = encode(&Insn::Load { width: Width::DW, dst: Reg::R2, base: Reg::R0, off: 8 });
        assert_eq!(b, [0x79, 0x02, 8, 0, 0, 0, 0, 0]);
        // *(u16 *)(r10 - 2) = r1
        let b = encode(&Insn::Store { width: Width::H, base: Reg::FP, off: -2, src: Source::Reg(Reg::R1) });
        assert_eq!(b, [0x6b, 0x1a, 0xfe, 0xff, 0, 0, 0, 0]);
        assert_eq!(encode_stmt(&Stmt::Control(Control::Exit)), [0x95, 0, 0, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn bad_length() {
        assert_eq!(decode(&[0x07; 7]), Err(DecodeError::Length(7)));
    }

    pub(crate) fn reg() -> impl Strategy<Value = Reg> {
        (0u8..11).prop_map(|i| Reg::new(i).unwrap())
    }

    pub(crate) fn writable() -> impl Strategy<Value = Reg> {
        (0u8..10).prop_map(|i| Reg::new(i).unwrap())
    }

    pub(crate) fn insn_strategy() -> impl Strategy<Value = Insn> {
        let width = prop::sample::select(Width::ALL.to_vec());
        let op = prop::sample::select(AluOp::ALL.to_vec());
        let alu = (
            any::<bool>(),
            op,
            writable(),
            prop_oneof![reg().prop_map(Source::Reg), any::<i32>().prop_map(Source::Imm)],
        )
            .prop_map(|(wide, op, dst, src)| {
                let src = match (op, src) {
                    (AluOp::Neg, _) => Source::Imm(0),
                    (o, Source::Imm(k)) if o.is_shift() => Source::Imm(k.rem_euclid(if wide { 64 } else { 32 })),
                    (_, s) => s,
                };
                Insn::Alu { wide, op, dst, src }
            });
        let load = (width.clone(), writable(), reg(), any::<i16>()).prop_map(|(width, dst, base, off)| Insn::Load {
            width,
            dst,
            base,
            off,
        });
        let store =
            (width, reg(), any::<i16>(), prop_oneof![reg().prop_map(Source::Reg), any::<i32>().prop_map(Source::Imm)])
                .prop_map(|(width, base, off, src)| Insn::Store { width, base, off, src });
        prop_oneof![alu, load, store]
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(i in insn_strategy()) {
            prop_assert!(i.validate().is_ok());
            prop_assert_eq!(decode(&encode(&i)), Ok(i));
        }

        #[test]
        fn parse_inverts_print(i in insn_strategy()) {
            prop_assert_eq!(crate::isa::parse_insn(&i.to_string()), Ok(i));
        }
    }
}
