// SPDX-License-Identifier: Apache-2.0

//! Text format for machine states.
//!
//! ```text
//! # comment
//! r2 = 0x1f
//! r1 = &ctx
//! r6 = &stack-16
//! mem stack[-8..0] = 0102030405060708
//! mem ctx[0..4] = deadbeef
//! ```
//!
//! Ranges are half-open and byte strings are listed in address order.

use thiserror::Error;

use super::{MachineState, MemKey, RegType, RegTypeMap, Region};
use crate::isa::Reg;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("state line {line}: {reason}")]
pub struct SnapshotError {
    pub line: usize,
    pub reason: String,
}

fn parse_int(s: &str) -> Option<i128> {
    let s = s.trim();
    let (neg, body) = match s.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let v = match body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        Some(h) => i128::from_str_radix(h, 16).ok()?,
        None => body.parse::<i128>().ok()?,
    };
    Some(if neg { -v } else { v })
}

fn parse_pointer(s: &str) -> Option<(Region, i64)> {
    let split = s.find(['+', '-']).unwrap_or(s.len());
    let region = Region::from_name(&s[..split])?;
    let off = if split == s.len() { 0 } else { parse_int(&s[split..])? as i64 };
    Some((region, off))
}

/// Parses a state; registers given as `&region[+off]` are typed as pointers.
pub fn parse_snapshot(text: &str) -> Result<(MachineState, RegTypeMap), SnapshotError> {
    let mut s = MachineState::default();
    let mut types = RegTypeMap::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |reason: &str| SnapshotError { line: i + 1, reason: reason.to_string() };
        let (lhs, rhs) = line.split_once('=').ok_or_else(|| err("expected `=`"))?;
        let (lhs, rhs) = (lhs.trim(), rhs.trim());
        if let Some(spec) = lhs.strip_prefix("mem") {
            let spec = spec.trim();
            let open = spec.find('[').ok_or_else(|| err("expected `[`"))?;
            let region = Region::from_name(spec[..open].trim()).ok_or_else(|| err("unknown region"))?;
            let range = spec[open + 1..].strip_suffix(']').ok_or_else(|| err("expected `]`"))?;
            let (lo, hi) = range.split_once("..").ok_or_else(|| err("expected `..`"))?;
            let lo = parse_int(lo).ok_or_else(|| err("bad offset"))? as i64;
            let hi = parse_int(hi).ok_or_else(|| err("bad offset"))? as i64;
            let hex: String = rhs.chars().filter(|c| !c.is_whitespace()).collect();
            if hi < lo || hex.len() as i64 != 2 * (hi - lo) {
                return Err(err("byte count does not match range"));
            }
            for j in 0..(hi - lo) {
                let b = u8::from_str_radix(&hex[2 * j as usize..2 * j as usize + 2], 16)
                    .map_err(|_| err("bad hex byte"))?;
                s.set_byte(MemKey::new(region, lo + j), b);
            }
        } else {
            let r = lhs
                .strip_prefix('r')
                .and_then(|n| n.parse::<u8>().ok())
                .and_then(|n| Reg::new(n).ok())
                .ok_or_else(|| err("unknown register"))?;
            if r == Reg::FP {
                return Err(err("r10 is fixed"));
            }
            if let Some(p) = rhs.strip_prefix('&') {
                let (region, off) = parse_pointer(p.trim()).ok_or_else(|| err("bad pointer"))?;
                s.set_reg(r, region.base().wrapping_add(off as u64));
                types.set(r, RegType::Ptr { region, off: i32::try_from(off).ok() });
            } else {
                let v = parse_int(rhs).ok_or_else(|| err("bad value"))?;
                if v < i64::MIN as i128 || v > u64::MAX as i128 {
                    return Err(err("value out of range"));
                }
                s.set_reg(r, v as u64);
                types.set(r, RegType::Scalar);
            }
        }
    }
    Ok((s, types))
}

/// Renders a state. Registers whose type is a pointer print symbolically.
pub fn format_snapshot(s: &MachineState, types: &RegTypeMap) -> String {
    let mut out = String::new();
    for r in Reg::all().filter(|r| *r != Reg::FP) {
        let Some(v) = s.reg(r) else { continue };
        match types.get(r).region() {
            Some(region) => {
                let off = v.wrapping_sub(region.base()) as i64;
                match off {
                    0 => out.push_str(&format!("{} = &{}\n", r, region)),
                    o if o < 0 => out.push_str(&format!("{} = &{}{}\n", r, region, o)),
                    o => out.push_str(&format!("{} = &{}+{}\n", r, region, o)),
                }
            }
            None => out.push_str(&format!("{} = {:#x}\n", r, v)),
        }
    }
    let mut iter = s.mem.iter().peekable();
    while let Some((k, b)) = iter.next() {
        let mut hex = format!("{:02x}", b);
        let mut end = k.off + 1;
        while let Some((k2, b2)) = iter.peek() {
            if k2.region != k.region || k2.off != end {
                break;
            }
            hex.push_str(&format!("{:02x}", b2));
            end += 1;
            iter.next();
        }
        out.push_str(&format!("mem {}[{}..{}] = {}\n", k.region, k.off, end, hex));
    }
    out
}
