// SPDX-License-Identifier: Apache-2.0

use std::fmt;

use super::{MemKey, Region, STACK_SIZE};
use crate::isa::{Reg, RegSet};

/// One bit per stack byte, offsets `[-512, 0)`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct StackMask([u64; 8]);

impl StackMask {
    pub const NONE: StackMask = StackMask([0; 8]);
    pub const ALL: StackMask = StackMask([u64::MAX; 8]);

    fn index(off: i64) -> Option<usize> {
        (-STACK_SIZE..0).contains(&off).then(|| (off + STACK_SIZE) as usize)
    }

    pub fn contains(&self, off: i64) -> bool {
        Self::index(off).is_some_and(|i| self.0[i / 64] >> (i % 64) & 1 == 1)
    }

    pub fn insert(&mut self, off: i64) {
        if let Some(i) = Self::index(off) {
            self.0[i / 64] |= 1 << (i % 64);
        }
    }

    pub fn remove(&mut self, off: i64) {
        if let Some(i) = Self::index(off) {
            self.0[i / 64] &= !(1 << (i % 64));
        }
    }

    /// Marks `[lo, hi)` live.
    pub fn insert_range(&mut self, lo: i64, hi: i64) {
        for o in lo.max(-STACK_SIZE)..hi.min(0) {
            self.insert(o);
        }
    }

    pub fn remove_range(&mut self, lo: i64, hi: i64) {
        for o in lo.max(-STACK_SIZE)..hi.min(0) {
            self.remove(o);
        }
    }

    pub fn union(&self, o: &StackMask) -> StackMask {
        let mut out = *self;
        for i in 0..8 {
            out.0[i] |= o.0[i];
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.0.iter().all(|w| *w == 0)
    }

    /// Maximal live ranges, ascending.
    pub fn ranges(&self) -> Vec<(i64, i64)> {
        let mut out: Vec<(i64, i64)> = Vec::new();
        for o in -STACK_SIZE..0 {
            if !self.contains(o) {
                continue;
            }
            match out.last_mut() {
                Some((_, hi)) if *hi == o => *hi = o + 1,
                _ => out.push((o, o + 1)),
            }
        }
        out
    }
}

impl fmt::Debug for StackMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self)
    }
}

impl fmt::Display for StackMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.ranges().iter().map(|(lo, hi)| format!("stack[{}..{})", lo, hi)).collect();
        f.write_str(&parts.join(","))
    }
}

/// Observable locations after a code fragment. Memory outside the stack is
/// always observable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LiveOut {
    pub regs: RegSet,
    pub stack: StackMask,
}

impl LiveOut {
    pub fn new(regs: RegSet, stack: StackMask) -> LiveOut {
        LiveOut { regs, stack }
    }

    /// Registers only; no stack byte is live.
    pub fn regs(regs: RegSet) -> LiveOut {
        LiveOut { regs, stack: StackMask::NONE }
    }

    pub fn everything() -> LiveOut {
        LiveOut { regs: RegSet::all_general(), stack: StackMask::ALL }
    }

    pub fn mem_live(&self, k: MemKey) -> bool {
        k.region != Region::Stack || self.stack.contains(k.off)
    }
}

impl fmt::Display for LiveOut {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts: Vec<String> = self.regs.iter().map(|r| r.to_string()).collect();
        if !self.stack.is_empty() {
            parts.push(self.stack.to_string());
        }
        f.write_str(&parts.join(","))
    }
}

impl std::str::FromStr for LiveOut {
    type Err = String;

    /// Parses a comma-separated list of registers, `stack[lo..hi)` ranges
    /// and the words `stack` (every stack byte) or `none`.
    fn from_str(s: &str) -> Result<LiveOut, String> {
        let mut out = LiveOut::regs(RegSet::EMPTY);
        let mut rest = s.trim();
        while !rest.is_empty() {
            let (item, tail) = if rest.starts_with("stack[") {
                let end = rest.find([')', ']']).ok_or_else(|| format!("unterminated range in `{}`", s))?;
                (&rest[..=end], &rest[end + 1..])
            } else {
                match rest.find(',') {
                    Some(i) => (&rest[..i], &rest[i..]),
                    None => (rest, ""),
                }
            };
            rest = tail.trim_start().trim_start_matches(',').trim_start();
            let item = item.trim();
            match item {
                "" | "none" => {}
                "stack" => out.stack = StackMask::ALL,
                _ if item.starts_with("stack[") => {
                    let body = &item[6..item.len() - 1];
                    let (lo, hi) = body.split_once("..").ok_or_else(|| format!("bad range `{}`", item))?;
                    let lo: i64 = lo.trim().parse().map_err(|_| format!("bad range `{}`", item))?;
                    let hi: i64 = hi.trim().parse().map_err(|_| format!("bad range `{}`", item))?;
                    if lo >= hi || lo < -STACK_SIZE || hi > 0 {
                        return Err(format!("stack range `{}` outside [-512, 0)", item));
                    }
                    out.stack.insert_range(lo, hi);
                }
                _ => {
                    let r: Reg = item.parse().map_err(|_| format!("bad live-out item `{}`", item))?;
                    out.regs.insert(r);
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_merge() {
        let mut m = StackMask::NONE;
        m.insert_range(-16, -8);
        m.insert_range(-8, -4);
        m.insert(-1);
        assert_eq!(m.ranges(), vec![(-16, -4), (-1, 0)]);
        assert!(!m.contains(0));
        m.insert(5);
        assert_eq!(m.ranges().len(), 2);
    }

    #[test]
    fn parses_lists() {
        let l: LiveOut = "r0, r2,stack[-8..0)".parse().unwrap();
        assert_eq!(l.regs, [Reg::R0, Reg::R2].into_iter().collect());
        assert_eq!(l.stack.ranges(), vec![(-8, 0)]);
        assert_eq!(l.to_string().parse::<LiveOut>().unwrap(), l);
        assert_eq!("none".parse::<LiveOut>().unwrap(), LiveOut::regs(RegSet::EMPTY));
        assert!("r11".parse::<LiveOut>().is_err());
        assert!("stack[0..4)".parse::<LiveOut>().is_err());
    }

    #[test]
    fn non_stack_memory_is_live() {
        let l = LiveOut::regs(RegSet::EMPTY);
        assert!(l.mem_live(MemKey::new(Region::Ctx, 0)));
        assert!(!l.mem_live(MemKey::new(Region::Stack, -1)));
    }
}
