// SPDX-License-Identifier: Apache-2.0

//! Concrete machine state and the reference interpreter.
//!
//! Pointers are concrete 64-bit values: every region has a fixed base
//! address, and a pointer register holds `base + offset`. The interpreter
//! additionally tracks a shadow type per register so that dereferencing a
//! scalar or reading an uninitialized byte traps instead of producing an
//! arbitrary value.

mod distance;
mod exec;
mod live;
mod snapshot;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::isa::{Reg, RegSet};

pub use distance::{distance, mem_cover, reg_distance, Footprint};
pub use exec::{alu_eval, interpret, interpret_with, ExecState, Fault, FaultKind, Shadow};
pub use live::{LiveOut, StackMask};
pub use snapshot::{format_snapshot, parse_snapshot, SnapshotError};

/// Stack size in bytes; valid stack offsets are `[-STACK_SIZE, 0)`.
pub const STACK_SIZE: i64 = 512;
/// Default extent of context and anonymous memory regions.
pub const DEFAULT_REGION_EXTENT: i64 = 4096;

/// A memory region a pointer may refer to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Stack,
    Ctx,
    /// Anonymous region, e.g. packet data or a map value.
    Mem(u8),
}

impl Region {
    /// Address held by a pointer at offset 0 into the region.
    pub fn base(self) -> u64 {
        match self {
            Region::Stack => 0x1000_0000_0000,
            Region::Ctx => 0x2000_0000_0000,
            Region::Mem(n) => 0x3000_0000_0000 + ((n as u64) << 32),
        }
    }

    pub fn name(self) -> String {
        match self {
            Region::Stack => "stack".into(),
            Region::Ctx => "ctx".into(),
            Region::Mem(n) => format!("mem{}", n),
        }
    }

    pub fn from_name(s: &str) -> Option<Region> {
        match s {
            "stack" => Some(Region::Stack),
            "ctx" => Some(Region::Ctx),
            _ => s.strip_prefix("mem").and_then(|n| n.parse().ok()).map(Region::Mem),
        }
    }

    /// Kind without the anonymous-region index, used when matching rules.
    pub fn kind(self) -> Region {
        match self {
            Region::Mem(_) => Region::Mem(0),
            r => r,
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// Valid offset ranges per region.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub ctx_extent: i64,
    pub mem_extent: i64,
}

impl Default for Layout {
    fn default() -> Self {
        Layout { ctx_extent: DEFAULT_REGION_EXTENT, mem_extent: DEFAULT_REGION_EXTENT }
    }
}

impl Layout {
    /// Half-open range of valid byte offsets.
    pub fn bounds(&self, r: Region) -> (i64, i64) {
        match r {
            Region::Stack => (-STACK_SIZE, 0),
            Region::Ctx => (0, self.ctx_extent),
            Region::Mem(_) => (0, self.mem_extent),
        }
    }

    pub fn in_bounds(&self, r: Region, off: i64, len: i64) -> bool {
        let (lo, hi) = self.bounds(r);
        off >= lo && off.checked_add(len).is_some_and(|e| e <= hi)
    }
}

/// One byte of memory, addressed by region and signed offset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MemKey {
    pub region: Region,
    pub off: i64,
}

impl MemKey {
    pub fn new(region: Region, off: i64) -> MemKey {
        MemKey { region, off }
    }

    pub fn addr(self) -> u64 {
        self.region.base().wrapping_add(self.off as u64)
    }
}

impl fmt::Display for MemKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}]", self.region, self.off)
    }
}

/// Abstract register type at a program point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "type")]
pub enum RegType {
    Uninit,
    Scalar,
    /// Pointer into `region`; `off` is the constant offset from the region
    /// base, or `None` when the offset is variable.
    Ptr {
        region: Region,
        off: Option<i32>,
    },
}

impl RegType {
    pub const STACK: RegType = RegType::Ptr { region: Region::Stack, off: Some(0) };
    pub const CTX: RegType = RegType::Ptr { region: Region::Ctx, off: Some(0) };

    pub fn mem(n: u8) -> RegType {
        RegType::Ptr { region: Region::Mem(n), off: Some(0) }
    }

    pub fn is_init(self) -> bool {
        self != RegType::Uninit
    }

    pub fn region(self) -> Option<Region> {
        match self {
            RegType::Ptr { region, .. } => Some(region),
            _ => None,
        }
    }

    pub fn is_ptr(self) -> bool {
        matches!(self, RegType::Ptr { .. })
    }

    /// Concrete value a fresh input register of this type holds, for pointers.
    pub fn pointer_value(self) -> Option<u64> {
        match self {
            RegType::Ptr { region, off } => Some(region.base().wrapping_add(off.unwrap_or(0) as i64 as u64)),
            _ => None,
        }
    }

    /// Least upper bound at control-flow joins.
    pub fn join(self, other: RegType) -> RegType {
        if self == other {
            return self;
        }
        match (self, other) {
            (RegType::Ptr { region: a, .. }, RegType::Ptr { region: b, .. }) if a == b => {
                RegType::Ptr { region: a, off: None }
            }
            (RegType::Uninit, _) | (_, RegType::Uninit) => RegType::Uninit,
            _ => RegType::Scalar,
        }
    }
}

impl fmt::Display for RegType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            RegType::Uninit => f.write_str("uninit"),
            RegType::Scalar => f.write_str("scalar"),
            RegType::Ptr { region, off: Some(0) } => write!(f, "{}", region),
            RegType::Ptr { region, off: Some(o) } if o < 0 => write!(f, "{}{}", region, o),
            RegType::Ptr { region, off: Some(o) } => write!(f, "{}+{}", region, o),
            RegType::Ptr { region, off: None } => write!(f, "{}+var", region),
        }
    }
}

impl std::str::FromStr for RegType {
    type Err = String;

    /// Parses the `Display` form: `scalar`, `uninit`, `ctx`, `stack-16`,
    /// `mem1+4`, `ctx+var`.
    fn from_str(s: &str) -> Result<RegType, String> {
        let s = s.trim();
        match s {
            "scalar" => return Ok(RegType::Scalar),
            "uninit" => return Ok(RegType::Uninit),
            _ => {}
        }
        let split = s.find(['+', '-']).unwrap_or(s.len());
        let region = Region::from_name(&s[..split]).ok_or_else(|| format!("unknown type `{}`", s))?;
        let rest = &s[split..];
        let off = match rest {
            "" => Some(0),
            "+var" => None,
            _ => Some(rest.trim_start_matches('+').parse::<i32>().map_err(|_| format!("bad offset in `{}`", s))?),
        };
        Ok(RegType::Ptr { region, off })
    }
}

/// Register types at a program point. `r10` is always a stack pointer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RegTypeMap([RegType; Reg::COUNT]);

impl Default for RegTypeMap {
    fn default() -> Self {
        let mut t = [RegType::Uninit; Reg::COUNT];
        t[10] = RegType::STACK;
        RegTypeMap(t)
    }
}

impl RegTypeMap {
    /// Program entry: `r1` holds the context pointer.
    pub fn program_entry() -> RegTypeMap {
        let mut m = RegTypeMap::default();
        m.set(Reg::R1, RegType::CTX);
        m
    }

    /// Everything but `r10` initialized as scalar.
    pub fn all_scalar() -> RegTypeMap {
        let mut m = RegTypeMap::default();
        for r in Reg::all().filter(|r| *r != Reg::FP) {
            m.set(r, RegType::Scalar);
        }
        m
    }

    pub fn get(&self, r: Reg) -> RegType {
        self.0[r.index()]
    }

    pub fn set(&mut self, r: Reg, t: RegType) {
        if r != Reg::FP {
            self.0[r.index()] = t;
        }
    }

    pub fn with(mut self, r: Reg, t: RegType) -> RegTypeMap {
        self.set(r, t);
        self
    }

    pub fn initialized(&self) -> RegSet {
        Reg::all().filter(|r| self.get(*r).is_init()).collect()
    }

    pub fn join(&self, other: &RegTypeMap) -> RegTypeMap {
        let mut out = *self;
        for r in Reg::all() {
            out.set(r, self.get(r).join(other.get(r)));
        }
        out
    }

    pub fn iter(&self) -> impl Iterator<Item = (Reg, RegType)> + '_ {
        Reg::all().map(move |r| (r, self.get(r)))
    }
}

impl fmt::Display for RegTypeMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> =
            self.iter().filter(|(r, t)| t.is_init() && *r != Reg::FP).map(|(r, t)| format!("{}={}", r, t)).collect();
        f.write_str(&parts.join(","))
    }
}

/// Register file plus byte-addressed memory. A byte present in `mem` is
/// initialized; an absent byte is not.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct MachineState {
    pub regs: [u64; Reg::COUNT],
    pub init: RegSet,
    pub mem: BTreeMap<MemKey, u8>,
}

impl MachineState {
    /// A state whose pointer registers hold their region addresses and whose
    /// scalar registers are zero.
    pub fn for_types(types: &RegTypeMap) -> MachineState {
        let mut s = MachineState::default();
        for (r, t) in types.iter() {
            if t.is_init() {
                s.set_reg(r, t.pointer_value().unwrap_or(0));
            }
        }
        s
    }

    pub fn reg(&self, r: Reg) -> Option<u64> {
        self.init.contains(r).then(|| self.regs[r.index()])
    }

    pub fn set_reg(&mut self, r: Reg, v: u64) {
        self.regs[r.index()] = v;
        self.init.insert(r);
    }

    pub fn byte(&self, k: MemKey) -> Option<u8> {
        self.mem.get(&k).copied()
    }

    pub fn set_byte(&mut self, k: MemKey, v: u8) {
        self.mem.insert(k, v);
    }

    /// Writes `len` little-endian bytes of `v` starting at `region[off]`.
    pub fn write_le(&mut self, region: Region, off: i64, len: u8, v: u64) {
        for i in 0..len as i64 {
            self.set_byte(MemKey::new(region, off + i), (v >> (8 * i)) as u8);
        }
    }

    /// Reads `len` little-endian bytes, or `None` if any is uninitialized.
    pub fn read_le(&self, region: Region, off: i64, len: u8) -> Option<u64> {
        let mut v = 0u64;
        for i in 0..len as i64 {
            v |= (self.byte(MemKey::new(region, off + i))? as u64) << (8 * i);
        }
        Some(v)
    }
}
