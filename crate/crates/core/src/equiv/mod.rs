// SPDX-License-Identifier: Apache-2.0

//! Equivalence checking of an original fragment against a candidate.
//!
//! Both programs are encoded over shared input variables. The query asks
//! for an input on which the original runs without trapping while the
//! candidate traps or disagrees on a live register or a live written byte.
//! UNSAT means the candidate is a valid replacement.

mod encode;
mod solver;
pub mod term;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rustc_hash::FxHashMap;
use thiserror::Error;

pub use encode::{ByteWrite, Cell, Encoder, ProgRun, RegInput, Role};
pub use solver::{Answer, SolverConfig};

use crate::isa::{Insn, Instruction, Reg};
use crate::machine::{interpret_with, Layout, LiveOut, MachineState, MemKey, RegTypeMap, Region};
use term::{Evaluator, Op2, T};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EquivError {
    #[error("solver unavailable: {0}")]
    SolverUnavailable(String),
    #[error("unsupported instruction: {0}")]
    EncodingUnsupported(String),
    #[error("original program is invalid: {0}")]
    InvalidProgram(String),
    #[error("bounded input space of {0} assignments is too large")]
    SpaceTooLarge(u128),
    #[error("counterexample did not replay: {0}")]
    ReplayFailed(String),
}

/// Inclusive unsigned bounds on an entry register.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RangeBound {
    pub reg: Reg,
    pub lo: u64,
    pub hi: u64,
}

#[derive(Clone, Debug)]
pub struct EquivQuery {
    pub original: Vec<Insn>,
    pub candidate: Vec<Insn>,
    pub live: LiveOut,
    pub entry: RegTypeMap,
    pub ranges: Vec<RangeBound>,
    pub layout: Layout,
}

impl EquivQuery {
    pub fn new(original: &[Instruction], candidate: &[Instruction], live: LiveOut, entry: RegTypeMap) -> EquivQuery {
        EquivQuery {
            original: original.iter().map(|i| i.insn).collect(),
            candidate: candidate.iter().map(|i| i.insn).collect(),
            live,
            entry,
            ranges: Vec::new(),
            layout: Layout::default(),
        }
    }
}

/// An input on which the two programs observably differ.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CounterExample {
    pub input: MachineState,
    pub types: RegTypeMap,
    /// Human-readable description of the first differing output.
    pub mismatch: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Verdict {
    Equivalent,
    /// No counterexample within a bounded input space.
    BoundedEquivalent,
    NotEquivalent(Box<CounterExample>),
    Unknown(String),
}

impl Verdict {
    pub fn is_equivalent(&self) -> bool {
        matches!(self, Verdict::Equivalent)
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Equivalent => f.write_str("equivalent"),
            Verdict::BoundedEquivalent => f.write_str("equivalent within bounds"),
            Verdict::NotEquivalent(c) => write!(f, "not equivalent: {}", c.mismatch),
            Verdict::Unknown(r) => write!(f, "unknown: {}", r),
        }
    }
}

struct Built {
    enc: Encoder,
    formula: T,
    /// Pointer-versus-scalar disagreement on a live stack byte; invisible to
    /// the interpreter, so it is reported without a value mismatch.
    taint_mismatch: Option<MemKey>,
}

fn build(q: &EquivQuery) -> Result<Built, EquivError> {
    for i in q.original.iter().chain(&q.candidate) {
        i.validate().map_err(|e| EquivError::EncodingUnsupported(format!("{}: {}", i, e)))?;
    }
    let mut enc = Encoder::new(&q.entry, q.layout);
    for b in &q.ranges {
        if let RegInput::Scalar(t) = enc.inputs[b.reg.index()] {
            let lo = enc.s.konst(b.lo, 64);
            let hi = enc.s.konst(b.hi, 64);
            let x = enc.s.bin(Op2::Ule, lo, t);
            let y = enc.s.bin(Op2::Ule, t, hi);
            enc.pre.extend([x, y]);
        }
    }
    let p = enc.run(&q.original, Role::Original);
    if let Some((pc, kind)) = p.static_fault {
        return Err(EquivError::InvalidProgram(format!("insn {} always traps: {}", pc, kind)));
    }
    let ok = enc.s.not(p.fault);
    enc.pre.push(ok);
    let c = enc.run(&q.candidate, Role::Candidate);
    let mut diffs = vec![c.fault];
    let mut taint_mismatch = None;
    if c.static_fault.is_none() {
        for r in q.live.regs.iter() {
            let i = r.index();
            match (p.regs[i], c.regs[i]) {
                (None, None) => {}
                (Some(a), Some(b)) if p.shadow[i] == c.shadow[i] => diffs.push(enc.s.ne(a, b)),
                _ => diffs.push(enc.s.tru()),
            }
        }
        let mut seen = BTreeSet::new();
        let positions: Vec<ByteWrite> =
            p.writes.iter().chain(&c.writes).filter(|w| seen.insert((w.region, w.off))).copied().collect();
        let last_ptr = |writes: &[ByteWrite], k: i64| {
            writes.iter().rev().find(|w| w.region == Region::Stack && w.key == Some(k)).is_some_and(|w| w.ptr)
        };
        for w in positions {
            if let (Region::Stack, Some(k)) = (w.region, w.key) {
                if !q.live.stack.contains(k) {
                    continue;
                }
                if last_ptr(&p.writes, k) != last_ptr(&c.writes, k) && taint_mismatch.is_none() {
                    taint_mismatch = Some(MemKey::new(Region::Stack, k));
                    diffs.push(enc.s.tru());
                }
            }
            let a = enc.final_byte(&p.writes, w.region, w.off);
            let b = enc.final_byte(&c.writes, w.region, w.off);
            diffs.push(enc.s.ne(a, b));
        }
    }
    let alias = enc.aliasing_constraints();
    enc.pre.extend(alias);
    let pre = enc.pre.clone();
    let pre = enc.s.and_all(pre);
    let mismatch = enc.s.or_all(diffs);
    let formula = enc.s.and(pre, mismatch);
    Ok(Built { enc, formula, taint_mismatch })
}

/// Input state described by a variable assignment.
fn decode(enc: &Encoder, assign: &[u64]) -> MachineState {
    let mut st = MachineState::default();
    let var = |t: T| assign[enc.s.var_id(t).expect("input is a variable") as usize];
    for r in Reg::all() {
        match enc.inputs[r.index()] {
            RegInput::Uninit => {}
            RegInput::Scalar(t) => st.set_reg(r, var(t)),
            RegInput::Ptr(_, v) => st.set_reg(r, v),
            RegInput::VarPtr(region, t) => st.set_reg(r, region.base().wrapping_add(var(t))),
        }
    }
    let offs: Vec<T> = enc.cells.iter().map(|c| c.off).collect();
    let mut ev = Evaluator::new(&enc.s, &offs);
    ev.run(assign);
    for c in &enc.cells {
        let off = ev.value(c.off) as i64;
        st.set_byte(MemKey::new(c.region, off), var(c.val) as u8);
    }
    st
}

/// Runs both programs on `input` and describes the first observable
/// difference, if any.
pub fn find_mismatch(
    original: &[Insn],
    candidate: &[Insn],
    live: &LiveOut,
    types: &RegTypeMap,
    layout: &Layout,
    input: &MachineState,
) -> Result<Option<String>, String> {
    let wrap = |v: &[Insn]| v.iter().map(|i| Instruction::new(*i)).collect::<Vec<_>>();
    let (ps, psh) = interpret_with(&wrap(original), input, types, layout).map_err(|f| format!("original: {}", f))?;
    let (cs, csh) = match interpret_with(&wrap(candidate), input, types, layout) {
        Ok(x) => x,
        Err(f) => return Ok(Some(format!("candidate traps: {}", f))),
    };
    for r in live.regs.iter() {
        if ps.reg(r) != cs.reg(r) {
            return Ok(Some(format!("{}: {} vs {}", r, show(ps.reg(r)), show(cs.reg(r)))));
        }
        if ps.reg(r).is_some() && psh[r.index()] != csh[r.index()] {
            return Ok(Some(format!("{}: type {:?} vs {:?}", r, psh[r.index()], csh[r.index()])));
        }
    }
    let keys: BTreeSet<MemKey> = ps.mem.keys().chain(cs.mem.keys()).copied().collect();
    for k in keys {
        if live.mem_live(k) && ps.byte(k) != cs.byte(k) {
            return Ok(Some(format!("byte {}: {} vs {}", k, show(ps.byte(k)), show(cs.byte(k)))));
        }
    }
    Ok(None)
}

fn show<V: fmt::LowerHex>(v: Option<V>) -> String {
    match v {
        Some(v) => format!("{:#x}", v),
        None => "uninit".into(),
    }
}

fn counterexample(q: &EquivQuery, b: &Built, assign: &[u64]) -> Result<CounterExample, EquivError> {
    let input = decode(&b.enc, assign);
    let mismatch = find_mismatch(&q.original, &q.candidate, &q.live, &q.entry, &q.layout, &input)
        .map_err(EquivError::ReplayFailed)?;
    let mismatch = match (mismatch, b.taint_mismatch) {
        (Some(m), _) => m,
        (None, Some(k)) => format!("byte {}: pointer spill versus scalar store", k),
        (None, None) => return Err(EquivError::ReplayFailed("no observable difference".into())),
    };
    Ok(CounterExample { input, types: q.entry, mismatch })
}

/// Decides equivalence with an external solver.
pub fn check_equiv(q: &EquivQuery, solver: &SolverConfig) -> Result<Verdict, EquivError> {
    let b = build(q)?;
    if b.enc.s.is_false(b.formula) {
        return Ok(Verdict::Equivalent);
    }
    let script = b.enc.s.to_smtlib(&[b.formula], Some(solver.timeout.as_millis() as u64));
    match solver::run(solver, &script)? {
        Answer::Unsat => Ok(Verdict::Equivalent),
        Answer::Unknown(r) => Ok(Verdict::Unknown(r)),
        Answer::Sat(values) => {
            let ids: FxHashMap<&str, usize> =
                b.enc.s.vars().iter().enumerate().map(|(i, v)| (v.name.as_str(), i)).collect();
            let mut assign = vec![0u64; b.enc.s.vars().len()];
            for (name, v) in values {
                if let Some(i) = ids.get(name.as_str()) {
                    assign[*i] = v;
                }
            }
            Ok(Verdict::NotEquivalent(Box::new(counterexample(q, &b, &assign)?)))
        }
    }
}

/// Largest input space `bounded_check` enumerates.
pub const BOUNDED_LIMIT: u128 = 1 << 24;

/// Solver-free refutation: enumerates every input whose variables hold
/// values below `2^bits`, in ascending order with the first variable
/// varying fastest.
pub fn bounded_check(q: &EquivQuery, bits: u32) -> Result<Verdict, EquivError> {
    let b = build(q)?;
    let order = b.enc.s.reachable(&[b.formula]);
    let vars: Vec<(usize, u8)> =
        order.iter().filter_map(|t| b.enc.s.var_id(*t).map(|i| (i as usize, b.enc.s.width(*t)))).collect();
    let mut space: u128 = 1;
    let limits: Vec<u128> = vars.iter().map(|(_, w)| 1u128 << bits.min(*w as u32).min(64)).collect();
    for l in &limits {
        space = space.saturating_mul(*l);
    }
    if space > BOUNDED_LIMIT {
        return Err(EquivError::SpaceTooLarge(space));
    }
    let mut assign = vec![0u64; b.enc.s.vars().len()];
    let mut ev = Evaluator::new(&b.enc.s, &[b.formula]);
    for _ in 0..space {
        ev.run(&assign);
        if ev.value(b.formula) == 1 {
            return Ok(Verdict::NotEquivalent(Box::new(counterexample(q, &b, &assign)?)));
        }
        for (k, (i, _)) in vars.iter().enumerate() {
            assign[*i] += 1;
            if (assign[*i] as u128) < limits[k] {
                break;
            }
            assign[*i] = 0;
        }
    }
    Ok(Verdict::BoundedEquivalent)
}

/// Result of evaluating a program's symbolic encoding on a concrete input.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Evaluated {
    Trap,
    /// Input read a byte missing from the state.
    MissingInput(MemKey),
    Done {
        regs: [Option<u64>; Reg::COUNT],
        mem: BTreeMap<MemKey, u8>,
    },
}

/// A single program's encoding, for checking the encoder against the
/// interpreter.
pub struct SymbolicProgram {
    enc: Encoder,
    run: ProgRun,
}

impl SymbolicProgram {
    pub fn new(insns: &[Insn], entry: &RegTypeMap, layout: Layout) -> Result<SymbolicProgram, EquivError> {
        for i in insns {
            i.validate().map_err(|e| EquivError::EncodingUnsupported(format!("{}: {}", i, e)))?;
        }
        let mut enc = Encoder::new(entry, layout);
        let run = enc.run(insns, Role::Standalone);
        Ok(SymbolicProgram { enc, run })
    }

    /// Variable assignment pinning the inputs to `input`, resolving
    /// symbolic input offsets in creation order.
    fn assignment(&self, input: &MachineState) -> Result<Vec<u64>, MemKey> {
        let mut assign = vec![0u64; self.enc.s.vars().len()];
        let id = |t: T| self.enc.s.var_id(t).expect("input is a variable") as usize;
        for r in Reg::all() {
            match self.enc.inputs[r.index()] {
                RegInput::Scalar(t) => assign[id(t)] = input.reg(r).unwrap_or(0),
                RegInput::VarPtr(region, t) => {
                    assign[id(t)] = input.reg(r).unwrap_or(region.base()).wrapping_sub(region.base())
                }
                _ => {}
            }
        }
        for c in &self.enc.cells {
            let mut ev = Evaluator::new(&self.enc.s, &[c.off]);
            ev.run(&assign);
            let k = MemKey::new(c.region, ev.value(c.off) as i64);
            assign[id(c.val)] = input.byte(k).ok_or(k)? as u64;
        }
        Ok(assign)
    }

    pub fn evaluate(&self, input: &MachineState) -> Evaluated {
        let assign = match self.assignment(input) {
            Ok(a) => a,
            Err(k) => return Evaluated::MissingInput(k),
        };
        let mut roots: Vec<T> = vec![self.run.fault];
        roots.extend(self.run.regs.iter().flatten());
        roots.extend(self.run.writes.iter().flat_map(|w| [w.off, w.val]));
        let mut ev = Evaluator::new(&self.enc.s, &roots);
        ev.run(&assign);
        if ev.value(self.run.fault) == 1 {
            return Evaluated::Trap;
        }
        let mut regs = [None; Reg::COUNT];
        for (i, r) in self.run.regs.iter().enumerate() {
            regs[i] = r.map(|t| ev.value(t));
        }
        let mut mem = input.mem.clone();
        for w in &self.run.writes {
            mem.insert(MemKey::new(w.region, ev.value(w.off) as i64), ev.value(w.val) as u8);
        }
        Evaluated::Done { regs, mem }
    }

    /// SMT-LIB script pinning inputs to `input` and asserting that the
    /// outputs equal (`equal`) or differ from (`!equal`) `expected` on all
    /// initialized registers and every byte of `expected.mem`.
    pub fn pinned_script(&mut self, input: &MachineState, expected: &MachineState, equal: bool) -> Option<String> {
        let mut outs = Vec::new();
        for r in Reg::all() {
            let s = &mut self.enc.s;
            match (self.run.regs[r.index()], expected.reg(r)) {
                (Some(t), Some(v)) => {
                    let k = s.konst(v, 64);
                    outs.push(s.eq(t, k));
                }
                (None, None) => {}
                _ => outs.push(s.fls()),
            }
        }
        let writes = self.run.writes.clone();
        for (k, v) in &expected.mem {
            let off = self.enc.s.konst(k.off as u64, 64);
            let cur = self.enc.final_byte(&writes, k.region, off);
            let want = self.enc.s.konst(*v as u64, 8);
            outs.push(self.enc.s.eq(cur, want));
        }
        // input cells created above must be pinned as well
        let assign = self.assignment(input).ok()?;
        let s = &mut self.enc.s;
        let all = s.and_all(outs);
        let target = if equal { all } else { s.not(all) };
        let mut pins = Vec::new();
        for (i, v) in assign.iter().enumerate() {
            let t = s.var_term(i as u32);
            let k = s.konst(*v, s.width(t));
            pins.push(s.eq(t, k));
        }
        let nf = s.not(self.run.fault);
        pins.push(nf);
        let pin = s.and_all(pins);
        let f = s.and(pin, target);
        Some(s.to_smtlib(&[f], Some(10_000)))
    }

    pub fn run_solver(script: &str, solver: &SolverConfig) -> Result<Answer, EquivError> {
        solver::run(solver, script)
    }
}

#[cfg(test)]
mod tests;
