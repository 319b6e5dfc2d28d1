// SPDX-License-Identifier: Apache-2.0

use std::hash::{Hash, Hasher};
use std::time::{Duration, Instant};

use rustc_hash::{FxHashMap, FxHashSet, FxHasher};
use serde::Serialize;

use super::cost::{Cost, CostModel};
use super::testcase::{implicit_byte, Testcase};
use super::SynthError;
use crate::isa::{AluOp, Insn, Reg, RegSet, Source, Width};
use crate::machine::{ExecState, Layout, LiveOut, MemKey, RegTypeMap, Region};

/// Which pruning strategies are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct PruneConfig {
    pub distance: bool,
    pub memo: bool,
    pub redundant_def: bool,
}

impl Default for PruneConfig {
    fn default() -> Self {
        PruneConfig { distance: true, memo: true, redundant_def: true }
    }
}

impl PruneConfig {
    pub fn none() -> PruneConfig {
        PruneConfig { distance: false, memo: false, redundant_def: false }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SearchBudget {
    /// Candidates must cost strictly less than this.
    pub max_cost: Cost,
    pub max_depth: usize,
    pub timeout: Duration,
    /// Immediates to try; `None` derives the pool from the slice.
    pub imm_pool: Option<Vec<i32>>,
    pub allow_div: bool,
    pub prune: PruneConfig,
    /// Stop after executing this many candidate prefixes.
    pub node_limit: Option<u64>,
}

impl SearchBudget {
    pub fn new(max_cost: Cost, max_depth: usize) -> SearchBudget {
        SearchBudget {
            max_cost,
            max_depth,
            timeout: Duration::from_secs(600),
            imm_pool: None,
            allow_div: false,
            prune: PruneConfig::default(),
            node_limit: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SearchStats {
    /// Prefixes that survived every pruning check.
    pub nodes_expanded: u64,
    pub pruned_distance: u64,
    pub pruned_memo: u64,
    pub pruned_redundant_def: u64,
    /// Candidates that matched every test but were turned down by the caller.
    pub candidates_rejected: u64,
    /// Wall time; left out of serialized reports so they stay reproducible.
    #[serde(skip)]
    pub elapsed: Duration,
}

impl SearchStats {
    pub fn merge(&mut self, o: &SearchStats) {
        self.nodes_expanded += o.nodes_expanded;
        self.pruned_distance += o.pruned_distance;
        self.pruned_memo += o.pruned_memo;
        self.pruned_redundant_def += o.pruned_redundant_def;
        self.candidates_rejected += o.candidates_rejected;
        self.elapsed += o.elapsed;
    }
}

/// Caller's verdict on a candidate that passed every test.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decision {
    Accept,
    /// Keep searching.
    Skip,
    /// Stop; the caller changed the problem (e.g. added a test).
    Abort,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SynthOutcome {
    Found(Vec<Insn>),
    NoneFound,
    Timeout,
    Aborted,
}

/// The fragment to replace and what of it is observable.
#[derive(Clone, Debug)]
pub struct SynthProblem<'a> {
    pub insns: &'a [Insn],
    pub live: LiveOut,
    pub entry: RegTypeMap,
    pub layout: Layout,
}

/// Registers in order of first appearance, `src` operand before `dst`.
pub fn alphabet_regs(insns: &[Insn]) -> Vec<Reg> {
    let mut out: Vec<Reg> = Vec::new();
    for i in insns {
        for r in i.operand_regs() {
            if !out.contains(&r) {
                out.push(r);
            }
        }
    }
    out
}

/// Default immediate pool: slice immediates plus a few small constants.
pub fn default_imm_pool(insns: &[Insn]) -> Vec<i32> {
    let mut pool: Vec<i32> = insns.iter().filter_map(|i| i.imm()).collect();
    for k in [0, 1, -1, 2, 4, 8, 16, 32] {
        pool.push(k);
    }
    let mut seen = FxHashSet::default();
    pool.retain(|k| seen.insert(*k));
    pool
}

fn mem_base(i: &Insn) -> Option<Reg> {
    match *i {
        Insn::Load { base, .. } | Insn::Store { base, .. } => Some(base),
        Insn::Alu { .. } => None,
    }
}

fn offset_pools(insns: &[Insn], entry: &RegTypeMap, regs: &[Reg]) -> Vec<Vec<i16>> {
    let mut global: Vec<i16> = insns.iter().filter(|i| i.is_mem()).map(|i| i.offset()).collect();
    global.push(0);
    global.sort();
    global.dedup();
    let redefined: RegSet = insns.iter().filter_map(|i| i.def()).collect();
    regs.iter()
        .map(|r| {
            if entry.get(*r).is_ptr() && !redefined.contains(*r) {
                let mut own: Vec<i16> = insns.iter().filter(|i| mem_base(i) == Some(*r)).map(|i| i.offset()).collect();
                own.sort();
                own.dedup();
                own
            } else {
                global.clone()
            }
        })
        .collect()
}

fn useless(i: &Insn) -> bool {
    match *i {
        Insn::Alu { wide: true, op, dst, src: Source::Reg(s) } if s == dst => {
            matches!(op, AluOp::Mov | AluOp::Sub | AluOp::Xor | AluOp::And | AluOp::Or)
        }
        Insn::Alu { wide: true, op, src: Source::Imm(k), .. } => match op {
            AluOp::Add | AluOp::Sub | AluOp::Or | AluOp::Xor | AluOp::Lsh | AluOp::Rsh | AluOp::Arsh => k == 0,
            AluOp::Mul => k == 0 || k == 1,
            AluOp::And => k == -1,
            _ => false,
        },
        Insn::Alu { op: AluOp::Div | AluOp::Mod, src: Source::Imm(0), .. } => true,
        _ => false,
    }
}

/// Candidate instructions in enumeration order: ALU64 then ALU32 grouped
/// by opcode, then loads, register stores and immediate stores.
pub fn alphabet(insns: &[Insn], entry: &RegTypeMap, imm_pool: &[i32], allow_div: bool) -> Vec<Insn> {
    let regs = alphabet_regs(insns);
    let writable: Vec<Reg> = regs.iter().copied().filter(|r| *r != Reg::FP).collect();
    let pools = offset_pools(insns, entry, &regs);
    let mut out = Vec::new();
    let ops = AluOp::ALL.iter().copied().filter(|op| allow_div || !matches!(op, AluOp::Div | AluOp::Mod));
    for wide in [true, false] {
        for op in ops.clone() {
            for &dst in &writable {
                if op == AluOp::Neg {
                    out.push(Insn::Alu { wide, op, dst, src: Source::Imm(0) });
                    continue;
                }
                let srcs = regs.iter().map(|r| Source::Reg(*r)).chain(imm_pool.iter().map(|k| Source::Imm(*k)));
                for src in srcs {
                    let i = Insn::Alu { wide, op, dst, src };
                    if i.validate().is_ok() && !useless(&i) {
                        out.push(i);
                    }
                }
            }
        }
    }
    for width in Width::ALL {
        for &dst in &writable {
            for (bi, &base) in regs.iter().enumerate() {
                for &off in &pools[bi] {
                    out.push(Insn::Load { width, dst, base, off });
                }
            }
        }
    }
    for width in Width::ALL {
        for (bi, &base) in regs.iter().enumerate() {
            for &off in &pools[bi] {
                for &src in &regs {
                    out.push(Insn::Store { width, base, off, src: Source::Reg(src) });
                }
            }
        }
    }
    for width in Width::ALL {
        for (bi, &base) in regs.iter().enumerate() {
            for &off in &pools[bi] {
                for &k in imm_pool {
                    out.push(Insn::Store { width, base, off, src: Source::Imm(k) });
                }
            }
        }
    }
    out
}

/// Unused definitions along the current path.
#[derive(Clone, Debug, Default)]
struct Pending {
    regs: RegSet,
    /// Unread stores: base register, its version when stored, byte span.
    stores: Vec<(Reg, u32, i64, i64)>,
    versions: [u32; Reg::COUNT],
}

impl Pending {
    /// Whether `i` overwrites a definition nothing has read.
    fn redundant(&self, i: &Insn) -> bool {
        let uses = i.uses();
        if let Some(d) = i.def() {
            if self.regs.contains(d) && !uses.contains(d) {
                return true;
            }
        }
        if let Insn::Store { base, off, width, .. } = *i {
            let (lo, hi) = (off as i64, off as i64 + width.bytes() as i64);
            let v = self.versions[base.index()];
            return self.stores.iter().any(|&(b, bv, l, h)| b == base && bv == v && lo <= l && h <= hi);
        }
        false
    }

    fn after(&self, i: &Insn) -> Pending {
        let mut p = self.clone();
        p.regs = p.regs.minus(i.uses());
        if i.is_load() {
            p.stores.clear();
        }
        if let Some(d) = i.def() {
            p.regs.insert(d);
            p.versions[d.index()] += 1;
            p.stores.retain(|s| s.0 != d);
        }
        if let Insn::Store { base, off, width, .. } = *i {
            let v = p.versions[base.index()];
            p.stores.push((base, v, off as i64, off as i64 + width.bytes() as i64));
        }
        p
    }

    fn hash_into(&self, h: &mut impl Hasher) {
        self.regs.bits().hash(h);
        for (b, _, l, hi) in &self.stores {
            (b.index(), l, hi).hash(h);
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct MemoEntry {
    remaining: usize,
    cost_left: Cost,
}

enum Stop {
    Found(Vec<Insn>),
    Aborted,
    Budget,
}

struct Searcher<'a, 'b> {
    alphabet: Vec<Insn>,
    costs: Vec<Cost>,
    min_cost: Cost,
    tests: &'a [Testcase],
    targets: Vec<ExecState>,
    layout: Layout,
    live: LiveOut,
    prune: PruneConfig,
    memo: FxHashMap<u128, MemoEntry>,
    offered: FxHashSet<Vec<Insn>>,
    stats: SearchStats,
    generated: u64,
    path: Vec<Insn>,
    path_cost: Cost,
    max_cost: Cost,
    deadline: Instant,
    node_limit: Option<u64>,
    scratch: Vec<Vec<ExecState>>,
    accept: &'b mut dyn FnMut(&[Insn]) -> Decision,
}

/// Byte value in a test before any write.
fn base_byte(t: &Testcase, k: MemKey) -> Option<u8> {
    t.input.mem.get(&k).copied().or_else(|| implicit_byte(t.seed, k))
}

/// Lower bound on the instructions needed to turn `cur` into `tgt` on the
/// live locations: differing registers plus an 8-byte window cover of
/// differing bytes per region. Zero iff the states agree.
pub fn state_distance(cur: &ExecState, tgt: &ExecState, t: &Testcase, live: &LiveOut) -> u32 {
    let mut d = 0;
    for r in live.regs.iter() {
        let i = r.index();
        if cur.reg(r) != tgt.reg(r) || cur.shadow[i] != tgt.shadow[i] {
            d += 1;
        }
    }
    let (a, b) = (&cur.writes, &tgt.writes);
    let (mut i, mut j) = (0, 0);
    let mut region: Option<Region> = None;
    let mut covered_to = i64::MIN;
    while i < a.len() || j < b.len() {
        let k = match (a.get(i), b.get(j)) {
            (Some(x), Some(y)) if x.0 == y.0 => {
                i += 1;
                j += 1;
                if x.1 == y.1 {
                    continue;
                }
                x.0
            }
            (Some(x), Some(y)) if x.0 < y.0 => {
                i += 1;
                if Some(x.1) == base_byte(t, x.0) {
                    continue;
                }
                x.0
            }
            (Some(x), None) => {
                i += 1;
                if Some(x.1) == base_byte(t, x.0) {
                    continue;
                }
                x.0
            }
            (_, Some(y)) => {
                j += 1;
                if Some(y.1) == base_byte(t, y.0) {
                    continue;
                }
                y.0
            }
            (None, None) => unreachable!(),
        };
        if !live.mem_live(k) {
            continue;
        }
        if region != Some(k.region) || k.off >= covered_to {
            region = Some(k.region);
            covered_to = k.off + 8;
            d += 1;
        }
    }
    d
}

impl<'a, 'b> Searcher<'a, 'b> {
    fn max_distance(&self, states: &[ExecState]) -> u32 {
        states
            .iter()
            .zip(&self.targets)
            .zip(self.tests)
            .map(|((s, g), t)| state_distance(s, g, t, &self.live))
            .max()
            .unwrap_or(0)
    }

    fn key(&self, states: &[ExecState], pend: &Pending) -> u128 {
        let mut h1 = FxHasher::default();
        let mut h2 = FxHasher::default();
        0x51u8.hash(&mut h2);
        for s in states {
            s.hash(&mut h1);
            s.hash(&mut h2);
        }
        pend.hash_into(&mut h1);
        pend.hash_into(&mut h2);
        ((h1.finish() as u128) << 64) | h2.finish() as u128
    }

    fn offer(&mut self) -> Result<bool, Stop> {
        if self.path_cost >= self.max_cost || self.offered.contains(&self.path) {
            return Ok(!self.offered.contains(&self.path));
        }
        match (self.accept)(&self.path) {
            Decision::Accept => Err(Stop::Found(self.path.clone())),
            Decision::Skip => {
                self.stats.candidates_rejected += 1;
                self.offered.insert(self.path.clone());
                Ok(false)
            }
            Decision::Abort => Err(Stop::Aborted),
        }
    }

    /// Explores extensions of the current path by at most `remaining`
    /// instructions. Returns whether the subtree failed for reasons that
    /// depend only on the reached state.
    fn dfs(&mut self, depth: usize, states: &[ExecState], pend: &Pending, remaining: usize) -> Result<bool, Stop> {
        if remaining == 0 {
            return Ok(true);
        }
        let mut clean = true;
        let mut buf = std::mem::take(&mut self.scratch[depth]);
        buf.resize(states.len(), states[0].clone());
        let cost_left = self.max_cost - self.path_cost;
        for idx in 0..self.alphabet.len() {
            let insn = self.alphabet[idx];
            let c = self.costs[idx];
            if c + self.min_cost * Cost::from_integer(remaining as u64 - 1) >= cost_left && c >= cost_left {
                continue;
            }
            if self.prune.redundant_def && pend.redundant(&insn) {
                self.stats.pruned_redundant_def += 1;
                continue;
            }
            if let Insn::Load { base, .. } | Insn::Store { base, .. } = insn {
                if !matches!(states[0].shadow[base.index()], crate::machine::Shadow::Ptr(_)) {
                    continue;
                }
            }
            let mut ok = true;
            for (t, (dst, src)) in buf.iter_mut().zip(states).enumerate() {
                dst.clone_from(src);
                let test = &self.tests[t];
                let mut fill = |k: MemKey| implicit_byte(test.seed, k);
                if dst.step(&insn, &test.input.mem, &self.layout, &mut fill).is_err() {
                    ok = false;
                    break;
                }
            }
            if !ok {
                continue;
            }
            self.generated += 1;
            if self.generated.is_multiple_of(1024) && Instant::now() >= self.deadline {
                self.scratch[depth] = buf;
                return Err(Stop::Budget);
            }
            if self.node_limit.is_some_and(|n| self.generated >= n) {
                self.scratch[depth] = buf;
                return Err(Stop::Budget);
            }
            let d = self.max_distance(&buf);
            if self.prune.distance && d as usize > remaining - 1 {
                self.stats.pruned_distance += 1;
                continue;
            }
            let npend = pend.after(&insn);
            self.path.push(insn);
            self.path_cost += c;
            let mut res = Ok(true);
            if d == 0 {
                res = self.offer();
            }
            let key = if self.prune.memo && remaining > 1 { Some(self.key(&buf, &npend)) } else { None };
            let left = self.max_cost - self.path_cost;
            let skip = key
                .and_then(|k| self.memo.get(&k))
                .is_some_and(|e| e.remaining >= remaining - 1 && e.cost_left >= left);
            if skip {
                self.stats.pruned_memo += 1;
            } else {
                self.stats.nodes_expanded += 1;
            }
            if !skip && matches!(res, Ok(true) | Ok(false)) {
                let sub = self.dfs(depth + 1, &buf, &npend, remaining - 1);
                res = match (res, sub) {
                    (Ok(a), Ok(b)) => Ok(a && b),
                    (_, Err(e)) => Err(e),
                    (Err(e), _) => Err(e),
                };
                if let (Ok(true), Some(k)) = (&res, key) {
                    let e = self.memo.entry(k).or_insert(MemoEntry { remaining: 0, cost_left: Cost::from_integer(0) });
                    if remaining > e.remaining && left >= e.cost_left {
                        *e = MemoEntry { remaining: remaining - 1, cost_left: left };
                    }
                }
            }
            self.path.pop();
            self.path_cost -= c;
            match res {
                Ok(sub_clean) => clean &= sub_clean,
                Err(e) => {
                    self.scratch[depth] = buf;
                    return Err(e);
                }
            }
        }
        self.scratch[depth] = buf;
        Ok(clean)
    }
}

/// Iterative-deepening search for a cheaper instruction sequence matching
/// every test on the live-out footprint. `accept` vets each match.
pub fn synthesize(
    problem: &SynthProblem<'_>,
    tests: &[Testcase],
    cost: &CostModel,
    budget: &SearchBudget,
    accept: &mut dyn FnMut(&[Insn]) -> Decision,
) -> Result<(SynthOutcome, SearchStats), SynthError> {
    let start = Instant::now();
    if tests.is_empty() {
        return Err(SynthError::NoTests);
    }
    let mut targets = Vec::with_capacity(tests.len());
    let mut inputs = Vec::with_capacity(tests.len());
    for t in tests {
        targets.push(t.run(problem.insns, &problem.entry, &problem.layout).map_err(SynthError::OriginalTraps)?);
        inputs.push(crate::machine::ExecState::new(&t.input, &problem.entry));
    }
    let pool = match &budget.imm_pool {
        Some(p) => p.clone(),
        None => default_imm_pool(problem.insns),
    };
    let alphabet = alphabet(problem.insns, &problem.entry, &pool, budget.allow_div);
    let costs = alphabet.iter().map(|i| cost.insn_cost(i)).collect::<Result<Vec<_>, _>>()?;
    let min_cost = costs.iter().copied().min().unwrap_or(Cost::from_integer(1));
    let mut s = Searcher {
        alphabet,
        costs,
        min_cost,
        tests,
        targets,
        layout: problem.layout,
        live: problem.live,
        prune: budget.prune,
        memo: FxHashMap::default(),
        offered: FxHashSet::default(),
        stats: SearchStats::default(),
        generated: 0,
        path: Vec::new(),
        path_cost: Cost::from_integer(0),
        max_cost: budget.max_cost,
        deadline: start + budget.timeout,
        node_limit: budget.node_limit,
        scratch: vec![Vec::new(); budget.max_depth + 1],
        accept,
    };
    let finish = |mut stats: SearchStats, o: SynthOutcome| {
        stats.elapsed = start.elapsed();
        Ok((o, stats))
    };
    let root_d = s.max_distance(&inputs);
    if root_d == 0 {
        match s.offer() {
            Err(Stop::Found(p)) => return finish(s.stats, SynthOutcome::Found(p)),
            Err(Stop::Aborted) => return finish(s.stats, SynthOutcome::Aborted),
            _ => {}
        }
    }
    for limit in 1..=budget.max_depth {
        if s.prune.distance && root_d as usize > limit {
            continue;
        }
        let pend = Pending::default();
        match s.dfs(0, &inputs, &pend, limit) {
            Ok(_) => {}
            Err(Stop::Found(p)) => return finish(s.stats, SynthOutcome::Found(p)),
            Err(Stop::Aborted) => return finish(s.stats, SynthOutcome::Aborted),
            Err(Stop::Budget) => return finish(s.stats, SynthOutcome::Timeout),
        }
    }
    finish(s.stats, SynthOutcome::NoneFound)
}
