// SPDX-License-Identifier: Apache-2.0

use std::hash::{Hash, Hasher};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustc_hash::FxHasher;
use serde::Serialize;

use super::cegis::{cegis_optimize_slice, CegisStats, SliceOutcome};
use super::report::{BlockReport, OptimizationReport, SliceReport};
use super::{DriverError, Mode, PipelineConfig};
use crate::equiv::{check_equiv, EquivQuery, Verdict};
use crate::isa::{Insn, Instruction, Program, Stmt};
use crate::machine::{Layout, LiveOut, RegTypeMap, StackMask};
use crate::rules::{abstract_rule, match_and_apply, MatchOutcome, RewriteRule, RuleStore};
use crate::slicer::{block_entry_types, block_live_regs, extract_slices, recompose, Slice};
use crate::synth::{default_latency_table, generate_tests, state_distance, CostMode, CostModel, Testcase};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Rule,
    Synthesis,
}

/// What happened to one slice before recomposition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SliceResult {
    pub replacement: Option<(Vec<Insn>, Source)>,
    pub rule: Option<usize>,
    pub mined: Option<RewriteRule>,
    pub note: Option<String>,
    pub stats: CegisStats,
}

impl SliceResult {
    fn unchanged(note: impl Into<String>, stats: CegisStats) -> SliceResult {
        SliceResult { replacement: None, rule: None, mined: None, note: Some(note.into()), stats }
    }
}

/// The output program, its report and the rules mined along the way.
#[derive(Clone, Debug)]
pub struct Optimized {
    pub program: Program,
    pub report: OptimizationReport,
    pub mined: RuleStore,
}

fn latency_model(cfg: &PipelineConfig) -> CostModel {
    match cfg.cost.mode {
        CostMode::Latency => cfg.cost.clone(),
        CostMode::Size => CostModel::latency(default_latency_table()),
    }
}

fn synthesize_slice(slice: &Slice, cfg: &PipelineConfig, origin: &str) -> SliceResult {
    match cegis_optimize_slice(slice, cfg) {
        Ok((SliceOutcome::Optimized(p), stats)) => {
            let mined =
                abstract_rule(&slice.plain_insns(), &p, &slice.live, &slice.entry, &latency_model(cfg), origin).ok();
            SliceResult { replacement: Some((p, Source::Synthesis)), rule: None, mined, note: None, stats }
        }
        Ok((SliceOutcome::Unchanged(why), stats)) => SliceResult::unchanged(why, stats),
        Err(e) => SliceResult::unchanged(e.to_string(), CegisStats::default()),
    }
}

/// Optimizes one slice according to the configured mode.
pub fn optimize_slice(slice: &Slice, cfg: &PipelineConfig, rules: &RuleStore, origin: &str) -> SliceResult {
    if matches!(cfg.mode, Mode::Online | Mode::Hybrid) {
        match match_and_apply(slice, rules, &cfg.cost, &cfg.solver) {
            Ok(MatchOutcome::Applied { rule, insns }) => {
                return SliceResult {
                    replacement: Some((insns, Source::Rule)),
                    rule: Some(rule),
                    mined: None,
                    note: None,
                    stats: CegisStats::default(),
                }
            }
            Ok(MatchOutcome::NoMatch) if cfg.mode == Mode::Online => {
                return SliceResult::unchanged("no rule matches", CegisStats::default())
            }
            Err(e) if cfg.mode == Mode::Online => return SliceResult::unchanged(e.to_string(), CegisStats::default()),
            _ => {}
        }
    }
    synthesize_slice(slice, cfg, origin)
}

fn hash_of(x: impl Hash) -> u64 {
    let mut h = FxHasher::default();
    x.hash(&mut h);
    h.finish()
}

/// Random-state differential check of a rewritten block against its input.
struct Guard<'a> {
    orig: Vec<Insn>,
    entry: &'a RegTypeMap,
    live: LiveOut,
    tests: Vec<Testcase>,
    layout: Layout,
}

impl<'a> Guard<'a> {
    fn new(orig: &[Instruction], entry: &'a RegTypeMap, live: LiveOut, cfg: &PipelineConfig) -> Guard<'a> {
        let orig: Vec<Insn> = orig.iter().map(|i| i.insn).collect();
        let layout = Layout::default();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ hash_of((&orig, live, entry)));
        let tests = generate_tests(&orig, entry, &layout, cfg.guard_states, &mut rng);
        Guard { orig, entry, live, tests, layout }
    }

    fn passes(&self, cand: &[Instruction]) -> bool {
        let cand: Vec<Insn> = cand.iter().map(|i| i.insn).collect();
        self.tests.iter().all(|t| {
            let Ok(want) = t.run(&self.orig, self.entry, &self.layout) else { return true };
            match t.run(&cand, self.entry, &self.layout) {
                Ok(got) => state_distance(&got, &want, t, &self.live) == 0,
                Err(_) => false,
            }
        })
    }
}

fn cost_of(cfg: &PipelineConfig, insns: &[Instruction]) -> Option<crate::synth::Cost> {
    cfg.cost.cost_of(insns.iter().map(|i| &i.insn)).ok()
}

struct BlockOutcome {
    insns: Vec<Instruction>,
    report: BlockReport,
    mined: Vec<RewriteRule>,
}

fn optimize_block(
    index: usize,
    block: &[Instruction],
    entry: &RegTypeMap,
    live_end: LiveOut,
    cfg: &PipelineConfig,
    rules: &RuleStore,
) -> BlockOutcome {
    let lat = latency_model(cfg);
    let mut report = BlockReport::new(index, block, live_end, &lat);
    let unchanged = |report: BlockReport| BlockOutcome { insns: block.to_vec(), report, mined: Vec::new() };
    let slices = match extract_slices(block, live_end, entry, cfg.window) {
        Ok(s) => s,
        Err(e) => {
            report.notes.push(e.to_string());
            return unchanged(report);
        }
    };
    let results: Vec<SliceResult> = slices
        .par_iter()
        .enumerate()
        .map(|(k, s)| {
            let origin = match cfg.label.as_str() {
                "" => format!("block {} slice {}", index, k),
                l => format!("{}: block {} slice {}", l, index, k),
            };
            optimize_slice(s, cfg, rules, &origin)
        })
        .collect();

    let guard = Guard::new(block, entry, live_end, cfg);
    let mut current = slices.clone();
    let mut cur_block = block.to_vec();
    let mut accepted = vec![false; slices.len()];
    for (k, r) in results.iter().enumerate() {
        let Some((new, _)) = &r.replacement else { continue };
        let mut trial = current.clone();
        trial[k] = slices[k].with_insns(new.iter().map(|i| Instruction::new(*i)).collect());
        let cand = match recompose(&trial) {
            Ok(c) => c,
            Err(e) => {
                report.notes.push(format!("slice {}: {}", k, e));
                continue;
            }
        };
        match (cost_of(cfg, &cand), cost_of(cfg, &cur_block)) {
            (Some(a), Some(b)) if a < b => {}
            _ => {
                report.notes.push(format!("slice {}: recomposed block is not cheaper", k));
                continue;
            }
        }
        if !guard.passes(&cand) {
            report.notes.push(format!("slice {}: recomposed block failed the differential check", k));
            continue;
        }
        current = trial;
        cur_block = cand;
        accepted[k] = true;
    }

    if cfg.verify_blocks && accepted.iter().any(|&a| a) {
        let q = EquivQuery::new(block, &cur_block, live_end, *entry);
        match check_equiv(&q, &cfg.solver) {
            Ok(Verdict::Equivalent) => {}
            Ok(v) => {
                report.notes.push(format!("block not proven equivalent ({}); reverted", v));
                accepted.iter_mut().for_each(|a| *a = false);
                cur_block = block.to_vec();
            }
            Err(e) => {
                report.notes.push(format!("block check failed ({}); reverted", e));
                accepted.iter_mut().for_each(|a| *a = false);
                cur_block = block.to_vec();
            }
        }
    }

    let mut mined = Vec::new();
    for (k, (s, r)) in slices.iter().zip(results).enumerate() {
        report.slices.push(SliceReport::new(k, s, &r, accepted[k], &lat));
        if let Some(m) = r.mined {
            mined.push(m);
        }
    }
    report.finish(&cur_block, &lat);
    BlockOutcome { insns: cur_block, report, mined }
}

/// Rewrites jump offsets after blocks changed length. `newpos[i]` is the
/// new index of old statement `i` (or of the first statement emitted after
/// it), with one extra entry for the end of the program.
pub fn retarget(stmts: &mut [Stmt], old_of_new: &[usize], newpos: &[usize]) {
    for (ni, s) in stmts.iter_mut().enumerate() {
        if let Stmt::Control(c) = s {
            if let Some(off) = c.jump_offset() {
                let oi = old_of_new[ni];
                let target = (oi as i64 + 1 + off as i64).clamp(0, newpos.len() as i64 - 1) as usize;
                let new_off = newpos[target] as i64 - (ni as i64 + 1);
                *c = c.with_jump_offset(new_off as i16);
            }
        }
    }
}

/// Optimizes every block of `p`. Control-flow statements are copied
/// through, with jump offsets adjusted to the new block lengths.
pub fn optimize_program(p: &Program, cfg: &PipelineConfig, rules: &RuleStore) -> Result<Optimized, DriverError> {
    cfg.validate()?;
    let entries = block_entry_types(p, &cfg.entry);
    let live_regs = block_live_regs(p);
    let mut outcomes = Vec::with_capacity(p.blocks.len());
    for (b, range) in p.blocks.iter().enumerate() {
        let mut entry = entries[b];
        cfg.annotations.apply_types(b, &mut entry);
        let live = cfg.annotations.live.get(&b).copied().unwrap_or(LiveOut::new(live_regs[b], StackMask::ALL));
        let insns: Vec<Instruction> = p.stmts[range.clone()].iter().filter_map(|s| s.as_insn().copied()).collect();
        outcomes.push(optimize_block(b, &insns, &entry, live, cfg, rules));
    }

    let mut stmts = Vec::with_capacity(p.stmts.len());
    let mut old_of_new = Vec::with_capacity(p.stmts.len());
    let mut newpos = vec![0; p.stmts.len() + 1];
    let mut next_block = 0;
    let mut i = 0;
    while i < p.stmts.len() {
        newpos[i] = stmts.len();
        if next_block < p.blocks.len() && p.blocks[next_block].start == i {
            let range = p.blocks[next_block].clone();
            for ins in &outcomes[next_block].insns {
                stmts.push(Stmt::Insn(Instruction::new(ins.insn)));
                old_of_new.push(i);
            }
            for j in range.clone() {
                newpos[j] = newpos[i];
            }
            i = range.end;
            next_block += 1;
        } else {
            stmts.push(p.stmts[i]);
            old_of_new.push(i);
            i += 1;
        }
    }
    newpos[p.stmts.len()] = stmts.len();
    retarget(&mut stmts, &old_of_new, &newpos);

    let mut mined = RuleStore::new();
    let mut blocks = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        for r in o.mined {
            mined.insert(r);
        }
        blocks.push(o.report);
    }
    let report = OptimizationReport::new(cfg, blocks, mined.len());
    Ok(Optimized { program: Program::from_stmts(stmts), report, mined })
}
