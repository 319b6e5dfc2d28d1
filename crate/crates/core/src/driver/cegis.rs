// SPDX-License-Identifier: Apache-2.0

use std::hash::{Hash, Hasher};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHasher;
use serde::Serialize;

use super::PipelineConfig;
use crate::equiv::{check_equiv, CounterExample, EquivError, EquivQuery, Verdict};
use crate::isa::{Insn, Instruction};
use crate::machine::Layout;
use crate::safety::check_safety_insns;
use crate::slicer::Slice;
use crate::synth::{
    generate_tests, synthesize, CostMode, Decision, SearchBudget, SearchStats, SynthError, SynthOutcome, SynthProblem,
    Testcase,
};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CegisStats {
    pub rounds: usize,
    pub counterexamples: usize,
    pub safety_rejections: usize,
    pub unknown_verdicts: usize,
    pub search: SearchStats,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SliceOutcome {
    Optimized(Vec<Insn>),
    Unchanged(String),
}

/// Per-slice seed: the configured seed mixed with the slice contents.
pub fn slice_seed(seed: u64, slice: &Slice) -> u64 {
    let mut h = FxHasher::default();
    slice.plain_insns().hash(&mut h);
    slice.live.hash(&mut h);
    slice.entry.hash(&mut h);
    seed ^ h.finish()
}

fn to_testcase(c: &CounterExample, seed: u64) -> Testcase {
    Testcase { input: c.input.clone(), seed }
}

/// Synthesize, check safety and equivalence, and feed counterexamples back
/// as tests until a candidate is proven or the search space is exhausted.
pub fn cegis_optimize_slice(slice: &Slice, cfg: &PipelineConfig) -> Result<(SliceOutcome, CegisStats), EquivError> {
    let start = Instant::now();
    let insns = slice.plain_insns();
    let layout = Layout::default();
    let mut stats = CegisStats::default();
    let seed = slice_seed(cfg.seed, slice);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tests = generate_tests(&insns, &slice.entry, &layout, cfg.initial_tests, &mut rng);
    if tests.is_empty() {
        return Ok((SliceOutcome::Unchanged("no input runs the slice without trapping".into()), stats));
    }
    let Ok(max_cost) = cfg.cost.cost_of(&insns) else {
        return Ok((SliceOutcome::Unchanged("latency table lacks an opcode class".into()), stats));
    };
    let max_depth = match cfg.cost.mode {
        CostMode::Size => insns.len().saturating_sub(1),
        CostMode::Latency => insns.len(),
    };
    let problem = SynthProblem { insns: &insns, live: slice.live, entry: slice.entry, layout };
    let orig: Vec<Instruction> = slice.insns.clone();
    loop {
        let left = cfg.synth_timeout.saturating_sub(start.elapsed());
        if left.is_zero() {
            return Ok((SliceOutcome::Unchanged("synthesis timed out".into()), stats));
        }
        stats.rounds += 1;
        let mut budget = SearchBudget::new(max_cost, max_depth);
        budget.timeout = left;
        budget.prune = cfg.prune;
        budget.allow_div = cfg.allow_div;
        budget.node_limit = cfg.node_limit;
        let mut cex: Option<CounterExample> = None;
        let mut failure: Option<EquivError> = None;
        let mut accept = |cand: &[Insn]| {
            if !check_safety_insns(cand, &slice.entry).ok() {
                stats.safety_rejections += 1;
                return Decision::Skip;
            }
            let cand: Vec<Instruction> = cand.iter().map(|i| Instruction::new(*i)).collect();
            let q = EquivQuery::new(&orig, &cand, slice.live, slice.entry);
            match check_equiv(&q, &cfg.solver) {
                Ok(Verdict::Equivalent) => Decision::Accept,
                Ok(Verdict::NotEquivalent(c)) => {
                    cex = Some(*c);
                    Decision::Abort
                }
                Ok(_) => {
                    stats.unknown_verdicts += 1;
                    Decision::Skip
                }
                Err(e) => {
                    failure = Some(e);
                    Decision::Abort
                }
            }
        };
        let res = synthesize(&problem, &tests, &cfg.cost, &budget, &mut accept);
        let (outcome, s) = match res {
            Ok(r) => r,
            Err(SynthError::Cost(_)) => {
                return Ok((SliceOutcome::Unchanged("latency table lacks an opcode class".into()), stats))
            }
            Err(e) => return Ok((SliceOutcome::Unchanged(e.to_string()), stats)),
        };
        stats.search.merge(&s);
        match outcome {
            SynthOutcome::Found(p) => return Ok((SliceOutcome::Optimized(p), stats)),
            SynthOutcome::NoneFound => return Ok((SliceOutcome::Unchanged("no cheaper equivalent".into()), stats)),
            SynthOutcome::Timeout => return Ok((SliceOutcome::Unchanged("search budget exhausted".into()), stats)),
            SynthOutcome::Aborted => {}
        }
        if let Some(e) = failure {
            return Err(e);
        }
        let c = cex.expect("aborted without a counterexample");
        stats.counterexamples += 1;
        let t = to_testcase(&c, seed.wrapping_add(stats.rounds as u64));
        if tests.contains(&t) || t.run(&insns, &slice.entry, &layout).is_err() {
            return Ok((SliceOutcome::Unchanged("counterexample made no progress".into()), stats));
        }
        tests.push(t);
        if stats.rounds >= cfg.max_cegis_rounds {
            return Ok((SliceOutcome::Unchanged("round limit reached".into()), stats));
        }
    }
}
