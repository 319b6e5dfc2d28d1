// SPDX-License-Identifier: Apache-2.0

use std::fmt::Write as _;

use serde::Serialize;

use super::cegis::CegisStats;
use super::pipeline::{SliceResult, Source};
use super::{Mode, PipelineConfig};
use crate::isa::{Insn, Instruction};
use crate::machine::LiveOut;
use crate::slicer::Slice;
use crate::synth::{CostMode, CostModel, SearchStats};

fn listing<'a>(insns: impl IntoIterator<Item = &'a Insn>) -> Vec<String> {
    insns.into_iter().map(|i| i.to_string()).collect()
}

fn latency(lat: &CostModel, insns: &[Insn]) -> String {
    lat.cost_of(insns).map(|c| c.to_string()).unwrap_or_else(|_| "?".into())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SliceReport {
    pub index: usize,
    pub id: String,
    /// Window number and window count of the slice's chain.
    pub window: (usize, usize),
    pub live_out: String,
    pub before: Vec<String>,
    pub after: Option<Vec<String>>,
    pub source: Option<Source>,
    pub rule: Option<usize>,
    /// Whether the rewrite survived recomposition and the block checks.
    pub accepted: bool,
    pub verdict: String,
    pub latency_before: String,
    pub latency_after: Option<String>,
    pub mined_rule: bool,
    pub note: Option<String>,
    pub stats: CegisStats,
}

impl SliceReport {
    pub(super) fn new(index: usize, s: &Slice, r: &SliceResult, accepted: bool, lat: &CostModel) -> SliceReport {
        let before = s.plain_insns();
        let verdict = match &r.replacement {
            Some(_) => "equivalent",
            None => "unchanged",
        };
        SliceReport {
            index,
            id: s.id.to_string(),
            window: s.window,
            live_out: s.live.to_string(),
            before: listing(&before),
            after: r.replacement.as_ref().map(|(p, _)| listing(p)),
            source: r.replacement.as_ref().map(|(_, src)| *src),
            rule: r.rule,
            accepted,
            verdict: verdict.into(),
            latency_before: latency(lat, &before),
            latency_after: r.replacement.as_ref().map(|(p, _)| latency(lat, p)),
            mined_rule: r.mined.is_some(),
            note: r.note.clone(),
            stats: r.stats.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BlockReport {
    pub index: usize,
    pub live_out: String,
    pub before: Vec<String>,
    pub after: Vec<String>,
    pub insns_before: usize,
    pub insns_after: usize,
    pub latency_before: String,
    pub latency_after: String,
    pub slices: Vec<SliceReport>,
    pub notes: Vec<String>,
}

impl BlockReport {
    pub(super) fn new(index: usize, block: &[Instruction], live: LiveOut, lat: &CostModel) -> BlockReport {
        let insns: Vec<Insn> = block.iter().map(|i| i.insn).collect();
        BlockReport {
            index,
            live_out: live.to_string(),
            before: listing(&insns),
            after: listing(&insns),
            insns_before: insns.len(),
            insns_after: insns.len(),
            latency_before: latency(lat, &insns),
            latency_after: latency(lat, &insns),
            slices: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub(super) fn finish(&mut self, block: &[Instruction], lat: &CostModel) {
        let insns: Vec<Insn> = block.iter().map(|i| i.insn).collect();
        self.after = listing(&insns);
        self.insns_after = insns.len();
        self.latency_after = latency(lat, &insns);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Totals {
    pub insns_before: usize,
    pub insns_after: usize,
    /// `(before - after) / before` over all blocks.
    pub size_reduction: f64,
    pub slices: usize,
    pub slices_rewritten: usize,
    pub rules_applied: usize,
    pub rules_mined: usize,
    pub search: SearchStats,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OptimizationReport {
    pub mode: Mode,
    pub cost: CostMode,
    pub window: usize,
    pub seed: u64,
    pub blocks: Vec<BlockReport>,
    pub totals: Totals,
}

impl OptimizationReport {
    pub(super) fn new(cfg: &PipelineConfig, blocks: Vec<BlockReport>, rules_mined: usize) -> OptimizationReport {
        let insns_before: usize = blocks.iter().map(|b| b.insns_before).sum();
        let insns_after: usize = blocks.iter().map(|b| b.insns_after).sum();
        let slices = blocks.iter().flat_map(|b| &b.slices);
        let mut search = SearchStats::default();
        let (mut n, mut rewritten, mut applied) = (0, 0, 0);
        for s in slices {
            n += 1;
            search.merge(&s.stats.search);
            if s.accepted {
                rewritten += 1;
                if s.source == Some(Source::Rule) {
                    applied += 1;
                }
            }
        }
        let size_reduction =
            if insns_before == 0 { 0.0 } else { (insns_before as f64 - insns_after as f64) / insns_before as f64 };
        OptimizationReport {
            mode: cfg.mode,
            cost: cfg.cost.mode,
            window: cfg.window,
            seed: cfg.seed,
            blocks,
            totals: Totals {
                insns_before,
                insns_after,
                size_reduction,
                slices: n,
                slices_rewritten: rewritten,
                rules_applied: applied,
                rules_mined,
                search,
            },
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let t = &self.totals;
        let _ = writeln!(out, "mode {} cost {} window {} seed {}", self.mode, self.cost, self.window, self.seed);
        for b in &self.blocks {
            let _ = writeln!(
                out,
                "block {}: {} -> {} insns, latency {} -> {}, live-out {}",
                b.index,
                b.insns_before,
                b.insns_after,
                b.latency_before,
                b.latency_after,
                if b.live_out.is_empty() { "none" } else { &b.live_out }
            );
            for s in &b.slices {
                let status = match (s.accepted, s.source) {
                    (true, Some(Source::Rule)) => format!("rewritten by rule {}", s.rule.unwrap_or(0)),
                    (true, _) => "rewritten by synthesis".to_string(),
                    (false, Some(_)) => "rewrite dropped".to_string(),
                    (false, None) => format!("unchanged: {}", s.note.as_deref().unwrap_or("")),
                };
                let _ = writeln!(
                    out,
                    "  slice {} [{}] window {}/{}: {} insns, {}",
                    s.index,
                    s.id,
                    s.window.0 + 1,
                    s.window.1,
                    s.before.len(),
                    status
                );
                if s.accepted {
                    for l in s.after.iter().flatten() {
                        let _ = writeln!(out, "    {}", l);
                    }
                }
            }
            for n in &b.notes {
                let _ = writeln!(out, "  note: {}", n);
            }
        }
        let _ = writeln!(
            out,
            "total: {} -> {} insns ({:.2}% smaller), {} of {} slices rewritten, {} by rules, {} rules mined",
            t.insns_before,
            t.insns_after,
            t.size_reduction * 100.0,
            t.slices_rewritten,
            t.slices,
            t.rules_applied,
            t.rules_mined
        );
        let _ = writeln!(
            out,
            "search: {} nodes, pruned {} by distance, {} by memo, {} by redundant definition, {} candidates rejected",
            t.search.nodes_expanded,
            t.search.pruned_distance,
            t.search.pruned_memo,
            t.search.pruned_redundant_def,
            t.search.candidates_rejected
        );
        out
    }
}
