// SPDX-License-Identifier: Apache-2.0

use super::*;
use crate::isa::parse_asm;
use crate::machine::RegType;
use crate::slicer::{Slice, SliceId};
use crate::synth::default_latency_table;

fn insns(src: &str) -> Vec<Insn> {
    parse_asm(src).unwrap().block_insns(0).into_iter().map(|i| i.insn).collect()
}

fn latency() -> CostModel {
    CostModel::latency(default_latency_table())
}

const EXAMPLE1: &str = "r1 = *(u32 *)(r0 + 8)\nr2 = *(u32 *)(r0 + 12)\nr2 <<= 32\nr2 |= r1";

fn example1_rule() -> RewriteRule {
    let entry = RegTypeMap::default().with(Reg::R0, RegType::CTX);
    abstract_rule(
        &insns(EXAMPLE1),
        &insns("r2 = *(u64 *)(r0 + 8)"),
        &LiveOut::regs(RegSet::single(Reg::R2)),
        &entry,
        &latency(),
        "test",
    )
    .unwrap()
}

fn slice(src: &str, live: &[Reg], entry: RegTypeMap) -> Slice {
    Slice {
        id: SliceId::Reg(live[0]),
        insns: parse_asm(src).unwrap().block_insns(0),
        live: LiveOut::regs(live.iter().copied().collect()),
        entry,
        window: (0, 1),
        anchor: 0,
    }
}

#[test]
fn example1_abstraction() {
    let r = example1_rule();
    let text: Vec<String> = r.pattern.iter().map(|i| i.to_string()).collect();
    assert_eq!(text, vec!["r1 = *(u32 *)(r0 + 0)", "r2 = *(u32 *)(r0 + 4)", "r2 <<= 32", "r2 |= r1"]);
    assert_eq!(r.replacement[0].to_string(), "r2 = *(u64 *)(r0 + 0)");
    assert_eq!(r.preconds.dead_regs, vec![Reg::R1]);
    assert_eq!(r.cost_delta_size, 3);
    assert_eq!(r.preconds.align, vec![AlignResidue { base: Reg::R0, modulus: 8, residue: 0 }]);
}

#[test]
fn renamed_copies_abstract_identically() {
    let entry = RegTypeMap::default().with(Reg::R0, RegType::CTX);
    let renamed = RegTypeMap::default().with(Reg::R6, RegType::CTX);
    let a = example1_rule();
    let b = abstract_rule(
        &insns("r7 = *(u32 *)(r6 + 40)\nr8 = *(u32 *)(r6 + 44)\nr8 <<= 32\nr8 |= r7"),
        &insns("r8 = *(u64 *)(r6 + 40)"),
        &LiveOut::regs(RegSet::single(Reg::R8)),
        &renamed,
        &latency(),
        "test",
    )
    .unwrap();
    assert_eq!(a.pattern, b.pattern);
    assert_eq!(a.replacement, b.replacement);
    assert_eq!(a.preconds, b.preconds);
    // already abstract input is a fixed point
    let c = abstract_rule(&a.pattern, &a.replacement, &LiveOut::regs(RegSet::single(Reg::R2)), &entry, &latency(), "t")
        .unwrap();
    assert_eq!(c.pattern, a.pattern);
    assert_eq!(c.replacement, a.replacement);
}

#[test]
fn renamed_instance_is_rewritten() {
    let mut store = RuleStore::new();
    store.insert(example1_rule());
    let s = slice(
        "r7 = *(u32 *)(r6 + 40)\nr8 = *(u32 *)(r6 + 44)\nr8 <<= 32\nr8 |= r7",
        &[Reg::R8],
        RegTypeMap::default().with(Reg::R6, RegType::CTX),
    );
    let out = match_and_apply(&s, &store, &CostModel::size(), &SolverConfig::default()).unwrap();
    let MatchOutcome::Applied { rule: 0, insns } = out else { panic!("{:?}", out) };
    assert_eq!(insns.len(), 1);
    assert_eq!(insns[0].to_string(), "r8 = *(u64 *)(r6 + 40)");
}

#[test]
fn live_clobber_blocks_match() {
    let mut store = RuleStore::new();
    store.insert(example1_rule());
    let s = slice(
        "r7 = *(u32 *)(r6 + 40)\nr8 = *(u32 *)(r6 + 44)\nr8 <<= 32\nr8 |= r7",
        &[Reg::R8, Reg::R7],
        RegTypeMap::default().with(Reg::R6, RegType::CTX),
    );
    assert_eq!(
        match_and_apply(&s, &store, &CostModel::size(), &SolverConfig::default()).unwrap(),
        MatchOutcome::NoMatch
    );
}

#[test]
fn misaligned_instance_is_not_rewritten() {
    let mut store = RuleStore::new();
    store.insert(example1_rule());
    let s = slice(
        "r7 = *(u32 *)(r6 + 44)\nr8 = *(u32 *)(r6 + 48)\nr8 <<= 32\nr8 |= r7",
        &[Reg::R8],
        RegTypeMap::default().with(Reg::R6, RegType::CTX),
    );
    assert_eq!(
        match_and_apply(&s, &store, &CostModel::size(), &SolverConfig::default()).unwrap(),
        MatchOutcome::NoMatch
    );
    // without the residue precondition the safety re-check still refuses it
    let mut loose = example1_rule();
    loose.preconds.align.clear();
    let mut store = RuleStore::new();
    store.insert(loose);
    assert_eq!(
        match_and_apply(&s, &store, &CostModel::size(), &SolverConfig::default()).unwrap(),
        MatchOutcome::NoMatch
    );
}

#[test]
fn store_round_trip() {
    let mut store = RuleStore::new();
    assert!(store.insert(example1_rule()));
    assert!(!store.insert(example1_rule()));
    let entry = RegTypeMap::all_scalar();
    store.insert(
        abstract_rule(
            &insns("*(u8 *)(r10 - 2) = r1\nr1 >>= 8\n*(u8 *)(r10 - 1) = r1"),
            &insns("*(u16 *)(r10 - 2) = r1"),
            &LiveOut::regs(RegSet::EMPTY),
            &entry,
            &latency(),
            "test",
        )
        .unwrap(),
    );
    assert_eq!(store.len(), 2);
    let text = store.to_jsonl();
    let back = RuleStore::from_jsonl(&text).unwrap();
    assert_eq!(back, store);
    assert_eq!(RuleStore::from_jsonl("").unwrap(), RuleStore::new());
    let truncated = &text[..text.len() / 2];
    assert!(matches!(RuleStore::from_jsonl(truncated), Err(StoreError::CorruptRuleFile { line: 1, .. })));
}

#[test]
fn fresh_registers_are_rejected() {
    let r = abstract_rule(
        &insns("r1 = r2\nr1 += 1"),
        &insns("r3 = r2"),
        &LiveOut::regs(RegSet::EMPTY),
        &RegTypeMap::all_scalar(),
        &latency(),
        "t",
    );
    assert!(matches!(r, Err(RuleError::NotAbstractable(_))));
}
