// SPDX-License-Identifier: Apache-2.0

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use bpf_superopt::driver::{cegis_optimize_slice, optimize_program, Mode, PipelineConfig, SliceOutcome};
use bpf_superopt::equiv::{check_equiv, EquivQuery, SolverConfig, Verdict};
use bpf_superopt::isa::{parse_asm, parse_insn, print_asm, Insn, Instruction, Program, Reg, RegSet};
use bpf_superopt::machine::{Layout, LiveOut, RegTypeMap, StackMask};
use bpf_superopt::rules::RuleStore;
use bpf_superopt::slicer::{block_entry_types, block_live_regs, extract_slices, Annotations};
use bpf_superopt::synth::{default_latency_table, generate_tests, state_distance, CostModel};

fn corpus() -> Vec<PathBuf> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus");
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "s"))
        .collect();
    v.sort();
    v
}

fn load(path: &Path) -> (Program, Annotations) {
    let p = parse_asm(&fs::read_to_string(path).unwrap()).unwrap();
    let ann =
        fs::read_to_string(path.with_extension("ann")).map(|t| Annotations::parse(&t).unwrap()).unwrap_or_default();
    (p, ann)
}

fn config(mode: Mode, ann: Annotations) -> PipelineConfig {
    PipelineConfig { mode, annotations: ann, node_limit: Some(2_000_000), ..Default::default() }
}

fn parse_list(lines: &[String]) -> Vec<Insn> {
    lines.iter().map(|l| parse_insn(l).unwrap()).collect()
}

#[test]
fn corpus_outputs_are_equivalent_and_never_larger() {
    let files = corpus();
    assert_eq!(files.len(), 19);
    for f in files {
        let (p, ann) = load(&f);
        let cfg = config(Mode::Offline, ann.clone());
        let o = optimize_program(&p, &cfg, &RuleStore::new()).unwrap();
        assert!(o.program.len() <= p.len(), "{}", f.display());
        assert_eq!(o.report.blocks.len(), p.blocks.len());
        let entries = block_entry_types(&p, &cfg.entry);
        let live_regs = block_live_regs(&p);
        let layout = Layout::default();
        for (b, rep) in o.report.blocks.iter().enumerate() {
            let mut types = entries[b];
            ann.apply_types(b, &mut types);
            let live = ann.live.get(&b).copied().unwrap_or(LiveOut::new(live_regs[b], StackMask::ALL));
            let before = parse_list(&rep.before);
            let after = parse_list(&rep.after);
            assert!(after.len() <= before.len());
            let mut rng = ChaCha8Rng::seed_from_u64(b as u64);
            for t in generate_tests(&before, &types, &layout, 200, &mut rng) {
                let want = t.run(&before, &types, &layout).unwrap();
                let got = t.run(&after, &types, &layout).unwrap();
                assert_eq!(state_distance(&got, &want, &t, &live), 0, "{} block {}", f.display(), b);
            }
        }
        // control flow is copied through
        let ctl = |p: &Program| p.stmts.iter().filter(|s| s.as_insn().is_none()).count();
        assert_eq!(ctl(&o.program), ctl(&p));
    }
}

#[test]
fn optimal_program_is_unchanged() {
    let f = corpus().into_iter().find(|p| p.to_string_lossy().contains("already_optimal")).unwrap();
    let (p, ann) = load(&f);
    let o = optimize_program(&p, &config(Mode::Offline, ann), &RuleStore::new()).unwrap();
    assert_eq!(print_asm(&o.program), print_asm(&p));
    assert!(o.mined.is_empty());
}

#[test]
fn reports_and_outputs_are_reproducible() {
    for f in corpus().into_iter().take(6) {
        let (p, ann) = load(&f);
        let cfg = config(Mode::Offline, ann);
        let a = optimize_program(&p, &cfg, &RuleStore::new()).unwrap();
        let b = optimize_program(&p, &cfg, &RuleStore::new()).unwrap();
        assert_eq!(print_asm(&a.program), print_asm(&b.program));
        assert_eq!(a.report.to_json(), b.report.to_json());
    }
}

#[test]
fn counterexamples_refine_a_near_miss() {
    // `r0 = r1` agrees with the slice whenever r1 fits in 16 bits
    let src = "r0 = r1\nr0 &= 65535\nr0 += 0\n";
    let insns: Vec<Instruction> = parse_asm(src).unwrap().block_insns(0);
    let live = LiveOut::regs(RegSet::single(Reg::R0));
    let types = RegTypeMap::all_scalar();
    let slice = extract_slices(&insns, live, &types, 6).unwrap().remove(0);
    let mut refined = 0;
    for seed in 0..40 {
        let cfg = PipelineConfig { seed, initial_tests: 1, node_limit: Some(1_000_000), ..Default::default() };
        let (out, stats) = cegis_optimize_slice(&slice, &cfg).unwrap();
        let SliceOutcome::Optimized(p) = out else { panic!("seed {}: {:?}", seed, out) };
        assert_eq!(p.len(), 2);
        let cand: Vec<Instruction> = p.iter().map(|i| Instruction::new(*i)).collect();
        let q = EquivQuery::new(&slice.insns, &cand, live, types);
        assert_eq!(check_equiv(&q, &SolverConfig::default()).unwrap(), Verdict::Equivalent);
        if stats.counterexamples > 0 {
            assert!(stats.rounds > stats.counterexamples);
            refined += 1;
        }
    }
    assert!(refined > 0);
}

#[test]
fn latency_mode_never_increases_latency() {
    let lat = CostModel::latency(default_latency_table());
    for f in corpus() {
        let (p, ann) = load(&f);
        let cfg = PipelineConfig { cost: lat.clone(), ..config(Mode::Offline, ann) };
        let o = optimize_program(&p, &cfg, &RuleStore::new()).unwrap();
        let cost = |p: &Program| lat.cost_of(p.stmts.iter().filter_map(|s| s.as_insn()).map(|i| &i.insn)).unwrap();
        assert!(cost(&o.program) <= cost(&p), "{}", f.display());
    }
}

#[test]
fn unavailable_solver_leaves_program_unchanged() {
    let f = corpus().into_iter().next().unwrap();
    let (p, ann) = load(&f);
    let cfg = PipelineConfig {
        solver: SolverConfig::from_command_line("/nonexistent/solver", std::time::Duration::from_secs(1)),
        ..config(Mode::Offline, ann)
    };
    let o = optimize_program(&p, &cfg, &RuleStore::new()).unwrap();
    assert_eq!(print_asm(&o.program), print_asm(&p));
    let note = o.report.blocks[0].slices[0].note.clone().unwrap();
    assert!(note.contains("solver"), "{}", note);
}

#[test]
fn hybrid_extends_rule_store() {
    let files = corpus();
    let (p1, a1) = load(&files[0]);
    let mined = optimize_program(&p1, &config(Mode::Offline, a1), &RuleStore::new()).unwrap().mined;
    let src = "r3 = *(u32 *)(r1 + 24)\nr4 = *(u32 *)(r1 + 28)\nr4 <<= 32\nr4 |= r3\nr5 = r2\nr6 = r5\nr0 = *(u32 *)(r6 + 4)\nexit\n";
    let p = parse_asm(src).unwrap();
    let ann = Annotations::parse("block 0 live-out: r0,r4\nblock 0 types: r2=mem1\n").unwrap();
    let o = optimize_program(&p, &config(Mode::Hybrid, ann), &mined).unwrap();
    assert_eq!(o.report.totals.rules_applied, 1);
    assert_eq!(o.mined.len(), 1);
    let mut store = mined.clone();
    assert_eq!(store.merge(&o.mined), 1);
    assert_eq!(store.len(), 2);
}
