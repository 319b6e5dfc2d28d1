// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

use bpf_superopt::driver::{optimize_program, Mode, PipelineConfig};
use bpf_superopt::equiv::{check_equiv, EquivQuery, SolverConfig, Verdict};
use bpf_superopt::isa::{decode_program, parse_asm, print_asm, Control, Instruction, Program, Stmt};
use bpf_superopt::machine::{format_snapshot, interpret, parse_snapshot, LiveOut, RegType, RegTypeMap};
use bpf_superopt::rules::RuleStore;
use bpf_superopt::slicer::Annotations;
use bpf_superopt::synth::{default_latency_table, parse_latency_table, CostModel};

#[derive(Debug, Error)]
enum CliError {
    /// Bad input files or flags.
    #[error("{0}")]
    Input(String),
    /// A failure of the tool itself or its solver.
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 1,
            CliError::Internal(_) => 2,
        }
    }
}

fn input(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

#[derive(Parser)]
#[command(name = "bpf-superopt", version, about = "Superoptimizer for straight-line eBPF bytecode")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Offline,
    Online,
    Hybrid,
}

#[derive(Clone, Copy, ValueEnum)]
enum CostArg {
    Size,
    Latency,
}

#[derive(Clone, Copy, ValueEnum, PartialEq, Eq)]
enum ReportArg {
    Text,
    Json,
}

#[derive(clap::Args)]
struct SearchArgs {
    /// Maximum slice window length.
    #[arg(long, default_value_t = 6)]
    window: usize,
    /// Synthesis budget per slice, in seconds.
    #[arg(long, default_value_t = 600)]
    timeout: u64,
    #[arg(long, value_enum, default_value_t = CostArg::Size)]
    cost: CostArg,
    /// Per-opcode-class latencies, one `class ns` pair per line.
    #[arg(long)]
    latency_table: Option<PathBuf>,
    /// Solver command line; the query is written to its standard input.
    #[arg(long, default_value = "z3 -in")]
    solver: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Cap on search nodes per synthesis round, for reproducible runs.
    #[arg(long)]
    node_limit: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize a program and print it.
    Optimize {
        program: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Offline)]
        mode: ModeArg,
        #[command(flatten)]
        search: SearchArgs,
        /// Rule file to match against.
        #[arg(long)]
        rules: Option<PathBuf>,
        /// Write the input rules plus newly mined ones here.
        #[arg(long)]
        emit_rules: Option<PathBuf>,
        /// Per-block live-out and type annotations; defaults to PROGRAM.ann.
        #[arg(long)]
        liveness: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ReportArg::Text)]
        report: ReportArg,
        /// Write the report here instead of standard error.
        #[arg(long)]
        report_file: Option<PathBuf>,
    },
    /// Mine rules by optimizing every program in a directory.
    MineRules {
        dir: PathBuf,
        /// Rule file to write; standard output if absent.
        #[arg(long, short)]
        out: Option<PathBuf>,
        #[command(flatten)]
        search: SearchArgs,
    },
    /// Optimize a program using rule matching only.
    ApplyRules {
        program: PathBuf,
        #[arg(long)]
        rules: PathBuf,
        #[arg(long)]
        liveness: Option<PathBuf>,
        #[arg(long, default_value = "z3 -in")]
        solver: String,
    },
    /// Check two straight-line programs for equivalence.
    VerifyEquiv {
        p: PathBuf,
        q: PathBuf,
        /// Comma-separated live registers and `stack[lo..hi)` ranges.
        #[arg(long, allow_hyphen_values = true)]
        live_out: String,
        /// Entry types such as `r1=ctx,r2=scalar`; r1 is ctx by default.
        #[arg(long)]
        types: Option<String>,
        #[arg(long, default_value = "z3 -in")]
        solver: String,
    },
    /// Run a straight-line program from a state file.
    Interp {
        program: PathBuf,
        #[arg(long)]
        state: PathBuf,
    },
    /// Summarize a rule file.
    Stats {
        rules: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

fn read_program(path: &Path) -> Result<Program, CliError> {
    let bytes = fs::read(path).map_err(|e| input(format!("{}: {}", path.display(), e)))?;
    let binary = path.extension().is_some_and(|e| e == "bin" || e == "o");
    match std::str::from_utf8(&bytes) {
        Ok(text) if !binary => parse_asm(text).map_err(|e| input(format!("{}: {}", path.display(), e))),
        _ => decode_program(&bytes).map_err(|(at, e)| input(format!("{}: instruction {}: {}", path.display(), at, e))),
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| input(format!("{}: {}", path.display(), e)))
}

fn read_annotations(program: &Path, explicit: Option<&Path>) -> Result<Annotations, CliError> {
    let path = match explicit {
        Some(p) => p.to_path_buf(),
        None => {
            let side = program.with_extension("ann");
            if !side.exists() {
                return Ok(Annotations::default());
            }
            side
        }
    };
    Annotations::parse(&read_text(&path)?).map_err(|e| input(format!("{}: {}", path.display(), e)))
}

fn read_rules(path: &Path) -> Result<RuleStore, CliError> {
    RuleStore::load(path).map_err(|e| input(format!("{}: {}", path.display(), e)))
}

fn solver(cmd: &str) -> SolverConfig {
    SolverConfig::from_command_line(cmd, SolverConfig::default().timeout)
}

fn config(mode: Mode, s: &SearchArgs) -> Result<PipelineConfig, CliError> {
    if s.window == 0 {
        return Err(input("--window must be at least 1"));
    }
    let cost = match s.cost {
        CostArg::Size => CostModel::size(),
        CostArg::Latency => {
            let table = match &s.latency_table {
                Some(p) => parse_latency_table(&read_text(p)?).map_err(|e| input(format!("{}: {}", p.display(), e)))?,
                None => default_latency_table(),
            };
            CostModel::latency(table)
        }
    };
    Ok(PipelineConfig {
        mode,
        window: s.window,
        synth_timeout: Duration::from_secs(s.timeout),
        cost,
        solver: solver(&s.solver),
        seed: s.seed,
        node_limit: s.node_limit,
        ..Default::default()
    })
}

fn write_out(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Internal(format!("{}: {}", path.display(), e)))
}

fn straight_line(p: &Program, path: &Path) -> Result<Vec<Instruction>, CliError> {
    let mut out = Vec::new();
    for (i, s) in p.stmts.iter().enumerate() {
        match s {
            Stmt::Insn(ins) => out.push(*ins),
            Stmt::Control(Control::Exit) if i + 1 == p.stmts.len() => {}
            Stmt::Control(_) => {
                return Err(input(format!(
                    "{}: statement {} is control flow; expected straight-line code",
                    path.display(),
                    i
                )))
            }
        }
    }
    Ok(out)
}

fn parse_types(spec: Option<&str>) -> Result<RegTypeMap, CliError> {
    let mut t = RegTypeMap::program_entry();
    for item in spec.unwrap_or("").split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (r, ty) = item.split_once('=').ok_or_else(|| input(format!("expected `rN=type`, got `{}`", item)))?;
        let r = r.trim().parse().map_err(|_| input(format!("bad register `{}`", r)))?;
        let ty: RegType = ty.parse().map_err(input)?;
        t.set(r, ty);
    }
    Ok(t)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Command::Optimize { program, mode, search, rules, emit_rules, liveness, report, report_file } => {
            let mode = match mode {
                ModeArg::Offline => Mode::Offline,
                ModeArg::Online => Mode::Online,
                ModeArg::Hybrid => Mode::Hybrid,
            };
            if mode == Mode::Online && rules.is_none() {
                return Err(input("--mode online needs --rules"));
            }
            let mut cfg = config(mode, &search)?;
            cfg.annotations = read_annotations(&program, liveness.as_deref())?;
            cfg.label = program.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let p = read_program(&program)?;
            let store = match &rules {
                Some(r) => read_rules(r)?,
                None => RuleStore::new(),
            };
            let o = optimize_program(&p, &cfg, &store).map_err(input)?;
            print!("{}", print_asm(&o.program));
            let text = match report {
                ReportArg::Text => o.report.to_text(),
                ReportArg::Json => o.report.to_json() + "\n",
            };
            match report_file {
                Some(f) => write_out(&f, &text)?,
                None => eprint!("{}", text),
            }
            if let Some(f) = emit_rules {
                let mut all = store;
                all.merge(&o.mined);
                write_out(&f, &all.to_jsonl())?;
            }
        }
        Command::MineRules { dir, out, search } => {
            let cfg = config(Mode::Offline, &search)?;
            let mut files: Vec<PathBuf> = fs::read_dir(&dir)
                .map_err(|e| input(format!("{}: {}", dir.display(), e)))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "s" || e == "bin"))
                .collect();
            files.sort();
            let mut store = RuleStore::new();
            for f in &files {
                let cfg = PipelineConfig {
                    annotations: read_annotations(f, None)?,
                    label: f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
                    ..cfg.clone()
                };
                let o = optimize_program(&read_program(f)?, &cfg, &RuleStore::new()).map_err(input)?;
                let added = store.merge(&o.mined);
                eprintln!(
                    "{}: {} -> {} insns, {} new rules",
                    f.display(),
                    o.report.totals.insns_before,
                    o.report.totals.insns_after,
                    added
                );
            }
            match out {
                Some(f) => write_out(&f, &store.to_jsonl())?,
                None => print!("{}", store.to_jsonl()),
            }
        }
        Command::ApplyRules { program, rules, liveness, solver: cmd } => {
            let cfg = PipelineConfig {
                mode: Mode::Online,
                solver: solver(&cmd),
                annotations: read_annotations(&program, liveness.as_deref())?,
                ..Default::default()
            };
            let o = optimize_program(&read_program(&program)?, &cfg, &read_rules(&rules)?).map_err(input)?;
            print!("{}", print_asm(&o.program));
            eprint!("{}", o.report.to_text());
        }
        Command::VerifyEquiv { p, q, live_out, types, solver: cmd } => {
            let a = straight_line(&read_program(&p)?, &p)?;
            let b = straight_line(&read_program(&q)?, &q)?;
            let live: LiveOut = live_out.parse().map_err(input)?;
            let entry = parse_types(types.as_deref())?;
            let query = EquivQuery::new(&a, &b, live, entry);
            match check_equiv(&query, &solver(&cmd)) {
                Ok(Verdict::Equivalent) => println!("Equivalent"),
                Ok(Verdict::BoundedEquivalent) => println!("BoundedEquivalent"),
                Ok(Verdict::NotEquivalent(c)) => {
                    println!("NotEquivalent: {}", c.mismatch);
                    print!("{}", format_snapshot(&c.input, &c.types));
                }
                Ok(Verdict::Unknown(why)) => println!("Unknown: {}", why),
                Err(e) => return Err(CliError::Internal(e.to_string())),
            }
        }
        Command::Interp { program, state } => {
            let insns = straight_line(&read_program(&program)?, &program)?;
            let (s0, types) =
                parse_snapshot(&read_text(&state)?).map_err(|e| input(format!("{}: {}", state.display(), e)))?;
            match interpret(&insns, &s0, &types) {
                Ok(s) => print!("{}", format_snapshot(&s, &types)),
                Err(f) => return Err(input(format!("fault at instruction {}: {}", f.pc, f.kind))),
            }
        }
        Command::Stats { rules, json } => {
            let store = read_rules(&rules)?;
            let mut by_len: BTreeMap<usize, usize> = BTreeMap::new();
            let mut by_fp: BTreeMap<String, usize> = BTreeMap::new();
            let mut saved = 0i64;
            for r in store.rules() {
                *by_len.entry(r.pattern.len()).or_default() += 1;
                *by_fp.entry(r.fingerprint()).or_default() += 1;
                saved += r.cost_delta_size;
            }
            if json {
                let v = serde_json::json!({
                    "rules": store.len(),
                    "size_saving_total": saved,
                    "by_pattern_length": by_len,
                    "by_fingerprint": by_fp,
                });
                println!("{}", serde_json::to_string_pretty(&v).expect("stats serialize"));
            } else {
                println!("rules: {}", store.len());
                println!("total size saving: {}", saved);
                for (l, n) in &by_len {
                    println!("pattern length {}: {}", l, n);
                }
                for (fp, n) in &by_fp {
                    println!("{:>5}  {}", n, fp);
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(e.code())
        }
    }
}
