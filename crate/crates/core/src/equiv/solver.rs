// SPDX-License-Identifier: Apache-2.0

//! SMT-LIB v2 solver driven as a child process over stdin/stdout.

use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::time::Duration;

use wait_timeout::ChildExt;

use super::EquivError;

/// Solver executable with arguments, plus a per-query time limit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SolverConfig {
    pub command: Vec<String>,
    pub timeout: Duration,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { command: vec!["z3".into(), "-in".into()], timeout: Duration::from_secs(10) }
    }
}

impl SolverConfig {
    /// Splits a command line such as `"z3 -in"` on whitespace.
    pub fn from_command_line(cmd: &str, timeout: Duration) -> SolverConfig {
        SolverConfig { command: cmd.split_whitespace().map(String::from).collect(), timeout }
    }

    /// Whether the solver can be spawned and answers a trivial query.
    pub fn available(&self) -> bool {
        matches!(run(self, "(check-sat)\n(exit)\n"), Ok(Answer::Sat(_)))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Answer {
    /// Model values by variable name.
    Sat(Vec<(String, u64)>),
    Unsat,
    Unknown(String),
}

/// Runs `script` to completion and parses the first check-sat answer and
/// the following get-value response.
pub fn run(cfg: &SolverConfig, script: &str) -> Result<Answer, EquivError> {
    let (prog, args) =
        cfg.command.split_first().ok_or_else(|| EquivError::SolverUnavailable("empty solver command".into()))?;
    let mut child = Command::new(prog)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| EquivError::SolverUnavailable(format!("{}: {}", prog, e)))?;
    {
        let mut stdin = child.stdin.take().expect("piped stdin");
        // a solver that exits early closes the pipe; its output says why
        let _ = stdin.write_all(script.as_bytes());
    }
    let limit = cfg.timeout + Duration::from_secs(2);
    let status = child.wait_timeout(limit).map_err(|e| EquivError::SolverUnavailable(e.to_string()))?;
    if status.is_none() {
        let _ = child.kill();
        let _ = child.wait();
        return Ok(Answer::Unknown("solver timed out".into()));
    }
    let mut out = String::new();
    if let Some(mut so) = child.stdout.take() {
        so.read_to_string(&mut out).map_err(|e| EquivError::SolverUnavailable(e.to_string()))?;
    }
    parse_answer(&out)
}

fn parse_answer(out: &str) -> Result<Answer, EquivError> {
    let mut lines = out.lines();
    let verdict = loop {
        match lines.next().map(str::trim) {
            Some("sat") => break "sat",
            Some("unsat") => return Ok(Answer::Unsat),
            Some("unknown") => return Ok(Answer::Unknown("solver answered unknown".into())),
            Some("timeout") => return Ok(Answer::Unknown("solver timed out".into())),
            Some(_) => continue,
            None => {
                let head: String = out.chars().take(200).collect();
                return Err(EquivError::SolverUnavailable(format!("no check-sat answer in solver output: {}", head)));
            }
        }
    };
    debug_assert_eq!(verdict, "sat");
    let rest: String = lines.collect::<Vec<_>>().join("\n");
    let sexp = parse_sexp(&rest).unwrap_or(Sexp::List(Vec::new()));
    let mut values = Vec::new();
    if let Sexp::List(items) = sexp {
        for item in items {
            if let Sexp::List(pair) = item {
                if let [Sexp::Atom(name), v] = pair.as_slice() {
                    if let Some(v) = sexp_value(v) {
                        values.push((name.clone(), v));
                    }
                }
            }
        }
    }
    Ok(Answer::Sat(values))
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Sexp {
    Atom(String),
    List(Vec<Sexp>),
}

fn parse_sexp(text: &str) -> Option<Sexp> {
    let mut stack: Vec<Vec<Sexp>> = Vec::new();
    let mut atom = String::new();
    let flush = |atom: &mut String, stack: &mut Vec<Vec<Sexp>>| {
        if !atom.is_empty() {
            if let Some(top) = stack.last_mut() {
                top.push(Sexp::Atom(std::mem::take(atom)));
            } else {
                atom.clear();
            }
        }
    };
    for c in text.chars() {
        match c {
            '(' => {
                flush(&mut atom, &mut stack);
                stack.push(Vec::new());
            }
            ')' => {
                flush(&mut atom, &mut stack);
                let done = Sexp::List(stack.pop()?);
                match stack.last_mut() {
                    Some(top) => top.push(done),
                    None => return Some(done),
                }
            }
            c if c.is_whitespace() => flush(&mut atom, &mut stack),
            c => atom.push(c),
        }
    }
    None
}

fn sexp_value(v: &Sexp) -> Option<u64> {
    match v {
        Sexp::Atom(a) => {
            if let Some(h) = a.strip_prefix("#x") {
                u64::from_str_radix(h, 16).ok()
            } else if let Some(b) = a.strip_prefix("#b") {
                u64::from_str_radix(b, 2).ok()
            } else {
                match a.as_str() {
                    "true" => Some(1),
                    "false" => Some(0),
                    _ => None,
                }
            }
        }
        Sexp::List(items) => match items.as_slice() {
            [Sexp::Atom(u), Sexp::Atom(bv), Sexp::Atom(_)] if u == "_" => bv.strip_prefix("bv")?.parse().ok(),
            _ => None,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_get_value_forms() {
        let out = "sat\n((r1 #x0000000000000100)\n (m_ctx_8 #b00000001)\n (x (_ bv5 64)))\n";
        let Answer::Sat(v) = parse_answer(out).unwrap() else { panic!() };
        assert_eq!(v, vec![("r1".into(), 0x100), ("m_ctx_8".into(), 1), ("x".into(), 5)]);
    }

    #[test]
    fn unsat_and_noise() {
        assert_eq!(parse_answer("(error \"unsupported\")\nunsat\n").unwrap(), Answer::Unsat);
        assert!(matches!(parse_answer("unknown\n").unwrap(), Answer::Unknown(_)));
        assert!(parse_answer("").is_err());
    }

    #[test]
    fn missing_executable_is_unavailable() {
        let cfg = SolverConfig::from_command_line("/nonexistent/solver -in", Duration::from_secs(1));
        assert!(matches!(run(&cfg, "(check-sat)"), Err(EquivError::SolverUnavailable(_))));
    }
}
