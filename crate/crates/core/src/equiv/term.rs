// SPDX-License-Identifier: Apache-2.0

//! Hash-consed bitvector terms with local simplification.
//!
//! Width 0 denotes the boolean sort; other widths are bitvector sizes of at
//! most 64 bits. Children are always created before their parents, so node
//! ids are a topological order.

use std::fmt::Write as _;

use rustc_hash::FxHashMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct T(u32);

impl T {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Op2 {
    Add,
    Sub,
    Mul,
    Udiv,
    Urem,
    And,
    Or,
    Xor,
    Shl,
    Lshr,
    Ashr,
    Concat,
    Eq,
    Ult,
    Ule,
    Slt,
    Sle,
    BAnd,
    BOr,
}

impl Op2 {
    fn commutative(self) -> bool {
        matches!(self, Op2::Add | Op2::Mul | Op2::And | Op2::Or | Op2::Xor | Op2::Eq | Op2::BAnd | Op2::BOr)
    }

    fn smt(self) -> &'static str {
        match self {
            Op2::Add => "bvadd",
            Op2::Sub => "bvsub",
            Op2::Mul => "bvmul",
            Op2::Udiv => "bvudiv",
            Op2::Urem => "bvurem",
            Op2::And => "bvand",
            Op2::Or => "bvor",
            Op2::Xor => "bvxor",
            Op2::Shl => "bvshl",
            Op2::Lshr => "bvlshr",
            Op2::Ashr => "bvashr",
            Op2::Concat => "concat",
            Op2::Eq => "=",
            Op2::Ult => "bvult",
            Op2::Ule => "bvule",
            Op2::Slt => "bvslt",
            Op2::Sle => "bvsle",
            Op2::BAnd => "and",
            Op2::BOr => "or",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Node {
    Const(u64, u8),
    Var(u32),
    Not(T),
    Neg(T),
    Bin(Op2, T, T),
    Ite(T, T, T),
    Extract { hi: u8, lo: u8, a: T },
    Zext { by: u8, a: T },
}

pub fn mask(w: u8) -> u64 {
    if w >= 64 {
        u64::MAX
    } else if w == 0 {
        1
    } else {
        (1u64 << w) - 1
    }
}

fn sext(v: u64, w: u8) -> i64 {
    if w == 0 || w >= 64 {
        v as i64
    } else {
        let s = 64 - w as u32;
        ((v << s) as i64) >> s
    }
}

/// Semantics of a binary operator on already-masked operands of width `w`
/// (the operand width, not the result width).
fn eval_bin(op: Op2, w: u8, wb: u8, a: u64, b: u64) -> u64 {
    let m = mask(w);
    match op {
        Op2::Add => a.wrapping_add(b) & m,
        Op2::Sub => a.wrapping_sub(b) & m,
        Op2::Mul => a.wrapping_mul(b) & m,
        Op2::Udiv => a.checked_div(b).unwrap_or(m),
        Op2::Urem => a.checked_rem(b).unwrap_or(a),
        Op2::And => a & b,
        Op2::Or => a | b,
        Op2::Xor => a ^ b,
        Op2::Shl => {
            if b >= w as u64 {
                0
            } else {
                (a << b) & m
            }
        }
        Op2::Lshr => {
            if b >= w as u64 {
                0
            } else {
                a >> b
            }
        }
        Op2::Ashr => {
            let sh = b.min(w as u64 - 1);
            ((sext(a, w) >> sh) as u64) & m
        }
        Op2::Concat => (a << wb) | b,
        Op2::Eq => (a == b) as u64,
        Op2::Ult => (a < b) as u64,
        Op2::Ule => (a <= b) as u64,
        Op2::Slt => (sext(a, w) < sext(b, w)) as u64,
        Op2::Sle => (sext(a, w) <= sext(b, w)) as u64,
        Op2::BAnd => a & b,
        Op2::BOr => a | b,
    }
}

#[derive(Clone, Debug)]
pub struct VarInfo {
    pub name: String,
    pub width: u8,
}

#[derive(Default)]
pub struct TermStore {
    nodes: Vec<Node>,
    widths: Vec<u8>,
    map: FxHashMap<Node, T>,
    vars: Vec<VarInfo>,
}

impl TermStore {
    pub fn new() -> TermStore {
        TermStore::default()
    }

    pub fn node(&self, t: T) -> Node {
        self.nodes[t.index()]
    }

    pub fn width(&self, t: T) -> u8 {
        self.widths[t.index()]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn vars(&self) -> &[VarInfo] {
        &self.vars
    }

    /// Term for variable `id`.
    pub fn var_term(&self, id: u32) -> T {
        self.map[&Node::Var(id)]
    }

    /// Variable index of `t`, if it is a variable.
    pub fn var_id(&self, t: T) -> Option<u32> {
        match self.node(t) {
            Node::Var(i) => Some(i),
            _ => None,
        }
    }

    fn intern(&mut self, n: Node, w: u8) -> T {
        if let Some(t) = self.map.get(&n) {
            return *t;
        }
        let t = T(self.nodes.len() as u32);
        self.nodes.push(n);
        self.widths.push(w);
        self.map.insert(n, t);
        t
    }

    pub fn konst(&mut self, v: u64, w: u8) -> T {
        let v = v & mask(w);
        self.intern(Node::Const(v, w), w)
    }

    pub fn tru(&mut self) -> T {
        self.konst(1, 0)
    }

    pub fn fls(&mut self) -> T {
        self.konst(0, 0)
    }

    pub fn as_const(&self, t: T) -> Option<u64> {
        match self.node(t) {
            Node::Const(v, _) => Some(v),
            _ => None,
        }
    }

    pub fn is_true(&self, t: T) -> bool {
        self.width(t) == 0 && self.as_const(t) == Some(1)
    }

    pub fn is_false(&self, t: T) -> bool {
        self.width(t) == 0 && self.as_const(t) == Some(0)
    }

    pub fn var(&mut self, name: impl Into<String>, w: u8) -> T {
        let id = self.vars.len() as u32;
        self.vars.push(VarInfo { name: name.into(), width: w });
        self.intern(Node::Var(id), w)
    }

    pub fn not(&mut self, a: T) -> T {
        if let Some(v) = self.as_const(a) {
            return self.konst(v ^ 1, 0);
        }
        if let Node::Not(x) = self.node(a) {
            return x;
        }
        self.intern(Node::Not(a), 0)
    }

    pub fn neg(&mut self, a: T) -> T {
        let w = self.width(a);
        if let Some(v) = self.as_const(a) {
            return self.konst(v.wrapping_neg(), w);
        }
        self.intern(Node::Neg(a), w)
    }

    pub fn ite(&mut self, c: T, a: T, b: T) -> T {
        if let Some(v) = self.as_const(c) {
            return if v == 1 { a } else { b };
        }
        if a == b {
            return a;
        }
        let w = self.width(a);
        if w == 0 {
            if self.is_true(a) && self.is_false(b) {
                return c;
            }
            if self.is_false(a) && self.is_true(b) {
                return self.not(c);
            }
        }
        self.intern(Node::Ite(c, a, b), w)
    }

    pub fn extract(&mut self, hi: u8, lo: u8, a: T) -> T {
        let w = self.width(a);
        debug_assert!(hi < w && lo <= hi);
        let rw = hi - lo + 1;
        if lo == 0 && rw == w {
            return a;
        }
        match self.node(a) {
            Node::Const(v, _) => return self.konst(v >> lo, rw),
            Node::Extract { lo: l2, a: inner, .. } => return self.extract(hi + l2, lo + l2, inner),
            Node::Bin(Op2::Concat, x, y) => {
                let wy = self.width(y);
                if hi < wy {
                    return self.extract(hi, lo, y);
                }
                if lo >= wy {
                    return self.extract(hi - wy, lo - wy, x);
                }
            }
            Node::Zext { a: inner, .. } => {
                let wi = self.width(inner);
                if hi < wi {
                    return self.extract(hi, lo, inner);
                }
                if lo >= wi {
                    return self.konst(0, rw);
                }
            }
            _ => {}
        }
        self.intern(Node::Extract { hi, lo, a }, rw)
    }

    pub fn zext(&mut self, by: u8, a: T) -> T {
        if by == 0 {
            return a;
        }
        let w = self.width(a) + by;
        if let Some(v) = self.as_const(a) {
            return self.konst(v, w);
        }
        self.intern(Node::Zext { by, a }, w)
    }

    pub fn concat(&mut self, a: T, b: T) -> T {
        let (wa, wb) = (self.width(a), self.width(b));
        if let (Some(x), Some(y)) = (self.as_const(a), self.as_const(b)) {
            return self.konst((x << wb) | y, wa + wb);
        }
        if let (Node::Extract { hi: h1, lo: l1, a: x }, Node::Extract { hi: h2, lo: l2, a: y }) =
            (self.node(a), self.node(b))
        {
            if x == y && l1 == h2 + 1 {
                return self.extract(h1, l2, x);
            }
        }
        if self.as_const(a) == Some(0) {
            return self.zext(wa, b);
        }
        self.intern(Node::Bin(Op2::Concat, a, b), wa + wb)
    }

    pub fn bin(&mut self, op: Op2, mut a: T, mut b: T) -> T {
        if op == Op2::Concat {
            return self.concat(a, b);
        }
        let w = self.width(a);
        debug_assert_eq!(w, self.width(b), "{:?} width mismatch", op);
        let rw = match op {
            Op2::Eq | Op2::Ult | Op2::Ule | Op2::Slt | Op2::Sle => 0,
            _ => w,
        };
        if let (Some(x), Some(y)) = (self.as_const(a), self.as_const(b)) {
            return self.konst(eval_bin(op, w, w, x, y), rw);
        }
        if op.commutative() && (self.as_const(a).is_some() || (a > b && self.as_const(b).is_none())) {
            std::mem::swap(&mut a, &mut b);
        }
        let m = mask(w);
        let cb = self.as_const(b);
        match op {
            Op2::Add | Op2::Sub | Op2::Or | Op2::Xor | Op2::Shl | Op2::Lshr | Op2::Ashr if cb == Some(0) => return a,
            Op2::Sub | Op2::Xor if a == b => return self.konst(0, w),
            Op2::And | Op2::Or if a == b => return a,
            Op2::And if cb == Some(0) => return b,
            Op2::And if cb == Some(m) => return a,
            Op2::Or if cb == Some(m) => return b,
            Op2::Mul if cb == Some(0) => return b,
            Op2::Mul if cb == Some(1) => return a,
            Op2::Shl | Op2::Lshr if self.as_const(a) == Some(0) => return a,
            Op2::Eq | Op2::Ule | Op2::Sle if a == b => return self.tru(),
            Op2::Ult | Op2::Slt if a == b => return self.fls(),
            Op2::BAnd => {
                if cb == Some(0) {
                    return b;
                }
                if cb == Some(1) || a == b {
                    return a;
                }
            }
            Op2::BOr => {
                if cb == Some(1) {
                    return b;
                }
                if cb == Some(0) || a == b {
                    return a;
                }
            }
            _ => {}
        }
        self.intern(Node::Bin(op, a, b), rw)
    }

    pub fn eq(&mut self, a: T, b: T) -> T {
        self.bin(Op2::Eq, a, b)
    }

    pub fn ne(&mut self, a: T, b: T) -> T {
        let e = self.eq(a, b);
        self.not(e)
    }

    pub fn and(&mut self, a: T, b: T) -> T {
        self.bin(Op2::BAnd, a, b)
    }

    pub fn or(&mut self, a: T, b: T) -> T {
        self.bin(Op2::BOr, a, b)
    }

    pub fn and_all(&mut self, ts: impl IntoIterator<Item = T>) -> T {
        let mut acc = self.tru();
        for t in ts {
            acc = self.and(acc, t);
        }
        acc
    }

    pub fn or_all(&mut self, ts: impl IntoIterator<Item = T>) -> T {
        let mut acc = self.fls();
        for t in ts {
            acc = self.or(acc, t);
        }
        acc
    }

    /// Nodes reachable from `roots`, in topological order.
    pub fn reachable(&self, roots: &[T]) -> Vec<T> {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack: Vec<T> = roots.to_vec();
        while let Some(t) = stack.pop() {
            if std::mem::replace(&mut seen[t.index()], true) {
                continue;
            }
            match self.node(t) {
                Node::Const(..) | Node::Var(_) => {}
                Node::Not(a) | Node::Neg(a) | Node::Extract { a, .. } | Node::Zext { a, .. } => stack.push(a),
                Node::Bin(_, a, b) => stack.extend([a, b]),
                Node::Ite(c, a, b) => stack.extend([c, a, b]),
            }
        }
        (0..self.nodes.len()).filter(|i| seen[*i]).map(|i| T(i as u32)).collect()
    }

    fn eval_one(&self, t: T, vals: &[u64], var_vals: &[u64]) -> u64 {
        let w = self.width(t);
        match self.node(t) {
            Node::Const(v, _) => v,
            Node::Var(i) => var_vals[i as usize] & mask(w),
            Node::Not(a) => vals[a.index()] ^ 1,
            Node::Neg(a) => vals[a.index()].wrapping_neg() & mask(w),
            Node::Bin(op, a, b) => eval_bin(op, self.width(a), self.width(b), vals[a.index()], vals[b.index()]),
            Node::Ite(c, a, b) => {
                if vals[c.index()] == 1 {
                    vals[a.index()]
                } else {
                    vals[b.index()]
                }
            }
            Node::Extract { lo, a, .. } => (vals[a.index()] >> lo) & mask(w),
            Node::Zext { a, .. } => vals[a.index()],
        }
    }

    /// Renders an SMT-LIB v2 script asserting every term in `asserts`,
    /// followed by `check-sat` and a `get-value` over all variables.
    pub fn to_smtlib(&self, asserts: &[T], timeout_ms: Option<u64>) -> String {
        let mut out = String::new();
        out.push_str("(set-option :produce-models true)\n");
        if let Some(ms) = timeout_ms {
            let _ = writeln!(out, "(set-option :timeout {})", ms);
        }
        out.push_str("(set-logic QF_BV)\n");
        let order = self.reachable(asserts);
        let mut used_vars = Vec::new();
        for t in &order {
            if let Node::Var(i) = self.node(*t) {
                used_vars.push(i);
                let _ = writeln!(out, "(declare-fun {} () {})", self.vars[i as usize].name, sort(self.width(*t)));
            }
        }
        for t in &order {
            let body = match self.node(*t) {
                Node::Var(_) => continue,
                Node::Const(v, w) => const_text(v, w),
                Node::Not(a) => format!("(not {})", self.name(a)),
                Node::Neg(a) => format!("(bvneg {})", self.name(a)),
                Node::Bin(op, a, b) => format!("({} {} {})", op.smt(), self.name(a), self.name(b)),
                Node::Ite(c, a, b) => format!("(ite {} {} {})", self.name(c), self.name(a), self.name(b)),
                Node::Extract { hi, lo, a } => format!("((_ extract {} {}) {})", hi, lo, self.name(a)),
                Node::Zext { by, a } => format!("((_ zero_extend {}) {})", by, self.name(a)),
            };
            let _ = writeln!(out, "(define-fun t{} () {} {})", t.0, sort(self.width(*t)), body);
        }
        for a in asserts {
            let _ = writeln!(out, "(assert {})", self.name(*a));
        }
        out.push_str("(check-sat)\n");
        if !used_vars.is_empty() {
            let names: Vec<&str> = used_vars.iter().map(|i| self.vars[*i as usize].name.as_str()).collect();
            let _ = writeln!(out, "(get-value ({}))", names.join(" "));
        }
        out.push_str("(exit)\n");
        out
    }

    fn name(&self, t: T) -> String {
        match self.node(t) {
            Node::Var(i) => self.vars[i as usize].name.clone(),
            _ => format!("t{}", t.0),
        }
    }
}

fn sort(w: u8) -> String {
    if w == 0 {
        "Bool".into()
    } else {
        format!("(_ BitVec {})", w)
    }
}

fn const_text(v: u64, w: u8) -> String {
    if w == 0 {
        if v == 1 { "true" } else { "false" }.into()
    } else {
        format!("(_ bv{} {})", v, w)
    }
}

/// Evaluates a fixed set of roots under many variable assignments.
pub struct Evaluator<'a> {
    store: &'a TermStore,
    order: Vec<T>,
    vals: Vec<u64>,
}

impl<'a> Evaluator<'a> {
    pub fn new(store: &'a TermStore, roots: &[T]) -> Evaluator<'a> {
        Evaluator { store, order: store.reachable(roots), vals: vec![0; store.len()] }
    }

    /// Evaluates under `var_vals` (indexed by variable id) and returns the
    /// value of `t`, which must be among the roots' descendants.
    pub fn run(&mut self, var_vals: &[u64]) {
        for t in &self.order {
            let v = self.store.eval_one(*t, &self.vals, var_vals);
            self.vals[t.index()] = v;
        }
    }

    pub fn value(&self, t: T) -> u64 {
        self.vals[t.index()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_consing_shares_nodes() {
        let mut s = TermStore::new();
        let x = s.var("x", 64);
        let y = s.var("y", 64);
        let a = s.bin(Op2::Add, x, y);
        let b = s.bin(Op2::Add, y, x);
        assert_eq!(a, b);
        let c1 = s.konst(5, 64);
        let c2 = s.konst(5, 32);
        assert_ne!(c1, c2);
        assert_eq!(s.width(c2), 32);
    }

    #[test]
    fn byte_split_and_join_folds_back() {
        let mut s = TermStore::new();
        let x = s.var("x", 64);
        let bytes: Vec<T> = (0..8).map(|i| s.extract(8 * i + 7, 8 * i, x)).collect();
        let mut acc = bytes[0];
        for b in &bytes[1..] {
            acc = s.concat(*b, acc);
        }
        assert_eq!(acc, x);
    }

    #[test]
    fn constant_folding_matches_smt_semantics() {
        let mut s = TermStore::new();
        let a = s.konst(7, 64);
        let z = s.konst(0, 64);
        let d = s.bin(Op2::Udiv, a, z);
        assert_eq!(s.as_const(d), Some(u64::MAX));
        let r = s.bin(Op2::Urem, a, z);
        assert_eq!(s.as_const(r), Some(7));
        let m = s.konst(0x80, 8);
        let sh = s.konst(3, 8);
        let ar = s.bin(Op2::Ashr, m, sh);
        assert_eq!(s.as_const(ar), Some(0xf0));
    }

    #[test]
    fn evaluator_matches_folding() {
        let mut s = TermStore::new();
        let x = s.var("x", 32);
        let k = s.konst(9, 32);
        let sum = s.bin(Op2::Mul, x, k);
        let ext = s.zext(32, sum);
        let mut ev = Evaluator::new(&s, &[ext]);
        ev.run(&[0x1000_0001]);
        assert_eq!(ev.value(ext), 0x1000_0001u32.wrapping_mul(9) as u64);
    }

    #[test]
    fn smtlib_output_declares_used_vars() {
        let mut s = TermStore::new();
        let x = s.var("x", 8);
        let one = s.konst(1, 8);
        let e = s.eq(x, one);
        let text = s.to_smtlib(&[e], Some(100));
        assert!(text.contains("(declare-fun x () (_ BitVec 8))"));
        assert!(text.contains("(get-value (x))"));
    }
}
