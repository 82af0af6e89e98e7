//! Policy-side fixtures: a flat state log to evaluate against, the policy
//! files, and a type-directed random program generator.

use std::path::Path;

use interchain::policy::{AccessRequest, Action, ArithOp, CmpOp, EvalContext, Expr, PolicyAst, ResourcePattern, Rule, Term};
use interchain::state::{HistoryEntry, Version};
use interchain::Value;
use rand::Rng;

pub fn policy_file(name: &str) -> String {
    std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("policies").join(name)).unwrap()
}

/// State as an append-only list of (key, value, height) writes.
#[derive(Default)]
pub struct Log {
    pub height: u64,
    pub writes: Vec<HistoryEntry>,
}

impl Log {
    pub fn at(height: u64) -> Self {
        Self { height, writes: Vec::new() }
    }

    pub fn put(&mut self, key: &str, value: impl Into<Value>, height: u64) -> &mut Self {
        let index = self.writes.iter().filter(|h| h.version.height == height).count() as u32;
        self.writes.push(HistoryEntry { key: key.into(), value: value.into(), version: Version { height, index } });
        self
    }
}

impl EvalContext for Log {
    fn height(&self) -> u64 {
        self.height
    }

    fn read(&self, key: &str) -> Value {
        let mut latest: Option<&HistoryEntry> = None;
        for h in self.writes.iter().filter(|h| h.key == key) {
            if latest.is_none_or(|l| h.version > l.version) {
                latest = Some(h);
            }
        }
        latest.map_or(Value::Null, |h| h.value.clone())
    }

    fn history(&self, prefix: &str, from: u64, to: u64) -> Vec<HistoryEntry> {
        let mut out: Vec<_> =
            self.writes.iter().filter(|h| h.key.starts_with(prefix) && h.version.height >= from && h.version.height <= to).cloned().collect();
        out.sort_by_key(|h| h.version);
        out
    }

    fn current(&self, prefix: &str) -> Vec<(String, Value)> {
        let keys: std::collections::BTreeSet<_> = self.writes.iter().filter(|h| h.key.starts_with(prefix)).map(|h| h.key.clone()).collect();
        keys.into_iter().map(|k| { let v = self.read(&k); (k, v) }).filter(|(_, v)| !v.is_null()).collect()
    }
}

pub fn request(caller: &str, chain: &str, action: Action, resource: &str, height: u64) -> AccessRequest {
    AccessRequest {
        caller_id: caller.into(),
        caller_chain: chain.into(),
        action,
        resource: resource.into(),
        height,
        args: vec![],
    }
}

// ---- generated programs ----

fn ident<R: Rng>(rng: &mut R) -> String {
    const RESERVED: [&str; 13] =
        ["allow", "on", "when", "read", "write", "invoke", "true", "false", "null", "caller", "block", "state", "exists"];
    loop {
        let len = rng.gen_range(1..6);
        let s: String = (0..len)
            .map(|i| {
                let pool: &[u8] = if i == 0 { b"abcdefghijklmnopqrstuvwxyz_" } else { b"abcdefghijklmnopqrstuvwxyz_0123456789" };
                pool[rng.gen_range(0..pool.len())] as char
            })
            .collect();
        if !RESERVED.contains(&s.as_str()) && !["count", "sum", "avg"].contains(&s.as_str()) {
            return s;
        }
    }
}

fn string_lit<R: Rng>(rng: &mut R) -> String {
    let pool = b"abc xyz.019_\"\\#;*";
    (0..rng.gen_range(0..8)).map(|_| pool[rng.gen_range(0..pool.len())] as char).collect()
}

/// Terms of static type int: no arithmetic on the right of an operator.
fn int_atom<R: Rng>(rng: &mut R, depth: u32) -> Term {
    match if depth == 0 { rng.gen_range(0..2) } else { rng.gen_range(0..4) } {
        0 => Term::Int(rng.gen_range(0..1_000_000)),
        1 => Term::BlockHeight,
        2 => Term::Count(Box::new(str_term(rng, depth - 1)), Box::new(int_term(rng, depth - 1)), Box::new(int_term(rng, depth - 1))),
        _ => {
            let range = rng.gen_bool(0.5).then(|| (Box::new(int_term(rng, depth - 1)), Box::new(int_term(rng, depth - 1))));
            Term::Sum(Box::new(str_term(rng, depth - 1)), range)
        }
    }
}

fn int_term<R: Rng>(rng: &mut R, depth: u32) -> Term {
    let mut t = int_atom(rng, depth);
    for _ in 0..rng.gen_range(0..3) {
        let op = if rng.gen_bool(0.5) { ArithOp::Add } else { ArithOp::Sub };
        t = Term::Arith(op, Box::new(t), Box::new(int_atom(rng, depth.saturating_sub(1))));
    }
    t
}

fn str_atom<R: Rng>(rng: &mut R) -> Term {
    match rng.gen_range(0..3) {
        0 => Term::Str(string_lit(rng)),
        1 => Term::CallerId,
        _ => Term::CallerChain,
    }
}

fn str_term<R: Rng>(rng: &mut R, _depth: u32) -> Term {
    let mut t = str_atom(rng);
    for _ in 0..rng.gen_range(0..3) {
        t = Term::Arith(ArithOp::Add, Box::new(t), Box::new(str_atom(rng)));
    }
    t
}

/// Terms usable as a whole condition: bool or dynamically typed.
fn bool_term<R: Rng>(rng: &mut R, depth: u32) -> Term {
    match rng.gen_range(0..4) {
        0 => Term::Bool(rng.gen_bool(0.5)),
        1 => Term::Exists(Box::new(str_term(rng, depth))),
        2 => Term::State(Box::new(str_term(rng, depth))),
        _ => Term::Avg(Box::new(str_term(rng, depth))),
    }
}

fn any_term<R: Rng>(rng: &mut R, depth: u32) -> Term {
    match rng.gen_range(0..4) {
        0 => int_term(rng, depth),
        1 => str_term(rng, depth),
        2 => bool_term(rng, depth),
        _ => Term::Null,
    }
}

fn expr<R: Rng>(rng: &mut R, depth: u32) -> Expr {
    let leaf = depth == 0 || rng.gen_bool(0.3);
    if leaf {
        return match rng.gen_range(0..3) {
            0 => {
                let ops = [CmpOp::Lt, CmpOp::Le, CmpOp::Gt, CmpOp::Ge];
                Expr::Cmp(ops[rng.gen_range(0..4)], int_term(rng, 2), int_term(rng, 2))
            }
            1 => {
                let op = if rng.gen_bool(0.5) { CmpOp::Eq } else { CmpOp::Ne };
                Expr::Cmp(op, any_term(rng, 2), any_term(rng, 2))
            }
            _ => Expr::Term(bool_term(rng, 2)),
        };
    }
    match rng.gen_range(0..3) {
        0 => Expr::Or(Box::new(expr(rng, depth - 1)), Box::new(expr(rng, depth - 1))),
        1 => Expr::And(Box::new(expr(rng, depth - 1)), Box::new(expr(rng, depth - 1))),
        _ => Expr::Not(Box::new(expr(rng, depth - 1))),
    }
}

/// A well-typed program of one to four rules.
pub fn random_program<R: Rng>(rng: &mut R) -> PolicyAst {
    let rules = (0..rng.gen_range(1..5))
        .map(|_| {
            let action = [Action::Read, Action::Write, Action::Invoke][rng.gen_range(0..3)];
            let mut segments: Vec<String> = (0..rng.gen_range(0..4)).map(|_| ident(rng)).collect();
            let wildcard = segments.is_empty() || rng.gen_bool(0.4);
            if segments.is_empty() && !wildcard {
                segments.push(ident(rng));
            }
            let condition = rng.gen_bool(0.8).then(|| expr(rng, 4));
            Rule { action, resource: ResourcePattern { segments, wildcard }, condition }
        })
        .collect();
    PolicyAst { rules }
}

/// Byte-level damage to program text: deletions, insertions and swaps.
pub fn mutate<R: Rng>(rng: &mut R, src: &str) -> String {
    let mut b = src.as_bytes().to_vec();
    for _ in 0..rng.gen_range(1..4) {
        match rng.gen_range(0..3) {
            0 if !b.is_empty() => {
                b.remove(rng.gen_range(0..b.len()));
            }
            1 => {
                let pool = b"()\";.*=!&|<>+- \nabz09#";
                b.insert(rng.gen_range(0..=b.len()), pool[rng.gen_range(0..pool.len())]);
            }
            _ if b.len() > 1 => {
                let (i, j) = (rng.gen_range(0..b.len()), rng.gen_range(0..b.len()));
                b.swap(i, j);
            }
            _ => {}
        }
    }
    String::from_utf8_lossy(&b).into_owned()
}

