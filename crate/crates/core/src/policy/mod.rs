//! Declarative access-control policies enforced by the system contract.
//!
//! ```text
//! allow write on bids.* when state("auction.status") == "open"
//!     && !exists("bids." + caller.id);
//! ```
//!
//! Rules are purely permissive and evaluation is deny-by-default.

mod ast;
mod eval;
mod lexer;
mod parser;
mod printer;

use thiserror::Error;

pub use ast::{Action, AggExpr, AggKind, ArithOp, CmpOp, Expr, PolicyAst, ResourcePattern, Rule, Term};
pub use eval::{eval_aggregate, evaluate, EvalContext};
pub use parser::parse_policy;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("parse error at {line}:{column}: expected {expected}, found {found}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub expected: String,
    pub found: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessRequest {
    pub caller_id: String,
    pub caller_chain: String,
    pub action: Action,
    /// Dotted path: a key relative to the contract, a method name, or an
    /// aggregate resource such as `agg.sum.bids`.
    pub resource: String,
    pub height: u64,
    pub args: Vec<crate::value::Value>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decision {
    Allow,
    Deny(String),
}

impl Decision {
    pub fn is_allow(&self) -> bool {
        matches!(self, Decision::Allow)
    }
}

#[cfg(test)]
pub(crate) mod testing {
    use std::collections::BTreeMap;

    use super::*;
    use crate::state::{HistoryEntry, Version};
    use crate::value::Value;

    /// Flat in-memory context: a version log replayed to answer reads.
    #[derive(Default)]
    pub struct MemCtx {
        pub height: u64,
        pub log: Vec<HistoryEntry>,
    }

    impl MemCtx {
        pub fn put(&mut self, key: &str, value: Value, height: u64) {
            let index = self.log.iter().filter(|h| h.version.height == height).count() as u32;
            self.log.push(HistoryEntry { key: key.into(), value, version: Version { height, index } });
        }
    }

    impl EvalContext for MemCtx {
        fn height(&self) -> u64 {
            self.height
        }

        fn read(&self, key: &str) -> Value {
            self.log.iter().rev().find(|h| h.key == key).map(|h| h.value.clone()).unwrap_or(Value::Null)
        }

        fn history(&self, prefix: &str, from: u64, to: u64) -> Vec<HistoryEntry> {
            let mut out: Vec<_> = self
                .log
                .iter()
                .filter(|h| h.key.starts_with(prefix) && (from..=to).contains(&h.version.height))
                .cloned()
                .collect();
            out.sort_by_key(|h| h.version);
            out
        }

        fn current(&self, prefix: &str) -> Vec<(String, Value)> {
            let mut latest = BTreeMap::new();
            for h in &self.log {
                if h.key.starts_with(prefix) {
                    latest.insert(h.key.clone(), h.value.clone());
                }
            }
            latest.into_iter().filter(|(_, v)| !v.is_null()).collect()
        }
    }

    pub fn req(caller: &str, action: Action, resource: &str, height: u64) -> AccessRequest {
        AccessRequest {
            caller_id: caller.into(),
            caller_chain: "chainB".into(),
            action,
            resource: resource.into(),
            height,
            args: vec![],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::testing::*;
    use super::*;
    use crate::value::Value;
    use proptest::prelude::*;

    const P1: &str = r#"allow write on bids.* when state("auction.status") == "open" && !exists("bids." + caller.id) && block.height <= state("auction.close_height");"#;

    #[test]
    fn empty_policy_denies() {
        let ast = PolicyAst::default();
        let d = evaluate(&ast, &req("alice", Action::Read, "x", 1), &MemCtx::default());
        assert_eq!(d, Decision::Deny("no matching rule".into()));
    }

    #[test]
    fn bid_policy_truth_table() {
        let ast = parse_policy(P1).unwrap();
        // Enumerate the three conjuncts independently; only all-true allows.
        for mask in 0u8..8 {
            let (open, fresh, in_time) = (mask & 1 != 0, mask & 2 != 0, mask & 4 != 0);
            let mut ctx = MemCtx { height: if in_time { 90 } else { 101 }, ..Default::default() };
            ctx.put("auction.status", Value::from(if open { "open" } else { "closed" }), 1);
            ctx.put("auction.close_height", Value::Int(100), 1);
            if !fresh {
                ctx.put("bids.alice", Value::Int(5), 2);
            }
            let d = evaluate(&ast, &req("alice", Action::Write, "bids.alice", ctx.height), &ctx);
            assert_eq!(d.is_allow(), open && fresh && in_time, "mask {mask}");
        }
    }

    #[test]
    fn bid_policy_second_bid_denied() {
        let ast = parse_policy(P1).unwrap();
        let mut ctx = MemCtx { height: 90, ..Default::default() };
        ctx.put("auction.status", Value::from("open"), 1);
        ctx.put("auction.close_height", Value::Int(100), 1);
        assert!(evaluate(&ast, &req("alice", Action::Write, "bids.alice", 90), &ctx).is_allow());
        ctx.put("bids.alice", Value::Int(10), 5);
        assert!(!evaluate(&ast, &req("alice", Action::Write, "bids.alice", 90), &ctx).is_allow());
        // Another bidder is unaffected.
        assert!(evaluate(&ast, &req("bob", Action::Write, "bids.bob", 90), &ctx).is_allow());
    }

    #[test]
    fn type_error_makes_rule_false() {
        // close_height missing: `<=` on int and null fails, so the rule is false.
        let ast = parse_policy(P1).unwrap();
        let mut ctx = MemCtx { height: 3, ..Default::default() };
        ctx.put("auction.status", Value::from("open"), 1);
        let d = evaluate(&ast, &req("alice", Action::Write, "bids.alice", 3), &ctx);
        assert!(matches!(d, Decision::Deny(ref r) if r.contains("failed")), "{d:?}");
    }

    #[test]
    fn aggregates() {
        let mut ctx = MemCtx { height: 10, ..Default::default() };
        ctx.put("bids.a", Value::Int(3), 2);
        ctx.put("bids.b", Value::Int(7), 3);
        let sum = AggExpr { kind: AggKind::Sum, prefix: "bids.".into(), range: None };
        assert_eq!(eval_aggregate(&sum, &ctx).unwrap(), Value::Int(10));
        let avg = AggExpr { kind: AggKind::Avg, prefix: "nothing.".into(), range: None };
        assert_eq!(eval_aggregate(&avg, &ctx).unwrap(), Value::Null);
        ctx.put("auctions.1", Value::from("open"), 6);
        ctx.put("auctions.2", Value::from("open"), 9);
        ctx.put("auctions.0", Value::from("open"), 1);
        let count = AggExpr { kind: AggKind::Count, prefix: "auctions.".into(), range: Some((5, 10)) };
        assert_eq!(eval_aggregate(&count, &ctx).unwrap(), Value::Int(2));
        let bad = AggExpr { kind: AggKind::Sum, prefix: "auctions.".into(), range: None };
        assert!(matches!(eval_aggregate(&bad, &ctx), Err(PolicyError::TypeMismatch(_))));
        // Range below zero clips; reversed range is empty.
        let clipped = AggExpr { kind: AggKind::Count, prefix: "auctions.".into(), range: Some((-100, 10)) };
        assert_eq!(eval_aggregate(&clipped, &ctx).unwrap(), Value::Int(3));
        let empty = AggExpr { kind: AggKind::Count, prefix: "auctions.".into(), range: Some((8, 2)) };
        assert_eq!(eval_aggregate(&empty, &ctx).unwrap(), Value::Int(0));
    }

    #[test]
    fn aggregate_rule_exposes_only_scalar() {
        let ast = parse_policy(r#"allow read on agg.sum.winning_bids when caller.id == "auditor";"#).unwrap();
        let ctx = MemCtx::default();
        let agg = AggExpr { kind: AggKind::Sum, prefix: "winning_bids.".into(), range: None };
        assert!(evaluate(&ast, &req("auditor", Action::Read, &agg.resource(), 1), &ctx).is_allow());
        assert!(!evaluate(&ast, &req("auditor", Action::Read, "winning_bids.alice", 1), &ctx).is_allow());
        assert!(!evaluate(&ast, &req("mallory", Action::Read, &agg.resource(), 1), &ctx).is_allow());
    }

    #[test]
    fn resource_matching() {
        let p = |s: &str| parse_policy(&format!("allow read on {s};")).unwrap().rules[0].resource.clone();
        assert!(p("*").matches("a"));
        assert!(p("*").matches("a.b.c"));
        assert!(p("bids.*").matches("bids.alice"));
        assert!(p("bids.*").matches("bids.alice.x"));
        assert!(!p("bids.*").matches("bids"));
        assert!(!p("bids.*").matches("bidsx.alice"));
        assert!(p("bids.alice").matches("bids.alice"));
        assert!(!p("bids.alice").matches("bids.alice.x"));
    }

    // ---- generated programs ----

    fn ident() -> impl Strategy<Value = String> {
        "[a-z_][a-z0-9_]{0,6}".prop_filter("reserved", |s| !["allow", "on", "when"].contains(&s.as_str()))
    }

    fn atom_term() -> BoxedStrategy<Term> {
        let leaf = prop_oneof![
            (0i64..1_000_000).prop_map(Term::Int),
            "[ -~]{0,8}".prop_map(Term::Str),
            any::<bool>().prop_map(Term::Bool),
            Just(Term::Null),
            Just(Term::CallerId),
            Just(Term::CallerChain),
            Just(Term::BlockHeight),
        ];
        leaf.prop_recursive(2, 8, 3, |inner| {
            prop_oneof![
                inner.clone().prop_map(|t| Term::State(Box::new(t))),
                inner.clone().prop_map(|t| Term::Exists(Box::new(t))),
                (inner.clone(), inner.clone(), inner.clone())
                    .prop_map(|(a, b, c)| Term::Count(Box::new(a), Box::new(b), Box::new(c))),
                inner.clone().prop_map(|t| Term::Sum(Box::new(t), None)),
                (inner.clone(), inner.clone(), inner.clone())
                    .prop_map(|(a, b, c)| Term::Sum(Box::new(a), Some((Box::new(b), Box::new(c))))),
                inner.prop_map(|t| Term::Avg(Box::new(t))),
            ]
        })
        .boxed()
    }

    /// Left-nested arithmetic chains, the only shape the grammar produces.
    fn term() -> impl Strategy<Value = Term> {
        (atom_term(), proptest::collection::vec((any::<bool>(), atom_term()), 0..3)).prop_map(|(first, rest)| {
            rest.into_iter().fold(first, |acc, (add, t)| {
                Term::Arith(if add { ArithOp::Add } else { ArithOp::Sub }, Box::new(acc), Box::new(t))
            })
        })
    }

    fn expr() -> impl Strategy<Value = Expr> {
        let ops = prop_oneof![
            Just(CmpOp::Eq),
            Just(CmpOp::Ne),
            Just(CmpOp::Lt),
            Just(CmpOp::Le),
            Just(CmpOp::Gt),
            Just(CmpOp::Ge)
        ];
        let leaf = prop_oneof![
            (ops, term(), term()).prop_map(|(op, l, r)| Expr::Cmp(op, l, r)),
            term().prop_map(Expr::Term),
        ];
        leaf.prop_recursive(4, 24, 2, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Or(Box::new(a), Box::new(b))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::And(Box::new(a), Box::new(b))),
                inner.prop_map(|a| Expr::Not(Box::new(a))),
            ]
        })
    }

    fn rule() -> impl Strategy<Value = Rule> {
        let action = prop_oneof![Just(Action::Read), Just(Action::Write), Just(Action::Invoke)];
        let resource = (proptest::collection::vec(ident(), 0..3), any::<bool>()).prop_map(|(mut segs, wild)| {
            if segs.is_empty() && !wild {
                segs.push("x".into());
            }
            ResourcePattern { segments: segs, wildcard: wild }
        });
        (action, resource, proptest::option::of(expr()))
            .prop_map(|(action, resource, condition)| Rule { action, resource, condition })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        /// Printing any parser-shaped program and re-parsing either fails the
        /// type check or reproduces it; the printed form is a fixpoint.
        #[test]
        fn print_parse_fixpoint(rules in proptest::collection::vec(rule(), 1..4)) {
            let ast = PolicyAst { rules };
            let text = ast.to_string();
            if let Ok(parsed) = parse_policy(&text) {
                prop_assert_eq!(&parsed, &ast);
                prop_assert_eq!(parsed.to_string(), text);
            }
        }

        #[test]
        fn parser_never_panics(src in "[ -~\n]{0,80}") {
            let _ = parse_policy(&src);
        }

        /// Adding a rule never turns an Allow into a Deny.
        #[test]
        fn adding_rules_is_monotone(base in proptest::collection::vec(rule(), 0..3), extra in rule(),
                                    caller in ident(), res in ident(), h in 0u64..50) {
            let mut ctx = MemCtx { height: h, ..Default::default() };
            ctx.put("k", Value::Int(1), 0);
            let a = PolicyAst { rules: base.clone() };
            let mut b = a.clone();
            b.rules.push(extra);
            for action in [Action::Read, Action::Write, Action::Invoke] {
                let r = req(&caller, action, &res, h);
                if evaluate(&a, &r, &ctx).is_allow() {
                    prop_assert!(evaluate(&b, &r, &ctx).is_allow());
                }
                let empty = PolicyAst::default();
                prop_assert!(!evaluate(&empty, &r, &ctx).is_allow());
            }
        }
    }
}
