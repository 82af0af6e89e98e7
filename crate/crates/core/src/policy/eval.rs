use super::ast::*;
use super::{AccessRequest, Decision, PolicyError};
use crate::state::HistoryEntry;
use crate::value::Value;

/// Read-only view a policy is evaluated against. Keys are relative to the
/// guarded contract's namespace.
pub trait EvalContext {
    fn height(&self) -> u64;
    fn read(&self, key: &str) -> Value;
    /// Every version of keys under `prefix` written in blocks `from..=to`,
    /// ordered by version.
    fn history(&self, prefix: &str, from: u64, to: u64) -> Vec<HistoryEntry>;
    /// Live (non-null) values under `prefix`, ordered by key.
    fn current(&self, prefix: &str) -> Vec<(String, Value)>;
}

/// Allow iff some rule matches the action and resource and its condition
/// holds. A condition that hits a type error counts as false.
pub fn evaluate(ast: &PolicyAst, req: &AccessRequest, ctx: &dyn EvalContext) -> Decision {
    let mut first_failure: Option<String> = None;
    for (i, rule) in ast.rules.iter().enumerate() {
        if rule.action != req.action || !rule.resource.matches(&req.resource) {
            continue;
        }
        let outcome = match &rule.condition {
            None => Ok(true),
            Some(cond) => eval_expr(cond, req, ctx),
        };
        match outcome {
            Ok(true) => return Decision::Allow,
            Ok(false) => {
                first_failure.get_or_insert_with(|| format!("rule {} condition is false", i + 1));
            }
            Err(e) => {
                first_failure.get_or_insert_with(|| format!("rule {} condition failed: {e}", i + 1));
            }
        }
    }
    Decision::Deny(first_failure.unwrap_or_else(|| "no matching rule".to_string()))
}

fn eval_expr(e: &Expr, req: &AccessRequest, ctx: &dyn EvalContext) -> Result<bool, PolicyError> {
    match e {
        Expr::Or(a, b) => Ok(eval_expr(a, req, ctx)? || eval_expr(b, req, ctx)?),
        Expr::And(a, b) => Ok(eval_expr(a, req, ctx)? && eval_expr(b, req, ctx)?),
        Expr::Not(a) => Ok(!eval_expr(a, req, ctx)?),
        Expr::Cmp(op, l, r) => {
            let (lv, rv) = (eval_term(l, req, ctx)?, eval_term(r, req, ctx)?);
            match op {
                CmpOp::Eq => Ok(lv == rv),
                CmpOp::Ne => Ok(lv != rv),
                _ => {
                    let (Value::Int(a), Value::Int(b)) = (&lv, &rv) else {
                        return Err(mismatch(format!("`{}` on {} and {}", op.symbol(), lv.type_name(), rv.type_name())));
                    };
                    Ok(match op {
                        CmpOp::Lt => a < b,
                        CmpOp::Le => a <= b,
                        CmpOp::Gt => a > b,
                        CmpOp::Ge => a >= b,
                        CmpOp::Eq | CmpOp::Ne => unreachable!(),
                    })
                }
            }
        }
        Expr::Term(t) => match eval_term(t, req, ctx)? {
            Value::Bool(b) => Ok(b),
            other => Err(mismatch(format!("condition evaluated to {}", other.type_name()))),
        },
    }
}

fn mismatch(msg: String) -> PolicyError {
    PolicyError::TypeMismatch(msg)
}

fn string_arg(t: &Term, req: &AccessRequest, ctx: &dyn EvalContext) -> Result<String, PolicyError> {
    match eval_term(t, req, ctx)? {
        Value::Str(s) => Ok(s),
        other => Err(mismatch(format!("expected string, got {}", other.type_name()))),
    }
}

fn int_arg(t: &Term, req: &AccessRequest, ctx: &dyn EvalContext) -> Result<i64, PolicyError> {
    match eval_term(t, req, ctx)? {
        Value::Int(v) => Ok(v),
        other => Err(mismatch(format!("expected int, got {}", other.type_name()))),
    }
}

fn eval_term(t: &Term, req: &AccessRequest, ctx: &dyn EvalContext) -> Result<Value, PolicyError> {
    Ok(match t {
        Term::Int(v) => Value::Int(*v),
        Term::Str(s) => Value::Str(s.clone()),
        Term::Bool(b) => Value::Bool(*b),
        Term::Null => Value::Null,
        Term::CallerId => Value::Str(req.caller_id.clone()),
        Term::CallerChain => Value::Str(req.caller_chain.clone()),
        Term::BlockHeight => Value::Int(req.height as i64),
        Term::State(k) => ctx.read(&string_arg(k, req, ctx)?),
        Term::Exists(k) => Value::Bool(!ctx.read(&string_arg(k, req, ctx)?).is_null()),
        Term::Count(p, a, b) => {
            let agg = AggExpr {
                kind: AggKind::Count,
                prefix: string_arg(p, req, ctx)?,
                range: Some((int_arg(a, req, ctx)?, int_arg(b, req, ctx)?)),
            };
            eval_aggregate(&agg, ctx)?
        }
        Term::Sum(p, range) => {
            let range = match range {
                Some((a, b)) => Some((int_arg(a, req, ctx)?, int_arg(b, req, ctx)?)),
                None => None,
            };
            eval_aggregate(&AggExpr { kind: AggKind::Sum, prefix: string_arg(p, req, ctx)?, range }, ctx)?
        }
        Term::Avg(p) => eval_aggregate(&AggExpr { kind: AggKind::Avg, prefix: string_arg(p, req, ctx)?, range: None }, ctx)?,
        Term::Arith(op, l, r) => {
            let (lv, rv) = (eval_term(l, req, ctx)?, eval_term(r, req, ctx)?);
            match (op, &lv, &rv) {
                (ArithOp::Add, Value::Int(a), Value::Int(b)) => {
                    Value::Int(a.checked_add(*b).ok_or_else(|| mismatch("integer overflow".into()))?)
                }
                (ArithOp::Sub, Value::Int(a), Value::Int(b)) => {
                    Value::Int(a.checked_sub(*b).ok_or_else(|| mismatch("integer overflow".into()))?)
                }
                (ArithOp::Add, Value::Str(a), Value::Str(b)) => Value::Str(format!("{a}{b}")),
                _ => return Err(mismatch(format!("arithmetic on {} and {}", lv.type_name(), rv.type_name()))),
            }
        }
    })
}

/// Sum, count or average over a prefix. Unranged aggregates run over current
/// values; ranged ones over historical versions written in the (clipped) block
/// range. Average is integer division and `Null` when nothing is counted.
pub fn eval_aggregate(agg: &AggExpr, ctx: &dyn EvalContext) -> Result<Value, PolicyError> {
    let values: Vec<Value> = match agg.range {
        None => ctx.current(&agg.prefix).into_iter().map(|(_, v)| v).collect(),
        Some((from, to)) => {
            let from = from.max(0) as u64;
            let to = to.min(ctx.height() as i64);
            if to < 0 || from > to as u64 {
                Vec::new()
            } else {
                ctx.history(&agg.prefix, from, to as u64).into_iter().map(|h| h.value).collect()
            }
        }
    };
    if agg.kind == AggKind::Count {
        return Ok(Value::Int(values.len() as i64));
    }
    let mut total: i128 = 0;
    let mut n: i128 = 0;
    for v in &values {
        match v {
            Value::Int(x) => {
                total += *x as i128;
                n += 1;
            }
            // Deletions in the version log carry no amount.
            Value::Null => {}
            other => {
                return Err(mismatch(format!("{} of non-numeric {} under {:?}", agg.kind.as_str(), other.type_name(), agg.prefix)))
            }
        }
    }
    let out = match agg.kind {
        AggKind::Sum => total,
        AggKind::Avg if n == 0 => return Ok(Value::Null),
        AggKind::Avg => total / n,
        AggKind::Count => unreachable!(),
    };
    i64::try_from(out).map(Value::Int).map_err(|_| mismatch("aggregate overflow".into()))
}
