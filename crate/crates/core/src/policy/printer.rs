use std::fmt::{self, Write as _};

use super::ast::*;

impl fmt::Display for PolicyAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, rule) in self.rules.iter().enumerate() {
            if i > 0 {
                f.write_char('\n')?;
            }
            write!(f, "{rule}")?;
        }
        Ok(())
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "allow {} on {}", self.action.as_str(), self.resource)?;
        if let Some(cond) = &self.condition {
            write!(f, " when {cond}")?;
        }
        f.write_char(';')
    }
}

impl fmt::Display for ResourcePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts: Vec<&str> = self.segments.iter().map(String::as_str).collect();
        if self.wildcard {
            parts.push("*");
        }
        f.write_str(&parts.join("."))
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&expr_at(self, 1))
    }
}

fn level(e: &Expr) -> u8 {
    match e {
        Expr::Or(..) => 1,
        Expr::And(..) => 2,
        _ => 3,
    }
}

/// Renders `e` for a slot that binds at least as tightly as `min`.
fn expr_at(e: &Expr, min: u8) -> String {
    let s = match e {
        Expr::Or(a, b) => format!("{} || {}", expr_at(a, 1), expr_at(b, 2)),
        Expr::And(a, b) => format!("{} && {}", expr_at(a, 2), expr_at(b, 3)),
        Expr::Not(a) => format!("!{}", expr_at(a, 3)),
        Expr::Cmp(op, l, r) => format!("{l} {} {r}", op.symbol()),
        Expr::Term(t) => t.to_string(),
    };
    if level(e) < min {
        format!("({s})")
    } else {
        s
    }
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Int(v) => write!(f, "{v}"),
            Term::Str(s) => f.write_str(&quote(s)),
            Term::Bool(b) => write!(f, "{b}"),
            Term::Null => f.write_str("null"),
            Term::CallerId => f.write_str("caller.id"),
            Term::CallerChain => f.write_str("caller.chain"),
            Term::BlockHeight => f.write_str("block.height"),
            Term::State(k) => write!(f, "state({k})"),
            Term::Exists(k) => write!(f, "exists({k})"),
            Term::Count(p, a, b) => write!(f, "count({p}, {a}, {b})"),
            Term::Sum(p, None) => write!(f, "sum({p})"),
            Term::Sum(p, Some((a, b))) => write!(f, "sum({p}, {a}, {b})"),
            Term::Avg(p) => write!(f, "avg({p})"),
            Term::Arith(op, l, r) => {
                let sym = match op {
                    ArithOp::Add => "+",
                    ArithOp::Sub => "-",
                };
                write!(f, "{l} {sym} {r}")
            }
        }
    }
}
