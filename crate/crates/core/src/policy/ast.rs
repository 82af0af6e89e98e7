use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Read,
    Write,
    Invoke,
}

impl Action {
    pub fn as_str(&self) -> &'static str {
        match self {
            Action::Read => "read",
            Action::Write => "write",
            Action::Invoke => "invoke",
        }
    }
}

/// Dotted resource pattern. A trailing `*` matches one or more further segments.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ResourcePattern {
    pub segments: Vec<String>,
    pub wildcard: bool,
}

impl ResourcePattern {
    pub fn matches(&self, resource: &str) -> bool {
        let parts: Vec<&str> = resource.split('.').collect();
        if self.wildcard {
            parts.len() > self.segments.len() && self.segments.iter().zip(&parts).all(|(p, r)| p == r)
        } else {
            parts.len() == self.segments.len() && self.segments.iter().zip(&parts).all(|(p, r)| p == r)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Rule {
    pub action: Action,
    pub resource: ResourcePattern,
    pub condition: Option<Expr>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct PolicyAst {
    pub rules: Vec<Rule>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn symbol(&self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Expr {
    Or(Box<Expr>, Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Not(Box<Expr>),
    Cmp(CmpOp, Term, Term),
    /// A bare term used as a condition; must produce a boolean.
    Term(Term),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArithOp {
    Add,
    Sub,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Term {
    Int(i64),
    Str(String),
    Bool(bool),
    Null,
    CallerId,
    CallerChain,
    BlockHeight,
    State(Box<Term>),
    Exists(Box<Term>),
    Count(Box<Term>, Box<Term>, Box<Term>),
    Sum(Box<Term>, Option<(Box<Term>, Box<Term>)>),
    Avg(Box<Term>),
    Arith(ArithOp, Box<Term>, Box<Term>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AggKind {
    Sum,
    Count,
    Avg,
}

impl AggKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            AggKind::Sum => "sum",
            AggKind::Count => "count",
            AggKind::Avg => "avg",
        }
    }
}

/// Aggregate over a key prefix, optionally restricted to a block range
/// (in which case it runs over historical versions rather than current values).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AggExpr {
    pub kind: AggKind,
    pub prefix: String,
    pub range: Option<(i64, i64)>,
}

impl AggExpr {
    /// Resource name a read of this aggregate is authorized against,
    /// e.g. `agg.sum.winning_bids` for `sum("winning_bids.")`.
    pub fn resource(&self) -> String {
        format!("agg.{}.{}", self.kind.as_str(), self.prefix.trim_end_matches('.'))
    }
}
