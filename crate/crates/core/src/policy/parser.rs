//! Recursive-descent parser and static type check for policy programs.

use super::ast::*;
use super::lexer::{tokenize, Spanned, Tok};
use super::ParseError;

const RESERVED_SEGMENTS: &[&str] = &["allow", "on", "when"];

pub fn parse_policy(src: &str) -> Result<PolicyAst, ParseError> {
    let toks = tokenize(src)?;
    let mut p = Parser { toks, pos: 0 };
    let mut rules = Vec::new();
    loop {
        rules.push(p.rule()?);
        if p.peek() == &Tok::Eof {
            break;
        }
    }
    Ok(PolicyAst { rules })
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

/// Static type of a term; `Any` covers values read from state at run time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ty {
    Int,
    Str,
    Bool,
    Null,
    Any,
}

impl Ty {
    fn name(self) -> &'static str {
        match self {
            Ty::Int => "int",
            Ty::Str => "string",
            Ty::Bool => "bool",
            Ty::Null => "null",
            Ty::Any => "any",
        }
    }

    fn fits(self, want: Ty) -> bool {
        self == want || self == Ty::Any
    }
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].tok
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error_at(&self, idx: usize, expected: &str) -> ParseError {
        let s = &self.toks[idx];
        ParseError { line: s.line, column: s.column, expected: expected.to_string(), found: s.tok.describe() }
    }

    fn error(&self, expected: &str) -> ParseError {
        self.error_at(self.pos, expected)
    }

    fn expect(&mut self, tok: Tok, expected: &str) -> Result<(), ParseError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            Err(self.error(expected))
        }
    }

    fn is_ident(&self, word: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == word)
    }

    fn keyword(&mut self, word: &str) -> Result<(), ParseError> {
        if self.is_ident(word) {
            self.bump();
            Ok(())
        } else {
            Err(self.error(&format!("`{word}`")))
        }
    }

    fn rule(&mut self) -> Result<Rule, ParseError> {
        self.keyword("allow")?;
        let action = match self.peek() {
            Tok::Ident(s) if s == "read" => Action::Read,
            Tok::Ident(s) if s == "write" => Action::Write,
            Tok::Ident(s) if s == "invoke" => Action::Invoke,
            _ => return Err(self.error("`read`, `write` or `invoke`")),
        };
        self.bump();
        self.keyword("on")?;
        let resource = self.resource()?;
        let condition = if self.is_ident("when") {
            self.bump();
            let start = self.pos;
            let e = self.expr()?;
            check_condition(&e).map_err(|msg| self.error_at(start, &msg))?;
            Some(e)
        } else {
            None
        };
        self.expect(Tok::Semi, "`;` or `when`")?;
        Ok(Rule { action, resource, condition })
    }

    fn resource(&mut self) -> Result<ResourcePattern, ParseError> {
        let mut segments = Vec::new();
        loop {
            match self.peek().clone() {
                Tok::Star => {
                    self.bump();
                    if *self.peek() == Tok::Dot {
                        return Err(self.error("`;` or `when` (a `*` segment must be last)"));
                    }
                    return Ok(ResourcePattern { segments, wildcard: true });
                }
                Tok::Ident(s) if !RESERVED_SEGMENTS.contains(&s.as_str()) => {
                    self.bump();
                    segments.push(s);
                }
                _ => return Err(self.error("resource segment (identifier or `*`)")),
            }
            if *self.peek() == Tok::Dot {
                self.bump();
            } else {
                return Ok(ResourcePattern { segments, wildcard: false });
            }
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.and()?;
        while *self.peek() == Tok::OrOr {
            self.bump();
            let rhs = self.and()?;
            lhs = Expr::Or(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.not()?;
        while *self.peek() == Tok::AndAnd {
            self.bump();
            let rhs = self.not()?;
            lhs = Expr::And(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn not(&mut self) -> Result<Expr, ParseError> {
        if *self.peek() == Tok::Bang {
            self.bump();
            return Ok(Expr::Not(Box::new(self.not()?)));
        }
        self.cmp()
    }

    fn cmp(&mut self) -> Result<Expr, ParseError> {
        if *self.peek() == Tok::LParen {
            self.bump();
            let e = self.expr()?;
            self.expect(Tok::RParen, "`)`")?;
            return Ok(e);
        }
        let lhs = self.term()?;
        let op = match self.peek() {
            Tok::EqEq => CmpOp::Eq,
            Tok::NotEq => CmpOp::Ne,
            Tok::Lt => CmpOp::Lt,
            Tok::Le => CmpOp::Le,
            Tok::Gt => CmpOp::Gt,
            Tok::Ge => CmpOp::Ge,
            _ => return Ok(Expr::Term(lhs)),
        };
        self.bump();
        let rhs = self.term()?;
        Ok(Expr::Cmp(op, lhs, rhs))
    }

    fn term(&mut self) -> Result<Term, ParseError> {
        let mut lhs = self.atom()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => ArithOp::Add,
                Tok::Minus => ArithOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.atom()?;
            lhs = Term::Arith(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn args(&mut self, min: usize, max: usize, what: &str) -> Result<Vec<Term>, ParseError> {
        self.expect(Tok::LParen, "`(`")?;
        let mut out = vec![self.term()?];
        while *self.peek() == Tok::Comma {
            if out.len() == max {
                return Err(self.error(&format!("`)` ({what})")));
            }
            self.bump();
            out.push(self.term()?);
        }
        if out.len() < min {
            return Err(self.error(&format!("`,` ({what})")));
        }
        self.expect(Tok::RParen, if out.len() < max { "`,` or `)`" } else { "`)`" })?;
        Ok(out)
    }

    fn atom(&mut self) -> Result<Term, ParseError> {
        let tok = self.peek().clone();
        let word = match tok {
            Tok::Int(v) => {
                self.bump();
                return Ok(Term::Int(v));
            }
            Tok::Str(s) => {
                self.bump();
                return Ok(Term::Str(s));
            }
            Tok::Ident(w) => w,
            _ => return Err(self.error("a term")),
        };
        let dotted = |p: &mut Parser, field: &str| -> Result<(), ParseError> {
            p.bump();
            p.expect(Tok::Dot, "`.`")?;
            p.keyword(field)
        };
        let call = matches!(self.peek_at(1), Tok::LParen);
        let term = match word.as_str() {
            "true" => {
                self.bump();
                Term::Bool(true)
            }
            "false" => {
                self.bump();
                Term::Bool(false)
            }
            "null" => {
                self.bump();
                Term::Null
            }
            "caller" => {
                self.bump();
                self.expect(Tok::Dot, "`.`")?;
                match self.peek() {
                    Tok::Ident(s) if s == "id" => {
                        self.bump();
                        Term::CallerId
                    }
                    Tok::Ident(s) if s == "chain" => {
                        self.bump();
                        Term::CallerChain
                    }
                    _ => return Err(self.error("`id` or `chain`")),
                }
            }
            "block" => {
                dotted(self, "height")?;
                Term::BlockHeight
            }
            "state" if call => {
                self.bump();
                let mut a = self.args(1, 1, "state takes one argument")?;
                Term::State(Box::new(a.remove(0)))
            }
            "exists" if call => {
                self.bump();
                let mut a = self.args(1, 1, "exists takes one argument")?;
                Term::Exists(Box::new(a.remove(0)))
            }
            "count" if call => {
                self.bump();
                let mut a = self.args(3, 3, "count takes prefix, from, to")?.into_iter();
                let (p, f, t) = (a.next().unwrap(), a.next().unwrap(), a.next().unwrap());
                Term::Count(Box::new(p), Box::new(f), Box::new(t))
            }
            "sum" if call => {
                self.bump();
                let at = self.pos;
                let a = self.args(1, 3, "sum takes prefix or prefix, from, to")?;
                let mut it = a.into_iter();
                let p = it.next().unwrap();
                match (it.next(), it.next()) {
                    (None, None) => Term::Sum(Box::new(p), None),
                    (Some(f), Some(t)) => Term::Sum(Box::new(p), Some((Box::new(f), Box::new(t)))),
                    _ => return Err(self.error_at(at, "sum(prefix) or sum(prefix, from, to)")),
                }
            }
            "avg" if call => {
                self.bump();
                let mut a = self.args(1, 1, "avg takes one argument")?;
                Term::Avg(Box::new(a.remove(0)))
            }
            _ => return Err(self.error("a term")),
        };
        Ok(term)
    }
}

fn check_condition(e: &Expr) -> Result<(), String> {
    match e {
        Expr::Or(a, b) | Expr::And(a, b) => {
            check_condition(a)?;
            check_condition(b)
        }
        Expr::Not(a) => check_condition(a),
        Expr::Cmp(op, l, r) => {
            let (lt, rt) = (type_of(l)?, type_of(r)?);
            match op {
                CmpOp::Eq | CmpOp::Ne => Ok(()),
                _ if lt.fits(Ty::Int) && rt.fits(Ty::Int) => Ok(()),
                _ => Err(format!("integer operands for `{}` (found {} and {})", op.symbol(), lt.name(), rt.name())),
            }
        }
        Expr::Term(t) => match type_of(t)? {
            Ty::Bool | Ty::Any => Ok(()),
            other => Err(format!("boolean condition (found {})", other.name())),
        },
    }
}

fn want(t: &Term, ty: Ty, what: &str) -> Result<(), String> {
    let got = type_of(t)?;
    if got.fits(ty) {
        Ok(())
    } else {
        Err(format!("{} {what} (found {})", ty.name(), got.name()))
    }
}

fn type_of(t: &Term) -> Result<Ty, String> {
    Ok(match t {
        Term::Int(_) | Term::BlockHeight => Ty::Int,
        Term::Str(_) | Term::CallerId | Term::CallerChain => Ty::Str,
        Term::Bool(_) => Ty::Bool,
        Term::Null => Ty::Null,
        Term::State(k) => {
            want(k, Ty::Str, "state key")?;
            Ty::Any
        }
        Term::Exists(k) => {
            want(k, Ty::Str, "key for exists")?;
            Ty::Bool
        }
        Term::Count(p, f, to) => {
            want(p, Ty::Str, "prefix for count")?;
            want(f, Ty::Int, "lower height for count")?;
            want(to, Ty::Int, "upper height for count")?;
            Ty::Int
        }
        Term::Sum(p, range) => {
            want(p, Ty::Str, "prefix for sum")?;
            if let Some((f, to)) = range {
                want(f, Ty::Int, "lower height for sum")?;
                want(to, Ty::Int, "upper height for sum")?;
            }
            Ty::Int
        }
        Term::Avg(p) => {
            want(p, Ty::Str, "prefix for avg")?;
            Ty::Any
        }
        Term::Arith(op, l, r) => {
            let (lt, rt) = (type_of(l)?, type_of(r)?);
            match (op, lt, rt) {
                (_, Ty::Int, Ty::Int) => Ty::Int,
                (ArithOp::Sub, a, b) if a.fits(Ty::Int) && b.fits(Ty::Int) => Ty::Int,
                (ArithOp::Add, Ty::Str, Ty::Str) => Ty::Str,
                (ArithOp::Add, Ty::Any, Ty::Int | Ty::Str | Ty::Any) | (ArithOp::Add, Ty::Int | Ty::Str, Ty::Any) => {
                    Ty::Any
                }
                _ => {
                    let sym = if *op == ArithOp::Add { "+" } else { "-" };
                    return Err(format!("matching int or string operands for `{sym}` (found {} and {})", lt.name(), rt.name()));
                }
            }
        }
    })
}
