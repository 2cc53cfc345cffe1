//! A small arithmetic language for coefficient and payoff formulas.
//!
//! Grammar (usual precedence, `^` right-associative):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?
//! atom   := number | name | name '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! Functions: `exp`, `log`, `sqrt`, `abs` (one argument), `min`, `max` (two or
//! more). Variable names are fixed when the expression is parsed and bound to
//! slots of the evaluation slice.
//!
//! ```
//! use tameflow::expr::Expr;
//! let e = Expr::parse("0.1 + 0.3 * 100 / (p1 + 100)", &["p0", "p1", "t"]).unwrap();
//! assert!((e.eval(&[1.0, 100.0, 0.0]) - 0.25).abs() < 1e-15);
//! ```

use std::fmt;

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Var(usize),
    Neg(Box<Node>),
    Bin(Op, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Func {
    Exp,
    Log,
    Sqrt,
    Abs,
    Min,
    Max,
}

/// A parsed formula over a fixed list of variables.
#[derive(Clone, PartialEq)]
pub struct Expr {
    source: String,
    root: Node,
    used: Vec<bool>,
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({:?})", self.source)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

impl Expr {
    pub fn parse(source: &str, vars: &[&str]) -> Result<Expr> {
        let tokens = lex(source)?;
        let mut p = Parser {
            tokens,
            pos: 0,
            vars,
            used: vec![false; vars.len()],
        };
        let root = p.expr()?;
        if p.pos != p.tokens.len() {
            return Err(invalid(format!("unexpected trailing input in {source:?}")));
        }
        Ok(Expr {
            source: source.trim().to_string(),
            root,
            used: p.used,
        })
    }

    /// A constant expression.
    pub fn constant(value: f64, nvars: usize) -> Expr {
        Expr {
            source: format!("{value}"),
            root: Node::Num(value),
            used: vec![false; nvars],
        }
    }

    pub fn eval(&self, vars: &[f64]) -> f64 {
        eval(&self.root, vars)
    }

    /// Whether variable slot `k` appears in the formula.
    pub fn uses(&self, k: usize) -> bool {
        self.used.get(k).copied().unwrap_or(false)
    }

    /// The value when the formula has no variables.
    pub fn as_constant(&self) -> Option<f64> {
        if self.used.iter().any(|&u| u) {
            None
        } else {
            Some(self.eval(&vec![0.0; self.used.len()]))
        }
    }

    pub fn source(&self) -> &str {
        &self.source
    }
}

fn eval(node: &Node, vars: &[f64]) -> f64 {
    match node {
        Node::Num(v) => *v,
        Node::Var(k) => vars[*k],
        Node::Neg(a) => -eval(a, vars),
        Node::Bin(op, a, b) => {
            let (x, y) = (eval(a, vars), eval(b, vars));
            match op {
                Op::Add => x + y,
                Op::Sub => x - y,
                Op::Mul => x * y,
                Op::Div => x / y,
                Op::Pow => x.powf(y),
            }
        }
        Node::Call(f, args) => {
            let mut vals = args.iter().map(|a| eval(a, vars));
            match f {
                Func::Exp => vals.next().unwrap().exp(),
                Func::Log => vals.next().unwrap().ln(),
                Func::Sqrt => vals.next().unwrap().sqrt(),
                Func::Abs => vals.next().unwrap().abs(),
                Func::Min => vals.fold(f64::INFINITY, f64::min),
                Func::Max => vals.fold(f64::NEG_INFINITY, f64::max),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
}

fn lex(src: &str) -> Result<Vec<Tok>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let v = text
                .parse::<f64>()
                .map_err(|_| invalid(format!("bad number {text:?}")))?;
            out.push(Tok::Num(v));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect()));
        } else if "+-*/^(),".contains(c) {
            out.push(Tok::Sym(c));
            i += 1;
        } else {
            return Err(invalid(format!("unexpected character {c:?} in {src:?}")));
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Tok>,
    pos: usize,
    vars: &'a [&'a str],
    used: Vec<bool>,
}

impl Parser<'_> {
    fn peek_sym(&self, c: char) -> bool {
        matches!(self.tokens.get(self.pos), Some(Tok::Sym(s)) if *s == c)
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.peek_sym(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(invalid(format!("expected {c:?}")))
        }
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.peek_sym('+') {
                Op::Add
            } else if self.peek_sym('-') {
                Op::Sub
            } else {
                return Ok(lhs);
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.peek_sym('*') {
                Op::Mul
            } else if self.peek_sym('/') {
                Op::Div
            } else {
                return Ok(lhs);
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Node> {
        if self.peek_sym('-') {
            self.pos += 1;
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if self.peek_sym('^') {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Node::Bin(Op::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        match self.tokens.get(self.pos).cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Node::Num(v))
            }
            Some(Tok::Sym('(')) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                if self.peek_sym('(') {
                    self.pos += 1;
                    let func = match name.as_str() {
                        "exp" => Func::Exp,
                        "log" => Func::Log,
                        "sqrt" => Func::Sqrt,
                        "abs" => Func::Abs,
                        "min" => Func::Min,
                        "max" => Func::Max,
                        _ => return Err(invalid(format!("unknown function {name:?}"))),
                    };
                    let mut args = vec![self.expr()?];
                    while self.peek_sym(',') {
                        self.pos += 1;
                        args.push(self.expr()?);
                    }
                    self.expect(')')?;
                    let ok = match func {
                        Func::Min | Func::Max => args.len() >= 2,
                        _ => args.len() == 1,
                    };
                    if !ok {
                        return Err(invalid(format!("wrong number of arguments to {name}")));
                    }
                    Ok(Node::Call(func, args))
                } else {
                    match self.vars.iter().position(|v| *v == name) {
                        Some(k) => {
                            self.used[k] = true;
                            Ok(Node::Var(k))
                        }
                        None => Err(invalid(format!(
                            "unknown variable {name:?} (allowed: {})",
                            self.vars.join(", ")
                        ))),
                    }
                }
            }
            Some(tok) => Err(invalid(format!("unexpected token {tok:?}"))),
            None => Err(invalid("unexpected end of expression")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const VARS: &[&str] = &["p0", "p1", "t"];

    fn ev(src: &str, vals: &[f64]) -> f64 {
        Expr::parse(src, VARS).unwrap().eval(vals)
    }

    #[test]
    fn precedence() {
        assert_eq!(ev("1 + 2 * 3", &[0.0; 3]), 7.0);
        assert_eq!(ev("(1 + 2) * 3", &[0.0; 3]), 9.0);
        assert_eq!(ev("2 ^ 3 ^ 2", &[0.0; 3]), 512.0);
        assert_eq!(ev("-2 ^ 2", &[0.0; 3]), -4.0);
        assert_eq!(ev("2 ^ -1", &[0.0; 3]), 0.5);
        assert_eq!(ev("8 / 4 / 2", &[0.0; 3]), 1.0);
        assert_eq!(ev("1 - 2 - 3", &[0.0; 3]), -4.0);
    }

    #[test]
    fn functions_and_variables() {
        let v = [1.0, 100.0, 0.5];
        assert!((ev("exp(log(p1))", &v) - 100.0).abs() < 1e-12);
        assert_eq!(ev("max(p1 - 90, 0)", &v), 10.0);
        assert_eq!(ev("min(p1, 5, t)", &v), 0.5);
        assert_eq!(ev("sqrt(abs(-4))", &v), 2.0);
        assert_eq!(ev("1.5e-2 * p0", &v), 0.015);
    }

    #[test]
    fn tracks_usage() {
        let e = Expr::parse("0.2 * t", VARS).unwrap();
        assert!(e.uses(2) && !e.uses(1));
        assert_eq!(e.as_constant(), None);
        assert_eq!(Expr::parse("0.05", VARS).unwrap().as_constant(), Some(0.05));
    }

    #[test]
    fn rejects_bad_input() {
        for bad in ["", "1 +", "p9", "foo(1)", "max(1)", "exp(1, 2)", "(1", "1 $ 2", "1 2"] {
            assert!(Expr::parse(bad, VARS).is_err(), "{bad}");
        }
    }
}
