//! Minimal arithmetic grammar for one-dimensional custom energies.
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?
//! atom   := number | 'x' | 'eps' | func '(' expr ')' | '(' expr ')'
//! func   := sin | cos | exp | abs
//! ```
//!
//! `^` is right-associative and binds tighter than unary minus, so `-x^2`
//! parses as `-(x^2)`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Abs,
    // Produced only by differentiation; not accepted by the parser.
    Ln,
    Sign,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    X,
    Eps,
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn eval(&self, x: f64, eps: f64) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::X => x,
            Expr::Eps => eps,
            Expr::Neg(a) => -a.eval(x, eps),
            Expr::Add(a, b) => a.eval(x, eps) + b.eval(x, eps),
            Expr::Sub(a, b) => a.eval(x, eps) - b.eval(x, eps),
            Expr::Mul(a, b) => a.eval(x, eps) * b.eval(x, eps),
            Expr::Div(a, b) => a.eval(x, eps) / b.eval(x, eps),
            Expr::Pow(a, b) => {
                let base = a.eval(x, eps);
                match b.as_ref() {
                    Expr::Num(n) if n.fract() == 0.0 && n.abs() <= i32::MAX as f64 => {
                        base.powi(*n as i32)
                    }
                    _ => base.powf(b.eval(x, eps)),
                }
            }
            Expr::Call(f, a) => {
                let v = a.eval(x, eps);
                match f {
                    Func::Sin => v.sin(),
                    Func::Cos => v.cos(),
                    Func::Exp => v.exp(),
                    Func::Abs => v.abs(),
                    Func::Ln => v.ln(),
                    Func::Sign => {
                        if v == 0.0 {
                            0.0
                        } else {
                            v.signum()
                        }
                    }
                }
            }
        }
    }

    fn depends_on_x(&self) -> bool {
        match self {
            Expr::Num(_) | Expr::Eps => false,
            Expr::X => true,
            Expr::Neg(a) | Expr::Call(_, a) => a.depends_on_x(),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Pow(a, b) => a.depends_on_x() || b.depends_on_x(),
        }
    }

    /// Symbolic derivative with respect to `x`. `abs` differentiates to
    /// `sign`, which picks 0 at the kink.
    pub fn derivative(&self) -> Expr {
        use Expr::*;
        let b = Box::new;
        match self {
            Num(_) | Eps => Num(0.0),
            X => Num(1.0),
            Neg(a) => Neg(b(a.derivative())),
            Add(l, r) => Add(b(l.derivative()), b(r.derivative())),
            Sub(l, r) => Sub(b(l.derivative()), b(r.derivative())),
            Mul(l, r) => Add(
                b(Mul(b(l.derivative()), r.clone())),
                b(Mul(l.clone(), b(r.derivative()))),
            ),
            Div(l, r) => Div(
                b(Sub(
                    b(Mul(b(l.derivative()), r.clone())),
                    b(Mul(l.clone(), b(r.derivative()))),
                )),
                b(Pow(r.clone(), b(Num(2.0)))),
            ),
            Pow(base, exp) if !exp.depends_on_x() => Mul(
                b(Mul(
                    exp.clone(),
                    b(Pow(base.clone(), b(Sub(exp.clone(), b(Num(1.0)))))),
                )),
                b(base.derivative()),
            ),
            Pow(base, exp) => Mul(
                b(self.clone()),
                b(Add(
                    b(Mul(b(exp.derivative()), b(Call(Func::Ln, base.clone())))),
                    b(Div(b(Mul(exp.clone(), b(base.derivative()))), base.clone())),
                )),
            ),
            Call(f, a) => {
                let inner = a.derivative();
                let outer = match f {
                    Func::Sin => Call(Func::Cos, a.clone()),
                    Func::Cos => Neg(b(Call(Func::Sin, a.clone()))),
                    Func::Exp => Call(Func::Exp, a.clone()),
                    Func::Abs => Call(Func::Sign, a.clone()),
                    Func::Ln => Div(b(Num(1.0)), a.clone()),
                    Func::Sign => Num(0.0),
                };
                Mul(b(outer), b(inner))
            }
        }
    }
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err(&self, msg: &str) -> Error {
        Error::Expression(format!("{msg} at offset {} in `{}`", self.pos, self.src))
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.src[self.pos..].chars().next() {
            if c.is_whitespace() {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.src[self.pos..].chars().next()
    }

    fn bump(&mut self) {
        if let Some(c) = self.src[self.pos..].chars().next() {
            self.pos += c.len_utf8();
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some('+') => {
                    self.bump();
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some('-') => {
                    self.bump();
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some('*') => {
                    self.bump();
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Some('/') => {
                    self.bump();
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.peek() == Some('-') {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.peek() == Some('^') {
            self.bump();
            let exp = self.unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.peek() {
            Some('(') => {
                self.bump();
                let e = self.expr()?;
                if self.peek() != Some(')') {
                    return Err(self.err("expected `)`"));
                }
                self.bump();
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == '.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.pos;
                while matches!(self.src[self.pos..].chars().next(), Some(c) if c.is_ascii_alphanumeric() || c == '_')
                {
                    self.bump();
                }
                let ident = &self.src[start..self.pos];
                let func = match ident {
                    "x" => return Ok(Expr::X),
                    "eps" => return Ok(Expr::Eps),
                    "sin" => Func::Sin,
                    "cos" => Func::Cos,
                    "exp" => Func::Exp,
                    "abs" => Func::Abs,
                    _ => {
                        self.pos = start;
                        return Err(self.err(&format!("unknown identifier `{ident}`")));
                    }
                };
                if self.peek() != Some('(') {
                    return Err(self.err("expected `(` after function name"));
                }
                self.bump();
                let arg = self.expr()?;
                if self.peek() != Some(')') {
                    return Err(self.err("expected `)`"));
                }
                self.bump();
                Ok(Expr::Call(func, Box::new(arg)))
            }
            Some(_) => Err(self.err("unexpected character")),
            None => Err(self.err("unexpected end of input")),
        }
    }

    fn number(&mut self) -> Result<Expr> {
        let start = self.pos;
        let bytes = self.src.as_bytes();
        let mut i = self.pos;
        while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
            i += 1;
        }
        if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
            let mut j = i + 1;
            if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                j += 1;
            }
            if j < bytes.len() && bytes[j].is_ascii_digit() {
                while j < bytes.len() && bytes[j].is_ascii_digit() {
                    j += 1;
                }
                i = j;
            }
        }
        self.pos = i;
        self.src[start..i]
            .parse::<f64>()
            .map(Expr::Num)
            .map_err(|_| {
                self.pos = start;
                self.err("malformed number")
            })
    }
}

pub fn parse(src: &str) -> Result<Expr> {
    let mut p = Parser { src, pos: 0 };
    let e = p.expr()?;
    if p.peek().is_some() {
        return Err(p.err("trailing input"));
    }
    Ok(e)
}

/// A parsed custom expression together with its source text and symbolic
/// derivative. Serializes as the source string.
#[derive(Clone, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct CustomExpr {
    source: String,
    expr: Expr,
    derivative: Expr,
}

impl CustomExpr {
    pub fn parse(source: &str) -> Result<Self> {
        let expr = parse(source)?;
        let derivative = expr.derivative();
        Ok(Self {
            source: source.to_string(),
            expr,
            derivative,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn eval(&self, x: f64, eps: f64) -> f64 {
        self.expr.eval(x, eps)
    }

    pub fn eval_derivative(&self, x: f64, eps: f64) -> f64 {
        self.derivative.eval(x, eps)
    }

    pub fn depends_on_eps(&self) -> bool {
        fn walk(e: &Expr) -> bool {
            match e {
                Expr::Eps => true,
                Expr::Num(_) | Expr::X => false,
                Expr::Neg(a) | Expr::Call(_, a) => walk(a),
                Expr::Add(a, b)
                | Expr::Sub(a, b)
                | Expr::Mul(a, b)
                | Expr::Div(a, b)
                | Expr::Pow(a, b) => walk(a) || walk(b),
            }
        }
        walk(&self.expr)
    }
}

impl PartialEq for CustomExpr {
    fn eq(&self, other: &Self) -> bool {
        self.source == other.source
    }
}

impl fmt::Debug for CustomExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CustomExpr({:?})", self.source)
    }
}

impl TryFrom<String> for CustomExpr {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        Self::parse(&s)
    }
}

impl From<CustomExpr> for String {
    fn from(e: CustomExpr) -> Self {
        e.source
    }
}
