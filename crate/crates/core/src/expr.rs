//! Closed-form coefficient expressions.
//!
//! A small grammar over the coordinates `x`, `y`, `z` with complex constants,
//! `+ - * / ^`, and the functions `exp sin cos sqrt log`. The helper
//! `gauss(cx, cy, cz, w)` expands to `exp(-|p - c|²/w²)`. Expressions can be
//! differentiated symbolically, which is how adjoint coefficients and gauge
//! gradients are formed.

use crate::{Error, Result, Vec3, C64};
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Exp,
    Sin,
    Cos,
    Sqrt,
    Log,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Const(C64),
    Var(usize),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    PowI(Box<Expr>, i32),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn zero() -> Expr {
        Expr::Const(C64::new(0.0, 0.0))
    }

    pub fn real(v: f64) -> Expr {
        Expr::Const(C64::new(v, 0.0))
    }

    pub fn constant(v: C64) -> Expr {
        Expr::Const(v)
    }

    pub fn var(k: usize) -> Expr {
        assert!(k < 3);
        Expr::Var(k)
    }

    pub fn parse(src: &str) -> Result<Expr> {
        let toks = lex(src)?;
        let mut p = Parser { toks, pos: 0 };
        let e = p.expr()?;
        if p.pos != p.toks.len() {
            return Err(Error::Expr(format!("trailing input in '{src}'")));
        }
        Ok(e)
    }

    fn as_const(&self) -> Option<C64> {
        match self {
            Expr::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.as_const(), Some(c) if c == C64::new(0.0, 0.0))
    }

    fn is_one(&self) -> bool {
        matches!(self.as_const(), Some(c) if c == C64::new(1.0, 0.0))
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::Const(x + y),
            _ if a.is_zero() => b,
            _ if b.is_zero() => a,
            _ => Expr::Add(Box::new(a), Box::new(b)),
        }
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::Const(x - y),
            _ if b.is_zero() => a,
            _ if a.is_zero() => Expr::neg(b),
            // structurally equal operands cancel, so equal coefficients give a zero difference
            _ if a == b => Expr::Const(C64::new(0.0, 0.0)),
            _ => Expr::Sub(Box::new(a), Box::new(b)),
        }
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::Const(x * y),
            _ if a.is_zero() || b.is_zero() => Expr::zero(),
            _ if a.is_one() => b,
            _ if b.is_one() => a,
            _ => Expr::Mul(Box::new(a), Box::new(b)),
        }
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::Const(x / y),
            _ if a.is_zero() => Expr::zero(),
            _ if b.is_one() => a,
            _ => Expr::Div(Box::new(a), Box::new(b)),
        }
    }

    pub fn neg(a: Expr) -> Expr {
        match a {
            Expr::Const(c) => Expr::Const(-c),
            Expr::Neg(inner) => *inner,
            other => Expr::Neg(Box::new(other)),
        }
    }

    pub fn powi(a: Expr, n: i32) -> Expr {
        match (a.as_const(), n) {
            (_, 0) => Expr::real(1.0),
            (_, 1) => a,
            (Some(c), _) => Expr::Const(c.powi(n)),
            _ => Expr::PowI(Box::new(a), n),
        }
    }

    pub fn call(f: Func, a: Expr) -> Expr {
        match a.as_const() {
            Some(c) => Expr::Const(apply(f, c)),
            None => Expr::Call(f, Box::new(a)),
        }
    }

    pub fn eval(&self, p: Vec3) -> C64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Var(k) => C64::new(p[*k], 0.0),
            Expr::Add(a, b) => a.eval(p) + b.eval(p),
            Expr::Sub(a, b) => a.eval(p) - b.eval(p),
            Expr::Mul(a, b) => a.eval(p) * b.eval(p),
            Expr::Div(a, b) => a.eval(p) / b.eval(p),
            Expr::Neg(a) => -a.eval(p),
            Expr::PowI(a, n) => a.eval(p).powi(*n),
            Expr::Pow(a, b) => a.eval(p).powc(b.eval(p)),
            Expr::Call(f, a) => apply(*f, a.eval(p)),
        }
    }

    /// Symbolic partial derivative with respect to coordinate `k`.
    pub fn diff(&self, k: usize) -> Expr {
        match self {
            Expr::Const(_) => Expr::zero(),
            Expr::Var(j) => {
                if *j == k {
                    Expr::real(1.0)
                } else {
                    Expr::zero()
                }
            }
            Expr::Add(a, b) => Expr::add(a.diff(k), b.diff(k)),
            Expr::Sub(a, b) => Expr::sub(a.diff(k), b.diff(k)),
            Expr::Mul(a, b) => Expr::add(
                Expr::mul(a.diff(k), (**b).clone()),
                Expr::mul((**a).clone(), b.diff(k)),
            ),
            Expr::Div(a, b) => Expr::div(
                Expr::sub(
                    Expr::mul(a.diff(k), (**b).clone()),
                    Expr::mul((**a).clone(), b.diff(k)),
                ),
                Expr::powi((**b).clone(), 2),
            ),
            Expr::Neg(a) => Expr::neg(a.diff(k)),
            Expr::PowI(a, n) => Expr::mul(
                Expr::mul(Expr::real(*n as f64), Expr::powi((**a).clone(), n - 1)),
                a.diff(k),
            ),
            Expr::Pow(a, b) => {
                // a^b = exp(b log a)
                let inner = Expr::mul((**b).clone(), Expr::call(Func::Log, (**a).clone()));
                Expr::mul(self.clone(), inner.diff(k))
            }
            Expr::Call(f, a) => {
                let da = a.diff(k);
                if da.is_zero() {
                    return Expr::zero();
                }
                let outer = match f {
                    Func::Exp => self.clone(),
                    Func::Sin => Expr::call(Func::Cos, (**a).clone()),
                    Func::Cos => Expr::neg(Expr::call(Func::Sin, (**a).clone())),
                    Func::Sqrt => Expr::div(Expr::real(0.5), self.clone()),
                    Func::Log => Expr::div(Expr::real(1.0), (**a).clone()),
                };
                Expr::mul(outer, da)
            }
        }
    }

    /// Complex conjugate, valid because coordinates are real.
    pub fn conj(&self) -> Expr {
        match self {
            Expr::Const(c) => Expr::Const(c.conj()),
            Expr::Var(k) => Expr::Var(*k),
            Expr::Add(a, b) => Expr::add(a.conj(), b.conj()),
            Expr::Sub(a, b) => Expr::sub(a.conj(), b.conj()),
            Expr::Mul(a, b) => Expr::mul(a.conj(), b.conj()),
            Expr::Div(a, b) => Expr::div(a.conj(), b.conj()),
            Expr::Neg(a) => Expr::neg(a.conj()),
            Expr::PowI(a, n) => Expr::powi(a.conj(), *n),
            Expr::Pow(a, b) => Expr::Pow(Box::new(a.conj()), Box::new(b.conj())),
            Expr::Call(f, a) => Expr::call(*f, a.conj()),
        }
    }

    pub fn gradient(&self) -> [Expr; 3] {
        [self.diff(0), self.diff(1), self.diff(2)]
    }
}

fn apply(f: Func, v: C64) -> C64 {
    match f {
        Func::Exp => v.exp(),
        Func::Sin => v.sin(),
        Func::Cos => v.cos(),
        Func::Sqrt => v.sqrt(),
        Func::Log => v.ln(),
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => {
                if c.im == 0.0 {
                    write!(f, "{}", c.re)
                } else if c.re == 0.0 {
                    write!(f, "({}*i)", c.im)
                } else {
                    write!(f, "({}+{}*i)", c.re, c.im)
                }
            }
            Expr::Var(k) => write!(f, "{}", ["x", "y", "z"][*k]),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "{a}*{b}"),
            Expr::Div(a, b) => write!(f, "{a}/({b})"),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::PowI(a, n) => write!(f, "({a})^{n}"),
            Expr::Pow(a, b) => write!(f, "({a})^({b})"),
            Expr::Call(func, a) => {
                let name = match func {
                    Func::Exp => "exp",
                    Func::Sin => "sin",
                    Func::Cos => "cos",
                    Func::Sqrt => "sqrt",
                    Func::Log => "log",
                };
                write!(f, "{name}({a})")
            }
        }
    }
}

/// Vector field with one expression per Cartesian component.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorExpr(pub [Expr; 3]);

impl VectorExpr {
    pub fn zero() -> Self {
        VectorExpr([Expr::zero(), Expr::zero(), Expr::zero()])
    }

    pub fn constant(v: [C64; 3]) -> Self {
        VectorExpr([Expr::Const(v[0]), Expr::Const(v[1]), Expr::Const(v[2])])
    }

    pub fn parse(src: [&str; 3]) -> Result<Self> {
        Ok(VectorExpr([Expr::parse(src[0])?, Expr::parse(src[1])?, Expr::parse(src[2])?]))
    }

    pub fn gradient_of(e: &Expr) -> Self {
        VectorExpr(e.gradient())
    }

    pub fn eval(&self, p: Vec3) -> [C64; 3] {
        [self.0[0].eval(p), self.0[1].eval(p), self.0[2].eval(p)]
    }

    pub fn divergence(&self) -> Expr {
        Expr::add(Expr::add(self.0[0].diff(0), self.0[1].diff(1)), self.0[2].diff(2))
    }

    pub fn conj(&self) -> Self {
        VectorExpr([self.0[0].conj(), self.0[1].conj(), self.0[2].conj()])
    }

    pub fn sub(&self, other: &VectorExpr) -> Self {
        VectorExpr([
            Expr::sub(self.0[0].clone(), other.0[0].clone()),
            Expr::sub(self.0[1].clone(), other.0[1].clone()),
            Expr::sub(self.0[2].clone(), other.0[2].clone()),
        ])
    }

    pub fn add(&self, other: &VectorExpr) -> Self {
        VectorExpr([
            Expr::add(self.0[0].clone(), other.0[0].clone()),
            Expr::add(self.0[1].clone(), other.0[1].clone()),
            Expr::add(self.0[2].clone(), other.0[2].clone()),
        ])
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(Expr::is_zero)
    }
}

/// Serialisable source form of a scalar expression.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(transparent)]
pub struct ExprSource(pub String);

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
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
                let save = i;
                i += 1;
                if i < chars.len() && (chars[i] == '+' || chars[i] == '-') {
                    i += 1;
                }
                if i < chars.len() && chars[i].is_ascii_digit() {
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                } else {
                    i = save;
                }
            }
            let s: String = chars[start..i].iter().collect();
            let v = s
                .parse::<f64>()
                .map_err(|_| Error::Expr(format!("bad number '{s}'")))?;
            out.push(Tok::Num(v));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect()));
        } else if "+-*/^(),".contains(c) {
            out.push(Tok::Op(c));
            i += 1;
        } else {
            return Err(Error::Expr(format!("unexpected character '{c}'")));
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn eat(&mut self, op: char) -> bool {
        if self.peek() == Some(&Tok::Op(op)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, op: char) -> Result<()> {
        if self.eat(op) {
            Ok(())
        } else {
            Err(Error::Expr(format!("expected '{op}'")))
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            if self.eat('+') {
                lhs = Expr::add(lhs, self.term()?);
            } else if self.eat('-') {
                lhs = Expr::sub(lhs, self.term()?);
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat('*') {
                lhs = Expr::mul(lhs, self.unary()?);
            } else if self.eat('/') {
                lhs = Expr::div(lhs, self.unary()?);
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat('-') {
            return Ok(Expr::neg(self.unary()?));
        }
        if self.eat('+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.eat('^') {
            let exp = self.unary()?;
            if let Some(c) = exp.as_const() {
                if c.im == 0.0 && c.re.fract() == 0.0 && c.re.abs() < 64.0 {
                    return Ok(Expr::powi(base, c.re as i32));
                }
            }
            return Ok(Expr::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn args(&mut self) -> Result<Vec<Expr>> {
        self.expect('(')?;
        let mut out = vec![self.expr()?];
        while self.eat(',') {
            out.push(self.expr()?);
        }
        self.expect(')')?;
        Ok(out)
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Expr::real(v))
            }
            Some(Tok::Op('(')) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                match name.as_str() {
                    "x" => Ok(Expr::Var(0)),
                    "y" => Ok(Expr::Var(1)),
                    "z" => Ok(Expr::Var(2)),
                    "i" => Ok(Expr::Const(C64::new(0.0, 1.0))),
                    "pi" => Ok(Expr::real(std::f64::consts::PI)),
                    "gauss" => {
                        let a = self.args()?;
                        if a.len() != 4 {
                            return Err(Error::Expr("gauss takes (cx, cy, cz, width)".into()));
                        }
                        let mut r2 = Expr::zero();
                        for k in 0..3 {
                            r2 = Expr::add(r2, Expr::powi(Expr::sub(Expr::Var(k), a[k].clone()), 2));
                        }
                        let arg = Expr::neg(Expr::div(r2, Expr::powi(a[3].clone(), 2)));
                        Ok(Expr::call(Func::Exp, arg))
                    }
                    other => {
                        let f = match other {
                            "exp" => Func::Exp,
                            "sin" => Func::Sin,
                            "cos" => Func::Cos,
                            "sqrt" => Func::Sqrt,
                            "log" => Func::Log,
                            _ => return Err(Error::Expr(format!("unknown identifier '{other}'"))),
                        };
                        let a = self.args()?;
                        if a.len() != 1 {
                            return Err(Error::Expr(format!("{other} takes one argument")));
                        }
                        Ok(Expr::call(f, a.into_iter().next().unwrap()))
                    }
                }
            }
            other => Err(Error::Expr(format!("unexpected token {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn parses_and_evaluates_polynomials() {
        let e = Expr::parse("x^2 + 2*x*y - z/4 + 3").unwrap();
        let v = e.eval([1.5, -2.0, 8.0]);
        assert!((v - c(2.25 - 6.0 - 2.0 + 3.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn imaginary_unit_and_functions() {
        let e = Expr::parse("exp(i*x) + 0.5*i*cos(y)").unwrap();
        let p = [0.3, 1.1, 0.0];
        let expect = c(0.0, 0.3).exp() + c(0.0, 0.5) * 1.1f64.cos();
        assert!((e.eval(p) - expect).norm() < 1e-14);
    }

    #[test]
    fn gauss_expands() {
        let e = Expr::parse("gauss(0, 0, 4, 0.5)").unwrap();
        let p = [0.1, 0.2, 3.9];
        let expect = (-(0.01 + 0.04 + 0.01) / 0.25f64).exp();
        assert!((e.eval(p).re - expect).abs() < 1e-14);
    }

    #[test]
    fn derivative_matches_central_difference() {
        let e = Expr::parse("sin(x*y) * exp(-z^2) / (2 + x^2) + sqrt(1 + y^2)").unwrap();
        let p = [0.4, -0.7, 0.9];
        for k in 0..3 {
            let d = e.diff(k).eval(p);
            let step = 1e-5;
            let mut a = p;
            let mut b = p;
            a[k] += step;
            b[k] -= step;
            let fd = (e.eval(a) - e.eval(b)) / (2.0 * step);
            assert!((d - fd).norm() < 1e-8, "k={k}: {d} vs {fd}");
        }
    }

    #[test]
    fn conjugate_of_complex_coefficients() {
        let e = Expr::parse("(1 + 2*i) * x + i * exp(i*y)").unwrap();
        let p = [0.7, 0.2, 0.0];
        assert!((e.conj().eval(p) - e.eval(p).conj()).norm() < 1e-14);
    }

    #[test]
    fn divergence_of_linear_field() {
        let v = VectorExpr::parse(["2*x", "y*z", "-z"]).unwrap();
        let d = v.divergence();
        assert!((d.eval([0.0, 0.0, 3.0]) - c(2.0 + 3.0 - 1.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn rejects_garbage() {
        assert!(Expr::parse("x +").is_err());
        assert!(Expr::parse("foo(x)").is_err());
        assert!(Expr::parse("x $ y").is_err());
        assert!(Expr::parse("(x").is_err());
    }

    #[test]
    fn equal_coefficients_cancel() {
        let q = Expr::parse("0.5*gauss(-0.1,0,3.9,0.5)").unwrap();
        assert!(Expr::sub(q.clone(), q.clone()).is_zero());
        let other = Expr::parse("0.5*gauss(-0.1,0,3.8,0.5)").unwrap();
        assert!(!Expr::sub(q, other).is_zero());
    }
}
