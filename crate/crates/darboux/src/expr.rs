//! Closed-form expressions in the chart variables `u`, `v`.
//!
//! Grammar: numbers, `u`, `v`, `pi`, `+ - * / ^`, parentheses and the functions
//! `sin cos exp sqrt`. `^` binds tighter than unary minus and is right associative.

use crate::error::{Error, Result};
use crate::jet::Jet;
use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Sqrt,
    Ln,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    U,
    V,
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Var {
    U,
    V,
}

pub fn parse(text: &str) -> Result<Expr> {
    let mut p = Parser { s: text.as_bytes(), pos: 0 };
    let e = p.expr()?;
    p.skip_ws();
    if p.pos < p.s.len() {
        return Err(Error::Syntax { offset: p.pos, msg: format!("unexpected `{}`", p.s[p.pos] as char) });
    }
    Ok(e)
}

struct Parser<'a> {
    s: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.s.get(self.pos).copied()
    }

    fn err(&self, msg: &str) -> Error {
        Error::Syntax { offset: self.pos, msg: msg.to_string() }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(b'-') => {
                    self.pos += 1;
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
                Some(b'*') => {
                    self.pos += 1;
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Some(b'/') => {
                    self.pos += 1;
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Some(b'+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let e = self.unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(e)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.peek() {
            None => Err(self.err("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(self.err("expected `)`"));
                }
                self.pos += 1;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.pos;
                while self.pos < self.s.len() && (self.s[self.pos].is_ascii_alphanumeric() || self.s[self.pos] == b'_') {
                    self.pos += 1;
                }
                let name = std::str::from_utf8(&self.s[start..self.pos]).unwrap();
                let func = match name {
                    "u" => return Ok(Expr::U),
                    "v" => return Ok(Expr::V),
                    "pi" => return Ok(Expr::Num(std::f64::consts::PI)),
                    "sin" => Func::Sin,
                    "cos" => Func::Cos,
                    "exp" => Func::Exp,
                    "sqrt" => Func::Sqrt,
                    _ => return Err(Error::UnknownIdent { offset: start, name: name.to_string() }),
                };
                if self.peek() != Some(b'(') {
                    return Err(self.err("expected `(` after function name"));
                }
                self.pos += 1;
                let arg = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(self.err("expected `)`"));
                }
                self.pos += 1;
                Ok(Expr::Call(func, Box::new(arg)))
            }
            Some(c) => Err(self.err(&format!("unexpected `{}`", c as char))),
        }
    }

    fn number(&mut self) -> Result<Expr> {
        let start = self.pos;
        let s = self.s;
        while self.pos < s.len() && (s[self.pos].is_ascii_digit() || s[self.pos] == b'.') {
            self.pos += 1;
        }
        if self.pos < s.len() && (s[self.pos] == b'e' || s[self.pos] == b'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < s.len() && (s[self.pos] == b'+' || s[self.pos] == b'-') {
                self.pos += 1;
            }
            if self.pos < s.len() && s[self.pos].is_ascii_digit() {
                while self.pos < s.len() && s[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            } else {
                self.pos = save;
            }
        }
        let txt = std::str::from_utf8(&s[start..self.pos]).unwrap();
        txt.parse::<f64>()
            .map(Expr::Num)
            .map_err(|_| Error::Syntax { offset: start, msg: format!("bad number `{txt}`") })
    }
}

fn num(v: f64) -> Expr {
    Expr::Num(v)
}

fn add(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), Expr::Num(y)) => num(x + y),
        (Expr::Num(x), _) if *x == 0.0 => b,
        (_, Expr::Num(y)) if *y == 0.0 => a,
        _ => Expr::Add(Box::new(a), Box::new(b)),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), Expr::Num(y)) => num(x - y),
        (_, Expr::Num(y)) if *y == 0.0 => a,
        (Expr::Num(x), _) if *x == 0.0 => neg(b),
        _ => Expr::Sub(Box::new(a), Box::new(b)),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), Expr::Num(y)) => num(x * y),
        (Expr::Num(x), _) | (_, Expr::Num(x)) if *x == 0.0 => num(0.0),
        (Expr::Num(x), _) if *x == 1.0 => b,
        (_, Expr::Num(y)) if *y == 1.0 => a,
        _ => Expr::Mul(Box::new(a), Box::new(b)),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), _) if *x == 0.0 => num(0.0),
        (_, Expr::Num(y)) if *y == 1.0 => a,
        (Expr::Num(x), Expr::Num(y)) => num(x / y),
        _ => Expr::Div(Box::new(a), Box::new(b)),
    }
}

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Num(x) => num(-x),
        Expr::Neg(inner) => *inner,
        other => Expr::Neg(Box::new(other)),
    }
}

fn pow(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (_, Expr::Num(y)) if *y == 0.0 => num(1.0),
        (_, Expr::Num(y)) if *y == 1.0 => a,
        (Expr::Num(x), Expr::Num(y)) => num(x.powf(*y)),
        _ => Expr::Pow(Box::new(a), Box::new(b)),
    }
}

fn call(f: Func, a: Expr) -> Expr {
    Expr::Call(f, Box::new(a))
}

impl Expr {
    pub fn eval(&self, u: f64, v: f64) -> f64 {
        match self {
            Expr::Num(x) => *x,
            Expr::U => u,
            Expr::V => v,
            Expr::Neg(a) => -a.eval(u, v),
            Expr::Add(a, b) => a.eval(u, v) + b.eval(u, v),
            Expr::Sub(a, b) => a.eval(u, v) - b.eval(u, v),
            Expr::Mul(a, b) => a.eval(u, v) * b.eval(u, v),
            Expr::Div(a, b) => a.eval(u, v) / b.eval(u, v),
            Expr::Pow(a, b) => {
                let base = a.eval(u, v);
                match **b {
                    Expr::Num(e) if e.fract() == 0.0 && e.abs() < 64.0 => base.powi(e as i32),
                    _ => base.powf(b.eval(u, v)),
                }
            }
            Expr::Call(f, a) => {
                let x = a.eval(u, v);
                match f {
                    Func::Sin => x.sin(),
                    Func::Cos => x.cos(),
                    Func::Exp => x.exp(),
                    Func::Sqrt => x.sqrt(),
                    Func::Ln => x.ln(),
                }
            }
        }
    }

    /// Evaluate on truncated Taylor jets; the result is the Taylor jet of the expression.
    pub fn eval_jet(&self, u: &Jet, v: &Jet) -> Jet {
        match self {
            Expr::Num(x) => Jet::constant(u.deg, *x),
            Expr::U => u.clone(),
            Expr::V => v.clone(),
            Expr::Neg(a) => a.eval_jet(u, v).neg(),
            Expr::Add(a, b) => a.eval_jet(u, v).add(&b.eval_jet(u, v)),
            Expr::Sub(a, b) => a.eval_jet(u, v).sub(&b.eval_jet(u, v)),
            Expr::Mul(a, b) => a.eval_jet(u, v).mul(&b.eval_jet(u, v)),
            Expr::Div(a, b) => a.eval_jet(u, v).div(&b.eval_jet(u, v)),
            Expr::Pow(a, b) => {
                let base = a.eval_jet(u, v);
                match **b {
                    Expr::Num(e) if e.fract() == 0.0 && e.abs() < 64.0 => base.powi(e as i32),
                    Expr::Num(e) => base.powf(e),
                    _ => b.eval_jet(u, v).mul(&base.ln()).exp(),
                }
            }
            Expr::Call(f, a) => {
                let x = a.eval_jet(u, v);
                match f {
                    Func::Sin => x.sin(),
                    Func::Cos => x.cos(),
                    Func::Exp => x.exp(),
                    Func::Sqrt => x.sqrt(),
                    Func::Ln => x.ln(),
                }
            }
        }
    }

    /// Taylor jet of degree `deg` about `(u0, v0)`.
    pub fn taylor(&self, u0: f64, v0: f64, deg: usize) -> Jet {
        self.eval_jet(&Jet::var_x(deg, u0), &Jet::var_y(deg, v0))
    }

    pub fn is_constant(&self) -> bool {
        match self {
            Expr::Num(_) => true,
            Expr::U | Expr::V => false,
            Expr::Neg(a) | Expr::Call(_, a) => a.is_constant(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) | Expr::Pow(a, b) => {
                a.is_constant() && b.is_constant()
            }
        }
    }

    /// Symbolic partial derivative.
    pub fn diff(&self, var: Var) -> Expr {
        match self {
            Expr::Num(_) => num(0.0),
            Expr::U => num(if var == Var::U { 1.0 } else { 0.0 }),
            Expr::V => num(if var == Var::V { 1.0 } else { 0.0 }),
            Expr::Neg(a) => neg(a.diff(var)),
            Expr::Add(a, b) => add(a.diff(var), b.diff(var)),
            Expr::Sub(a, b) => sub(a.diff(var), b.diff(var)),
            Expr::Mul(a, b) => add(mul(a.diff(var), (**b).clone()), mul((**a).clone(), b.diff(var))),
            Expr::Div(a, b) => div(
                sub(mul(a.diff(var), (**b).clone()), mul((**a).clone(), b.diff(var))),
                pow((**b).clone(), num(2.0)),
            ),
            Expr::Pow(a, b) => {
                if b.is_constant() {
                    let e = b.eval(0.0, 0.0);
                    mul(mul(num(e), pow((**a).clone(), num(e - 1.0))), a.diff(var))
                } else {
                    let lhs = mul(b.diff(var), call(Func::Ln, (**a).clone()));
                    let rhs = div(mul((**b).clone(), a.diff(var)), (**a).clone());
                    mul(self.clone(), add(lhs, rhs))
                }
            }
            Expr::Call(f, a) => {
                let inner = a.diff(var);
                let outer = match f {
                    Func::Sin => call(Func::Cos, (**a).clone()),
                    Func::Cos => neg(call(Func::Sin, (**a).clone())),
                    Func::Exp => self.clone(),
                    Func::Sqrt => div(num(0.5), self.clone()),
                    Func::Ln => div(num(1.0), (**a).clone()),
                };
                mul(outer, inner)
            }
        }
    }

    /// `d^a/du^a d^b/dv^b`.
    pub fn partial(&self, a: usize, b: usize) -> Expr {
        let mut e = self.clone();
        for _ in 0..a {
            e = e.diff(Var::U);
        }
        for _ in 0..b {
            e = e.diff(Var::V);
        }
        e
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(x) => write!(f, "{x}"),
            Expr::U => write!(f, "u"),
            Expr::V => write!(f, "v"),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Pow(a, b) => write!(f, "({a} ^ {b})"),
            Expr::Call(func, a) => {
                let name = match func {
                    Func::Sin => "sin",
                    Func::Cos => "cos",
                    Func::Exp => "exp",
                    Func::Sqrt => "sqrt",
                    Func::Ln => "ln",
                };
                write!(f, "{name}({a})")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluates_simple_polynomial() {
        assert_eq!(parse("1 + u^2").unwrap().eval(2.0, 0.0), 5.0);
    }

    #[test]
    fn second_v_derivative_of_cubic_term() {
        let e = parse("u*v^3/6").unwrap();
        assert!((e.partial(0, 2).eval(1.0, 1.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn unbalanced_paren_reports_offset() {
        match parse("sin(u") {
            Err(Error::Syntax { offset, .. }) => assert_eq!(offset, 5),
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_identifier() {
        assert!(matches!(parse("1 + w"), Err(Error::UnknownIdent { offset: 4, .. })));
    }

    #[test]
    fn precedence_and_unary_minus() {
        let e = parse("-u^2 + 2*3^2 - 8/2/2").unwrap();
        assert_eq!(e.eval(3.0, 0.0), -9.0 + 18.0 - 2.0);
        assert_eq!(parse("2^3^2").unwrap().eval(0.0, 0.0), 512.0);
        assert_eq!(parse("1.5e-1*u").unwrap().eval(2.0, 0.0), 0.3);
    }

    #[test]
    fn jet_agrees_with_symbolic_derivatives() {
        let e = parse("cos(u)^2 + sqrt(1 + u*v) * exp(v/3) - u^v").unwrap();
        let (u0, v0) = (0.7, 0.4);
        let j = e.taylor(u0, v0, 4);
        for a in 0..=4 {
            for b in 0..=(4 - a) {
                let s = e.partial(a, b).eval(u0, v0);
                let t = j.derivative_at_center(a, b);
                assert!((s - t).abs() < 1e-10 * (1.0 + s.abs()), "({a},{b}) {s} vs {t}");
            }
        }
    }
}
