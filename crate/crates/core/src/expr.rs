//! A small expression language for functionals of the whitened coordinates.
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := primary ('^' '-'? int)*
//! primary:= number | 'xi' '(' int ')' | 'norm2' '(' ')'
//!         | ('exp' | 'sin' | 'cos' | 'abs') '(' expr ')'
//!         | ('min' | 'max') '(' expr ',' expr ')'
//!         | '(' expr ')'
//! ```
//!
//! Coordinates are 1-based. Gradients and Hessians are obtained by symbolic
//! differentiation of the tree.

use std::fmt;

use crate::error::{Error, Result};
use crate::functional::{Functional, LevelGeometry};

pub const GRAMMAR: &str = "\
expr    := term (('+' | '-') term)*
term    := unary (('*' | '/') unary)*
unary   := '-' unary | power
power   := primary ('^' '-'? int)*
primary := number
         | 'xi' '(' int ')'                  coordinate, 1-based
         | 'norm2' '(' ')'                   sum of squared coordinates
         | ('exp' | 'sin' | 'cos' | 'abs') '(' expr ')'
         | ('min' | 'max') '(' expr ',' expr ')'
         | '(' expr ')'
";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Sin,
    Cos,
    Abs,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    /// 0-based coordinate.
    Xi(usize),
    Norm2,
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Call(Func, Box<Expr>),
    Min(Box<Expr>, Box<Expr>),
    Max(Box<Expr>, Box<Expr>),
    // produced by differentiation only
    Sign(Box<Expr>),
    /// `if a <= b { x } else { y }`
    SelectLe(Box<Expr>, Box<Expr>, Box<Expr>, Box<Expr>),
}

fn num(v: f64) -> Expr {
    Expr::Num(v)
}

fn is_num(e: &Expr, v: f64) -> bool {
    matches!(e, Expr::Num(x) if *x == v)
}

fn add(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), Expr::Num(y)) => num(x + y),
        _ if is_num(&a, 0.0) => b,
        _ if is_num(&b, 0.0) => a,
        _ => Expr::Add(Box::new(a), Box::new(b)),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), Expr::Num(y)) => num(x - y),
        _ if is_num(&b, 0.0) => a,
        _ if is_num(&a, 0.0) => neg(b),
        _ => Expr::Sub(Box::new(a), Box::new(b)),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), Expr::Num(y)) => num(x * y),
        _ if is_num(&a, 0.0) || is_num(&b, 0.0) => num(0.0),
        _ if is_num(&a, 1.0) => b,
        _ if is_num(&b, 1.0) => a,
        _ => Expr::Mul(Box::new(a), Box::new(b)),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        _ if is_num(&a, 0.0) => num(0.0),
        _ if is_num(&b, 1.0) => a,
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

fn pow(a: Expr, n: i32) -> Expr {
    match n {
        0 => num(1.0),
        1 => a,
        _ => match a {
            Expr::Num(x) => num(x.powi(n)),
            other => Expr::Pow(Box::new(other), n),
        },
    }
}

fn select_le(a: Expr, b: Expr, x: Expr, y: Expr) -> Expr {
    if x == y {
        return x;
    }
    Expr::SelectLe(Box::new(a), Box::new(b), Box::new(x), Box::new(y))
}

impl Expr {
    pub fn eval(&self, xi: &[f64]) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Xi(k) => xi[*k],
            Expr::Norm2 => xi.iter().map(|x| x * x).sum(),
            Expr::Neg(a) => -a.eval(xi),
            Expr::Add(a, b) => a.eval(xi) + b.eval(xi),
            Expr::Sub(a, b) => a.eval(xi) - b.eval(xi),
            Expr::Mul(a, b) => a.eval(xi) * b.eval(xi),
            Expr::Div(a, b) => a.eval(xi) / b.eval(xi),
            Expr::Pow(a, n) => a.eval(xi).powi(*n),
            Expr::Call(f, a) => {
                let v = a.eval(xi);
                match f {
                    Func::Exp => v.exp(),
                    Func::Sin => v.sin(),
                    Func::Cos => v.cos(),
                    Func::Abs => v.abs(),
                }
            }
            Expr::Min(a, b) => a.eval(xi).min(b.eval(xi)),
            Expr::Max(a, b) => a.eval(xi).max(b.eval(xi)),
            Expr::Sign(a) => {
                let v = a.eval(xi);
                if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Expr::SelectLe(a, b, x, y) => {
                if a.eval(xi) <= b.eval(xi) {
                    x.eval(xi)
                } else {
                    y.eval(xi)
                }
            }
        }
    }

    /// `∂/∂ξ_k` for 0-based `k`.
    pub fn derivative(&self, k: usize) -> Expr {
        match self {
            Expr::Num(_) | Expr::Sign(_) => num(0.0),
            Expr::Xi(j) => num(if *j == k { 1.0 } else { 0.0 }),
            Expr::Norm2 => mul(num(2.0), Expr::Xi(k)),
            Expr::Neg(a) => neg(a.derivative(k)),
            Expr::Add(a, b) => add(a.derivative(k), b.derivative(k)),
            Expr::Sub(a, b) => sub(a.derivative(k), b.derivative(k)),
            Expr::Mul(a, b) => add(
                mul(a.derivative(k), (**b).clone()),
                mul((**a).clone(), b.derivative(k)),
            ),
            Expr::Div(a, b) => {
                let da = a.derivative(k);
                let db = b.derivative(k);
                if is_num(&db, 0.0) {
                    div(da, (**b).clone())
                } else {
                    div(
                        sub(mul(da, (**b).clone()), mul((**a).clone(), db)),
                        pow((**b).clone(), 2),
                    )
                }
            }
            Expr::Pow(a, n) => mul(
                mul(num(*n as f64), pow((**a).clone(), n - 1)),
                a.derivative(k),
            ),
            Expr::Call(f, a) => {
                let da = a.derivative(k);
                if is_num(&da, 0.0) {
                    return num(0.0);
                }
                let outer = match f {
                    Func::Exp => self.clone(),
                    Func::Sin => Expr::Call(Func::Cos, a.clone()),
                    Func::Cos => neg(Expr::Call(Func::Sin, a.clone())),
                    Func::Abs => Expr::Sign(a.clone()),
                };
                mul(outer, da)
            }
            Expr::Min(a, b) => select_le(
                (**a).clone(),
                (**b).clone(),
                a.derivative(k),
                b.derivative(k),
            ),
            Expr::Max(a, b) => select_le(
                (**a).clone(),
                (**b).clone(),
                b.derivative(k),
                a.derivative(k),
            ),
            Expr::SelectLe(a, b, x, y) => select_le(
                (**a).clone(),
                (**b).clone(),
                x.derivative(k),
                y.derivative(k),
            ),
        }
    }

    /// Largest 0-based coordinate referenced, if any.
    pub fn max_coordinate(&self) -> Option<usize> {
        match self {
            Expr::Num(_) | Expr::Norm2 => None,
            Expr::Xi(k) => Some(*k),
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) | Expr::Sign(a) => a.max_coordinate(),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Min(a, b)
            | Expr::Max(a, b) => a.max_coordinate().max(b.max_coordinate()),
            Expr::SelectLe(a, b, x, y) => a
                .max_coordinate()
                .max(b.max_coordinate())
                .max(x.max_coordinate())
                .max(y.max_coordinate()),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Xi(k) => write!(f, "xi({})", k + 1),
            Expr::Norm2 => write!(f, "norm2()"),
            Expr::Neg(a) => write!(f, "-({a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Pow(a, n) => write!(f, "({a})^{n}"),
            Expr::Call(func, a) => {
                let name = match func {
                    Func::Exp => "exp",
                    Func::Sin => "sin",
                    Func::Cos => "cos",
                    Func::Abs => "abs",
                };
                write!(f, "{name}({a})")
            }
            Expr::Min(a, b) => write!(f, "min({a}, {b})"),
            Expr::Max(a, b) => write!(f, "max({a}, {b})"),
            Expr::Sign(a) => write!(f, "sign({a})"),
            Expr::SelectLe(a, b, x, y) => write!(f, "[{a} <= {b} ? {x} : {y}]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
    End,
}

fn tokenize(src: &str) -> Result<Vec<(Tok, usize)>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let tok = match c {
            '+' => Tok::Plus,
            '-' => Tok::Minus,
            '*' => Tok::Star,
            '/' => Tok::Slash,
            '^' => Tok::Caret,
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            ',' => Tok::Comma,
            _ if c.is_ascii_digit() || c == '.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text = &src[start..i];
                let v: f64 = text.parse().map_err(|_| Error::Expr {
                    position: start,
                    message: format!("malformed number '{text}'"),
                })?;
                out.push((Tok::Num(v), start));
                continue;
            }
            _ if c.is_ascii_alphabetic() || c == '_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((Tok::Ident(src[start..i].to_string()), start));
                continue;
            }
            _ => {
                return Err(Error::Expr {
                    position: start,
                    message: format!("unexpected character '{c}'"),
                })
            }
        };
        out.push((tok, start));
        i += 1;
    }
    out.push((Tok::End, src.len()));
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    dim: Option<usize>,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn fail<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Expr {
            position: self.offset(),
            message: message.into(),
        })
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<()> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            self.fail(format!("expected {what}, found {:?}", self.peek()))
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Tok::Plus => {
                    self.bump();
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Tok::Minus => {
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
                Tok::Star => {
                    self.bump();
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Tok::Slash => {
                    self.bump();
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if *self.peek() == Tok::Minus {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let mut base = self.primary()?;
        while *self.peek() == Tok::Caret {
            self.bump();
            let negative = if *self.peek() == Tok::Minus {
                self.bump();
                true
            } else {
                false
            };
            let at = self.offset();
            match self.bump() {
                Tok::Num(v) if v.fract() == 0.0 && v <= i32::MAX as f64 => {
                    let n = v as i32;
                    base = Expr::Pow(Box::new(base), if negative { -n } else { n });
                }
                other => {
                    return Err(Error::Expr {
                        position: at,
                        message: format!("exponent must be an integer, found {other:?}"),
                    })
                }
            }
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr> {
        let at = self.offset();
        match self.bump() {
            Tok::Num(v) => Ok(Expr::Num(v)),
            Tok::LParen => {
                let e = self.expr()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(e)
            }
            Tok::Ident(name) => self.call(&name, at),
            other => Err(Error::Expr {
                position: at,
                message: format!("expected a number, name or '(', found {other:?}"),
            }),
        }
    }

    fn call(&mut self, name: &str, at: usize) -> Result<Expr> {
        self.expect(Tok::LParen, "'(' after function name")?;
        let e = match name {
            "xi" => {
                let idx_at = self.offset();
                let k = match self.bump() {
                    Tok::Num(v) if v.fract() == 0.0 && v >= 1.0 => v as usize,
                    other => {
                        return Err(Error::Expr {
                            position: idx_at,
                            message: format!("xi needs a positive integer index, found {other:?}"),
                        })
                    }
                };
                if let Some(d) = self.dim {
                    if k > d {
                        return Err(Error::Expr {
                            position: idx_at,
                            message: format!("coordinate index {k} exceeds model dimension {d}"),
                        });
                    }
                }
                Expr::Xi(k - 1)
            }
            "norm2" => Expr::Norm2,
            "exp" | "sin" | "cos" | "abs" => {
                let f = match name {
                    "exp" => Func::Exp,
                    "sin" => Func::Sin,
                    "cos" => Func::Cos,
                    _ => Func::Abs,
                };
                Expr::Call(f, Box::new(self.expr()?))
            }
            "min" | "max" => {
                let a = self.expr()?;
                self.expect(Tok::Comma, "',' between arguments")?;
                let b = self.expr()?;
                if name == "min" {
                    Expr::Min(Box::new(a), Box::new(b))
                } else {
                    Expr::Max(Box::new(a), Box::new(b))
                }
            }
            _ => {
                return Err(Error::Expr {
                    position: at,
                    message: format!("unknown function '{name}'"),
                })
            }
        };
        self.expect(Tok::RParen, "')'")?;
        Ok(e)
    }
}

/// Parse `src`. When `dim` is given, coordinate indices are checked against it.
pub fn parse(src: &str, dim: Option<usize>) -> Result<Expr> {
    let mut p = Parser {
        toks: tokenize(src)?,
        pos: 0,
        dim,
    };
    let e = p.expr()?;
    if *p.peek() != Tok::End {
        return p.fail(format!("unexpected trailing input {:?}", p.peek()));
    }
    Ok(e)
}

/// A parsed expression with its symbolic gradient and Hessian for a fixed
/// dimension.
#[derive(Debug, Clone)]
pub struct ExprFunctional {
    source: String,
    ast: Expr,
    dim: usize,
    grad: Vec<Expr>,
    /// Upper triangle, row-major.
    hess: Vec<Expr>,
}

impl ExprFunctional {
    pub fn parse(src: &str, dim: usize) -> Result<Self> {
        let ast = parse(src, Some(dim))?;
        Ok(Self::from_ast(src.to_string(), ast, dim))
    }

    pub fn from_ast(source: String, ast: Expr, dim: usize) -> Self {
        let grad: Vec<Expr> = (0..dim).map(|k| ast.derivative(k)).collect();
        let mut hess = Vec::with_capacity(dim * (dim + 1) / 2);
        for (j, gj) in grad.iter().enumerate() {
            for k in j..dim {
                hess.push(gj.derivative(k));
            }
        }
        Self {
            source,
            ast,
            dim,
            grad,
            hess,
        }
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn ast(&self) -> &Expr {
        &self.ast
    }

    pub fn gradient_exprs(&self) -> &[Expr] {
        &self.grad
    }
}

impl Functional for ExprFunctional {
    fn eval(&self, xi: &[f64]) -> f64 {
        self.ast.eval(xi)
    }
    fn has_gradient(&self) -> bool {
        true
    }
    fn gradient(&self, xi: &[f64], out: &mut [f64]) {
        for (o, g) in out.iter_mut().zip(&self.grad) {
            *o = g.eval(xi);
        }
    }
    fn has_hessian(&self) -> bool {
        true
    }
    fn hessian(&self, xi: &[f64], out: &mut [f64]) {
        let d = self.dim;
        let mut idx = 0;
        for j in 0..d {
            for k in j..d {
                let v = self.hess[idx].eval(xi);
                out[j * d + k] = v;
                out[k * d + j] = v;
                idx += 1;
            }
        }
    }
    fn min_dim(&self) -> usize {
        self.ast.max_coordinate().map_or(0, |k| k + 1)
    }
    fn level_geometry(&self) -> Option<LevelGeometry> {
        match self.ast {
            Expr::Norm2 => Some(LevelGeometry::Sphere),
            Expr::Xi(k) => {
                let mut weights = vec![0.0; k + 1];
                weights[k] = 1.0;
                Some(LevelGeometry::Hyperplane { weights })
            }
            _ => None,
        }
    }
    fn describe(&self) -> String {
        self.source.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence() {
        let e = parse("1 + 2 * 3 ^ 2 - -4", None).unwrap();
        assert_eq!(e.eval(&[]), 1.0 + 18.0 + 4.0);
        let e = parse("-2^2", None).unwrap();
        assert_eq!(e.eval(&[]), -4.0);
        let e = parse("(1 + 2) / 4 * 2", None).unwrap();
        assert_eq!(e.eval(&[]), 1.5);
        assert_eq!(parse("2^-1", None).unwrap().eval(&[]), 0.5);
        assert_eq!(parse("1.5e1", None).unwrap().eval(&[]), 15.0);
    }

    #[test]
    fn functions() {
        let xi = [0.5, -2.0];
        let e = parse(
            "exp(xi(1)) + sin(xi(2)) * cos(xi(1)) + abs(xi(2)) + min(xi(1), xi(2)) + max(1, 2)",
            None,
        )
        .unwrap();
        let expect = 0.5f64.exp() + (-2.0f64).sin() * 0.5f64.cos() + 2.0 - 2.0 + 2.0;
        assert!((e.eval(&xi) - expect).abs() < 1e-15);
        assert_eq!(parse("norm2()", None).unwrap().eval(&xi), 4.25);
    }

    #[test]
    fn index_error_carries_position() {
        let err = parse("xi(5)", Some(3)).unwrap_err();
        match err {
            Error::Expr { position, message } => {
                assert_eq!(position, 3);
                assert!(message.contains("exceeds"));
            }
            other => panic!("{other:?}"),
        }
        assert!(parse("xi(0)", Some(3)).is_err());
    }

    #[test]
    fn malformed_inputs() {
        for (src, pos) in [
            ("1 +", 3),
            ("foo(1)", 0),
            ("xi(1", 4),
            ("2 $ 3", 2),
            ("2^1.5", 2),
            ("1 2", 2),
        ] {
            match parse(src, Some(3)) {
                Err(Error::Expr { position, .. }) => assert_eq!(position, pos, "{src}"),
                other => panic!("{src}: {other:?}"),
            }
        }
    }

    #[test]
    fn symbolic_gradient_of_norm2_minus_linear() {
        let f = ExprFunctional::parse("norm2() - 2*xi(1)", 3).unwrap();
        let xi = [0.4, -1.0, 2.5];
        let mut g = vec![0.0; 3];
        f.gradient(&xi, &mut g);
        assert_eq!(g, vec![2.0 * 0.4 - 2.0, -2.0, 5.0]);
        let mut h = vec![0.0; 9];
        f.hessian(&xi, &mut h);
        assert_eq!(h, vec![2.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 2.0]);
    }

    #[test]
    fn kinks_differentiate_piecewise() {
        let f = ExprFunctional::parse("min(1, abs(xi(1)))", 2).unwrap();
        let mut g = vec![0.0; 2];
        f.gradient(&[-0.5, 0.0], &mut g);
        assert_eq!(g, vec![-1.0, 0.0]);
        f.gradient(&[3.0, 0.0], &mut g);
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn min_dim_tracks_coordinates() {
        assert_eq!(ExprFunctional::parse("xi(3) + 1", 5).unwrap().min_dim(), 3);
        assert_eq!(ExprFunctional::parse("norm2()", 5).unwrap().min_dim(), 0);
    }
}
