//! Arithmetic expressions over `x1..xn` with exact first and second
//! derivatives by forward-mode automatic differentiation.
//!
//! Grammar (usual precedence, `^` right-associative and binding tighter than
//! unary minus, so `-x^2 = -(x^2)`):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := ('-' | '+') unary | power
//! power   := primary ('^' unary)?
//! primary := number | name | name '(' expr ')' | '(' expr ')'
//! ```
//!
//! Names: `x1`..`x8`, the aliases `x`, `y`, `z` for the first three
//! coordinates, the constants `pi` and `e`, and the functions `sin`, `cos`,
//! `tan`, `exp`, `ln`/`log`, `sqrt`, `abs`. Callers may register extra
//! variable aliases (the radial profile parser maps `r` to the first slot).

use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector, MAX_DIM, ZERO_MAT, ZERO_VEC};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Ln,
    Sqrt,
    Abs,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "exp" => Func::Exp,
            "ln" | "log" => Func::Ln,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Num(f64),
    Var(usize),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

/// A parsed expression together with its source text.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    source: String,
    root: Node,
    num_vars: usize,
}

/// Scalar types an [`Expr`] can be evaluated over.
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn constant(c: f64) -> Self;
    fn value(&self) -> f64;
    /// Applies a scalar function given its value and first two derivatives at `value()`.
    fn chain(self, f: f64, df: f64, d2f: f64) -> Self;
}

impl Real for f64 {
    fn constant(c: f64) -> Self {
        c
    }
    fn value(&self) -> f64 {
        *self
    }
    fn chain(self, f: f64, _df: f64, _d2f: f64) -> Self {
        f
    }
}

/// Second-order forward-mode dual number in `dim` variables.
#[derive(Clone, Copy, Debug)]
pub struct Dual2 {
    pub dim: usize,
    pub val: f64,
    pub grad: Vector,
    pub hess: Matrix,
}

impl Dual2 {
    pub fn constant_in(dim: usize, c: f64) -> Self {
        Dual2 {
            dim,
            val: c,
            grad: ZERO_VEC,
            hess: ZERO_MAT,
        }
    }

    pub fn variable(dim: usize, index: usize, value: f64) -> Self {
        let mut d = Dual2::constant_in(dim, value);
        d.grad[index] = 1.0;
        d
    }

    fn dims(a: &Self, b: &Self) -> usize {
        a.dim.max(b.dim)
    }
}

impl Add for Dual2 {
    type Output = Dual2;
    fn add(self, rhs: Dual2) -> Dual2 {
        let n = Dual2::dims(&self, &rhs);
        let mut out = Dual2::constant_in(n, self.val + rhs.val);
        for i in 0..n {
            out.grad[i] = self.grad[i] + rhs.grad[i];
            for j in 0..n {
                out.hess[i][j] = self.hess[i][j] + rhs.hess[i][j];
            }
        }
        out
    }
}

impl Sub for Dual2 {
    type Output = Dual2;
    fn sub(self, rhs: Dual2) -> Dual2 {
        self + (-rhs)
    }
}

impl Neg for Dual2 {
    type Output = Dual2;
    fn neg(self) -> Dual2 {
        let n = self.dim;
        let mut out = self;
        out.val = -out.val;
        for i in 0..n {
            out.grad[i] = -out.grad[i];
            for j in 0..n {
                out.hess[i][j] = -out.hess[i][j];
            }
        }
        out
    }
}

impl Mul for Dual2 {
    type Output = Dual2;
    fn mul(self, rhs: Dual2) -> Dual2 {
        let n = Dual2::dims(&self, &rhs);
        let (a, b) = (self.val, rhs.val);
        let mut out = Dual2::constant_in(n, a * b);
        for i in 0..n {
            out.grad[i] = a * rhs.grad[i] + b * self.grad[i];
            for j in 0..n {
                out.hess[i][j] = a * rhs.hess[i][j]
                    + b * self.hess[i][j]
                    + self.grad[i] * rhs.grad[j]
                    + rhs.grad[i] * self.grad[j];
            }
        }
        out
    }
}

impl Div for Dual2 {
    type Output = Dual2;
    fn div(self, rhs: Dual2) -> Dual2 {
        let b = rhs.val;
        self * rhs.chain(1.0 / b, -1.0 / (b * b), 2.0 / (b * b * b))
    }
}

impl Real for Dual2 {
    fn constant(c: f64) -> Self {
        // Dimension is widened on first contact with a variable.
        Dual2::constant_in(0, c)
    }
    fn value(&self) -> f64 {
        self.val
    }
    fn chain(self, f: f64, df: f64, d2f: f64) -> Self {
        let n = self.dim;
        let mut out = Dual2::constant_in(n, f);
        for i in 0..n {
            out.grad[i] = df * self.grad[i];
            for j in 0..n {
                out.hess[i][j] = d2f * self.grad[i] * self.grad[j] + df * self.hess[i][j];
            }
        }
        out
    }
}

fn apply<T: Real>(func: Func, u: T) -> T {
    let x = u.value();
    match func {
        Func::Sin => u.chain(x.sin(), x.cos(), -x.sin()),
        Func::Cos => u.chain(x.cos(), -x.sin(), -x.cos()),
        Func::Tan => {
            let t = x.tan();
            let sec2 = 1.0 + t * t;
            u.chain(t, sec2, 2.0 * t * sec2)
        }
        Func::Exp => {
            let e = x.exp();
            u.chain(e, e, e)
        }
        Func::Ln => u.chain(x.ln(), 1.0 / x, -1.0 / (x * x)),
        Func::Sqrt => {
            let s = x.sqrt();
            u.chain(s, 0.5 / s, -0.25 / (s * x))
        }
        Func::Abs => u.chain(x.abs(), x.signum(), 0.0),
    }
}

fn powc<T: Real>(u: T, c: f64) -> T {
    let x = u.value();
    if c == 0.0 {
        return T::constant(1.0);
    }
    if c.fract() == 0.0 && c.abs() < 64.0 {
        let k = c as i32;
        let f = x.powi(k);
        let df = if k == 0 { 0.0 } else { c * x.powi(k - 1) };
        let d2f = if (0..=1).contains(&k) {
            0.0
        } else {
            c * (c - 1.0) * x.powi(k - 2)
        };
        u.chain(f, df, d2f)
    } else {
        u.chain(
            x.powf(c),
            c * x.powf(c - 1.0),
            c * (c - 1.0) * x.powf(c - 2.0),
        )
    }
}

fn eval_node<T: Real>(node: &Node, vars: &[T]) -> T {
    match node {
        Node::Num(c) => T::constant(*c),
        Node::Var(i) => vars[*i],
        Node::Neg(a) => -eval_node(a, vars),
        Node::Add(a, b) => eval_node(a, vars) + eval_node(b, vars),
        Node::Sub(a, b) => eval_node(a, vars) - eval_node(b, vars),
        Node::Mul(a, b) => eval_node(a, vars) * eval_node(b, vars),
        Node::Div(a, b) => eval_node(a, vars) / eval_node(b, vars),
        Node::Pow(a, b) => {
            let base = eval_node(a, vars);
            match constant_value(b) {
                Some(c) => powc(base, c),
                None => {
                    // a^b = exp(b ln a)
                    let e = eval_node(b, vars);
                    apply(Func::Exp, e * apply(Func::Ln, base))
                }
            }
        }
        Node::Call(f, a) => apply(*f, eval_node(a, vars)),
    }
}

fn constant_value(node: &Node) -> Option<f64> {
    match node {
        Node::Num(c) => Some(*c),
        Node::Var(_) => None,
        Node::Neg(a) => constant_value(a).map(|v| -v),
        Node::Add(a, b) => Some(constant_value(a)? + constant_value(b)?),
        Node::Sub(a, b) => Some(constant_value(a)? - constant_value(b)?),
        Node::Mul(a, b) => Some(constant_value(a)? * constant_value(b)?),
        Node::Div(a, b) => Some(constant_value(a)? / constant_value(b)?),
        Node::Pow(a, b) => Some(constant_value(a)?.powf(constant_value(b)?)),
        Node::Call(f, a) => Some(apply(*f, constant_value(a)?)),
    }
}

fn contains_abs(node: &Node) -> bool {
    match node {
        Node::Num(_) | Node::Var(_) => false,
        Node::Neg(a) => contains_abs(a),
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => {
            contains_abs(a) || contains_abs(b)
        }
        Node::Call(f, a) => *f == Func::Abs || contains_abs(a),
    }
}

fn max_var(node: &Node) -> Option<usize> {
    match node {
        Node::Num(_) => None,
        Node::Var(i) => Some(*i),
        Node::Neg(a) | Node::Call(_, a) => max_var(a),
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => {
            match (max_var(a), max_var(b)) {
                (Some(x), Some(y)) => Some(x.max(y)),
                (x, y) => x.or(y),
            }
        }
    }
}

impl Expr {
    /// Parses with the default variable names `x1..x8`, `x`, `y`, `z`.
    pub fn parse(source: &str) -> Result<Expr> {
        Expr::parse_with_aliases(source, &[])
    }

    /// Parses with additional `(name, slot)` variable aliases.
    pub fn parse_with_aliases(source: &str, aliases: &[(&str, usize)]) -> Result<Expr> {
        let tokens = tokenize(source)?;
        let mut parser = Parser {
            tokens,
            pos: 0,
            aliases,
            end: source.len(),
        };
        let root = parser.expr()?;
        if let Some(tok) = parser.peek() {
            return Err(Error::Parse {
                position: tok.pos,
                message: format!("unexpected {}", tok.kind),
            });
        }
        let num_vars = max_var(&root).map_or(0, |i| i + 1);
        Ok(Expr {
            source: source.to_string(),
            root,
            num_vars,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// One past the highest variable slot referenced.
    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    /// False when the expression contains `abs`, whose kink defeats analytic derivatives.
    pub fn is_smooth(&self) -> bool {
        !contains_abs(&self.root)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        eval_node(&self.root, x)
    }

    pub fn eval_checked(&self, x: &[f64]) -> Result<f64> {
        self.check_arity(x.len())?;
        let v = self.eval(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Domain(format!(
                "`{}` evaluates to {v} at {x:?}",
                self.source
            )))
        }
    }

    /// Value, gradient and Hessian in `x.len()` variables.
    pub fn eval_dual(&self, x: &[f64]) -> Dual2 {
        let n = x.len();
        let vars: Vec<Dual2> = (0..n).map(|i| Dual2::variable(n, i, x[i])).collect();
        let mut out = eval_node(&self.root, &vars);
        out.dim = n;
        out
    }

    pub fn check_arity(&self, n: usize) -> Result<()> {
        if self.num_vars > n {
            Err(Error::Dimension(format!(
                "`{}` uses x{} but only {n} coordinates are available",
                self.source, self.num_vars
            )))
        } else {
            Ok(())
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TokenKind {
    Num(f64),
    Ident(String),
    Op(char),
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenKind::Num(v) => write!(f, "number {v}"),
            TokenKind::Ident(s) => write!(f, "name `{s}`"),
            TokenKind::Op(c) => write!(f, "`{c}`"),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokenKind,
    pos: usize,
}

fn tokenize(src: &str) -> Result<Vec<Token>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < bytes.len() && ((bytes[i] as char).is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            // exponent part
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && (bytes[j] as char).is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text = &src[start..i];
            let v: f64 = text.parse().map_err(|_| Error::Parse {
                position: start,
                message: format!("malformed number `{text}`"),
            })?;
            out.push(Token {
                kind: TokenKind::Num(v),
                pos: start,
            });
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token {
                kind: TokenKind::Ident(src[start..i].to_string()),
                pos: start,
            });
        } else if "+-*/^()".contains(c) {
            out.push(Token {
                kind: TokenKind::Op(c),
                pos: i,
            });
            i += 1;
        } else {
            return Err(Error::Parse {
                position: i,
                message: format!("unexpected character `{c}`"),
            });
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    aliases: &'a [(&'a str, usize)],
    end: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn peek_op(&self) -> Option<char> {
        match self.peek() {
            Some(Token {
                kind: TokenKind::Op(c),
                ..
            }) => Some(*c),
            _ => None,
        }
    }

    fn here(&self) -> usize {
        self.peek().map_or(self.end, |t| t.pos)
    }

    fn expect_op(&mut self, op: char) -> Result<()> {
        if self.peek_op() == Some(op) {
            self.pos += 1;
            Ok(())
        } else {
            Err(Error::Parse {
                position: self.here(),
                message: format!("expected `{op}`"),
            })
        }
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        while let Some(op @ ('+' | '-')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if op == '+' {
                Node::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Node::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        while let Some(op @ ('*' | '/')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if op == '*' {
                Node::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Node::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node> {
        match self.peek_op() {
            Some('-') => {
                self.pos += 1;
                Ok(Node::Neg(Box::new(self.unary()?)))
            }
            Some('+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.primary()?;
        if self.peek_op() == Some('^') {
            self.pos += 1;
            let exponent = self.unary()?;
            Ok(Node::Pow(Box::new(base), Box::new(exponent)))
        } else {
            Ok(base)
        }
    }

    fn primary(&mut self) -> Result<Node> {
        let position = self.here();
        let Some(tok) = self.peek().cloned() else {
            return Err(Error::Parse {
                position,
                message: "unexpected end of expression".into(),
            });
        };
        self.pos += 1;
        match tok.kind {
            TokenKind::Num(v) => Ok(Node::Num(v)),
            TokenKind::Op('(') => {
                let inner = self.expr()?;
                self.expect_op(')')?;
                Ok(inner)
            }
            TokenKind::Op(c) => Err(Error::Parse {
                position,
                message: format!("unexpected `{c}`"),
            }),
            TokenKind::Ident(name) => {
                if let Some(func) = Func::from_name(&name) {
                    self.expect_op('(')?;
                    let arg = self.expr()?;
                    self.expect_op(')')?;
                    return Ok(Node::Call(func, Box::new(arg)));
                }
                if let Some(&(_, slot)) = self.aliases.iter().find(|(a, _)| *a == name) {
                    return Ok(Node::Var(slot));
                }
                match name.as_str() {
                    "pi" => Ok(Node::Num(std::f64::consts::PI)),
                    "e" => Ok(Node::Num(std::f64::consts::E)),
                    "x" => Ok(Node::Var(0)),
                    "y" => Ok(Node::Var(1)),
                    "z" => Ok(Node::Var(2)),
                    _ => {
                        if let Some(idx) = name.strip_prefix('x').and_then(|d| d.parse::<usize>().ok()) {
                            if (1..=MAX_DIM).contains(&idx) {
                                return Ok(Node::Var(idx - 1));
                            }
                        }
                        Err(Error::Parse {
                            position,
                            message: format!("unknown name `{name}`"),
                        })
                    }
                }
            }
        }
    }
}

impl fmt::Display for Func {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
