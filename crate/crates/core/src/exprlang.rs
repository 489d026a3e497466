//! Coefficient expression language.
//!
//! Expressions are small trees over the variables `x`, `lambda`, `u1`..`u4`,
//! the constant `pi`, the functions `sin cos exp sqrt tanh` and the binary
//! operators `+ - * /` plus `^` with an integer exponent. Derivatives are
//! produced by rewriting the tree, so they are exact up to floating-point
//! evaluation.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Free variables an expression may reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    X,
    Lambda,
    U1,
    U2,
    U3,
    U4,
}

impl Var {
    pub const ALL: [Var; 6] = [Var::X, Var::Lambda, Var::U1, Var::U2, Var::U3, Var::U4];

    /// The u-slot `j` (1-based, as in `u1`..`u4`).
    pub fn u(j: usize) -> Var {
        match j {
            1 => Var::U1,
            2 => Var::U2,
            3 => Var::U3,
            4 => Var::U4,
            _ => panic!("u-slot index {j} out of range 1..=4"),
        }
    }

    fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Var::X => "x",
            Var::Lambda => "lambda",
            Var::U1 => "u1",
            Var::U2 => "u2",
            Var::U3 => "u3",
            Var::U4 => "u4",
        }
    }

    fn from_name(name: &str) -> Option<Var> {
        Var::ALL.into_iter().find(|v| v.name() == name)
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Sqrt,
    Tanh,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Sqrt => "sqrt",
            Func::Tanh => "tanh",
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        [Func::Sin, Func::Cos, Func::Exp, Func::Sqrt, Func::Tanh]
            .into_iter()
            .find(|f| f.name() == name)
    }
}

/// Values bound to every variable, indexed by [`Var`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Env([f64; 6]);

impl Env {
    pub fn new(x: f64, lambda: f64, u: [f64; 4]) -> Self {
        Env([x, lambda, u[0], u[1], u[2], u[3]])
    }

    pub fn get(&self, var: Var) -> f64 {
        self.0[var.index()]
    }

    pub fn set(&mut self, var: Var, value: f64) {
        self.0[var.index()] = value;
    }

    pub fn with(mut self, var: Var, value: f64) -> Self {
        self.set(var, value);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at byte {pos}: expected {expected}")]
    Syntax { pos: usize, expected: String },
    #[error("unknown identifier `{name}` at byte {pos}")]
    UnknownIdentifier { name: String, pos: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("sqrt of negative argument {0}")]
    NegativeSqrt(f64),
    #[error("non-finite intermediate value")]
    NonFinite,
}

/// Expression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(Var),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Call(Func, Box<Expr>),
}

// Constructors fold constants and the trivial 0/1 cases so that repeated
// differentiation does not blow up the tree.
impl Expr {
    pub fn constant(c: f64) -> Expr {
        Expr::Const(c)
    }

    pub fn var(v: Var) -> Expr {
        Expr::Var(v)
    }

    fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_const() == Some(0.0)
    }

    fn neg(e: Expr) -> Expr {
        match e {
            Expr::Const(c) => Expr::Const(-c),
            Expr::Neg(inner) => *inner,
            e => Expr::Neg(Box::new(e)),
        }
    }

    fn add(l: Expr, r: Expr) -> Expr {
        match (l.as_const(), r.as_const()) {
            (Some(a), Some(b)) => Expr::Const(a + b),
            (Some(0.0), _) => r,
            (_, Some(0.0)) => l,
            _ => Expr::Add(Box::new(l), Box::new(r)),
        }
    }

    fn sub(l: Expr, r: Expr) -> Expr {
        match (l.as_const(), r.as_const()) {
            (Some(a), Some(b)) => Expr::Const(a - b),
            (Some(0.0), _) => Expr::neg(r),
            (_, Some(0.0)) => l,
            _ => Expr::Sub(Box::new(l), Box::new(r)),
        }
    }

    fn mul(l: Expr, r: Expr) -> Expr {
        match (l.as_const(), r.as_const()) {
            (Some(a), Some(b)) => Expr::Const(a * b),
            (Some(0.0), _) => Expr::Const(0.0),
            (_, Some(0.0)) => Expr::Const(0.0),
            (Some(1.0), _) => r,
            (_, Some(1.0)) => l,
            _ => Expr::Mul(Box::new(l), Box::new(r)),
        }
    }

    fn div(l: Expr, r: Expr) -> Expr {
        match (l.as_const(), r.as_const()) {
            (Some(a), Some(b)) if b != 0.0 => Expr::Const(a / b),
            (Some(0.0), _) => Expr::Const(0.0),
            (_, Some(1.0)) => l,
            _ => Expr::Div(Box::new(l), Box::new(r)),
        }
    }

    fn pow(base: Expr, n: i32) -> Expr {
        match (base.as_const(), n) {
            (_, 0) => Expr::Const(1.0),
            (_, 1) => base,
            (Some(c), n) if c != 0.0 || n > 0 => Expr::Const(c.powi(n)),
            _ => Expr::Pow(Box::new(base), n),
        }
    }

    fn call(f: Func, arg: Expr) -> Expr {
        Expr::Call(f, Box::new(arg))
    }

    /// Evaluates the expression.
    pub fn eval(&self, env: &Env) -> Result<f64, EvalError> {
        let value = match self {
            Expr::Const(c) => *c,
            Expr::Var(v) => env.get(*v),
            Expr::Neg(e) => -e.eval(env)?,
            Expr::Add(l, r) => l.eval(env)? + r.eval(env)?,
            Expr::Sub(l, r) => l.eval(env)? - r.eval(env)?,
            Expr::Mul(l, r) => l.eval(env)? * r.eval(env)?,
            Expr::Div(l, r) => {
                let num = l.eval(env)?;
                let den = r.eval(env)?;
                if den == 0.0 {
                    return Err(EvalError::DivisionByZero);
                }
                num / den
            }
            Expr::Pow(base, n) => {
                let b = base.eval(env)?;
                if b == 0.0 && *n < 0 {
                    return Err(EvalError::DivisionByZero);
                }
                b.powi(*n)
            }
            Expr::Call(func, arg) => {
                let a = arg.eval(env)?;
                match func {
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Exp => a.exp(),
                    Func::Tanh => a.tanh(),
                    Func::Sqrt => {
                        if a < 0.0 {
                            return Err(EvalError::NegativeSqrt(a));
                        }
                        a.sqrt()
                    }
                }
            }
        };
        if value.is_finite() {
            Ok(value)
        } else {
            Err(EvalError::NonFinite)
        }
    }

    /// Exact partial derivative of the given order with respect to `var`.
    pub fn diff(&self, var: Var, order: u32) -> Expr {
        let mut out = self.clone();
        for _ in 0..order {
            out = out.diff1(var);
        }
        out
    }

    fn diff1(&self, var: Var) -> Expr {
        match self {
            Expr::Const(_) => Expr::Const(0.0),
            Expr::Var(v) => Expr::Const(if *v == var { 1.0 } else { 0.0 }),
            Expr::Neg(e) => Expr::neg(e.diff1(var)),
            Expr::Add(l, r) => Expr::add(l.diff1(var), r.diff1(var)),
            Expr::Sub(l, r) => Expr::sub(l.diff1(var), r.diff1(var)),
            Expr::Mul(l, r) => Expr::add(
                Expr::mul(l.diff1(var), (**r).clone()),
                Expr::mul((**l).clone(), r.diff1(var)),
            ),
            Expr::Div(l, r) => {
                let dl = l.diff1(var);
                let dr = r.diff1(var);
                if dr.is_zero() {
                    return Expr::div(dl, (**r).clone());
                }
                Expr::div(
                    Expr::sub(
                        Expr::mul(dl, (**r).clone()),
                        Expr::mul((**l).clone(), dr),
                    ),
                    Expr::pow((**r).clone(), 2),
                )
            }
            Expr::Pow(base, n) => {
                let db = base.diff1(var);
                Expr::mul(
                    Expr::mul(Expr::Const(*n as f64), Expr::pow((**base).clone(), n - 1)),
                    db,
                )
            }
            Expr::Call(func, arg) => {
                let da = arg.diff1(var);
                if da.is_zero() {
                    return Expr::Const(0.0);
                }
                let a = (**arg).clone();
                let outer = match func {
                    Func::Sin => Expr::call(Func::Cos, a),
                    Func::Cos => Expr::neg(Expr::call(Func::Sin, a)),
                    Func::Exp => Expr::call(Func::Exp, a),
                    Func::Sqrt => Expr::div(Expr::Const(0.5), Expr::call(Func::Sqrt, a)),
                    Func::Tanh => Expr::sub(Expr::Const(1.0), Expr::pow(Expr::call(Func::Tanh, a), 2)),
                };
                Expr::mul(outer, da)
            }
        }
    }

    /// Replaces every occurrence of `var` with the constant `value`.
    pub fn substitute(&self, var: Var, value: f64) -> Expr {
        match self {
            Expr::Const(c) => Expr::Const(*c),
            Expr::Var(v) if *v == var => Expr::Const(value),
            Expr::Var(v) => Expr::Var(*v),
            Expr::Neg(e) => Expr::neg(e.substitute(var, value)),
            Expr::Add(l, r) => Expr::add(l.substitute(var, value), r.substitute(var, value)),
            Expr::Sub(l, r) => Expr::sub(l.substitute(var, value), r.substitute(var, value)),
            Expr::Mul(l, r) => Expr::mul(l.substitute(var, value), r.substitute(var, value)),
            Expr::Div(l, r) => Expr::div(l.substitute(var, value), r.substitute(var, value)),
            Expr::Pow(b, n) => Expr::pow(b.substitute(var, value), *n),
            Expr::Call(f, a) => Expr::call(*f, a.substitute(var, value)),
        }
    }

    /// True if `var` occurs anywhere in the tree.
    pub fn references(&self, var: Var) -> bool {
        match self {
            Expr::Const(_) => false,
            Expr::Var(v) => *v == var,
            Expr::Neg(e) | Expr::Pow(e, _) | Expr::Call(_, e) => e.references(var),
            Expr::Add(l, r) | Expr::Sub(l, r) | Expr::Mul(l, r) | Expr::Div(l, r) => {
                l.references(var) || r.references(var)
            }
        }
    }

    /// Number of nodes.
    pub fn size(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Var(_) => 1,
            Expr::Neg(e) | Expr::Pow(e, _) | Expr::Call(_, e) => 1 + e.size(),
            Expr::Add(l, r) | Expr::Sub(l, r) | Expr::Mul(l, r) | Expr::Div(l, r) => {
                1 + l.size() + r.size()
            }
        }
    }
}

impl std::ops::Add for Expr {
    type Output = Expr;
    fn add(self, rhs: Expr) -> Expr {
        Expr::add(self, rhs)
    }
}

impl std::ops::Sub for Expr {
    type Output = Expr;
    fn sub(self, rhs: Expr) -> Expr {
        Expr::sub(self, rhs)
    }
}

impl std::ops::Mul for Expr {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        Expr::mul(self, rhs)
    }
}

impl std::ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::neg(self)
    }
}

impl fmt::Display for Expr {
    // Fully parenthesised output; `{:?}` on f64 gives the shortest string
    // that reads back to the same value.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) => {
                write!(f, "(-{:?})", -c)
            }
            Expr::Const(c) => write!(f, "{c:?}"),
            Expr::Var(v) => write!(f, "{v}"),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Add(l, r) => write!(f, "({l} + {r})"),
            Expr::Sub(l, r) => write!(f, "({l} - {r})"),
            Expr::Mul(l, r) => write!(f, "({l} * {r})"),
            Expr::Div(l, r) => write!(f, "({l} / {r})"),
            Expr::Pow(b, n) => write!(f, "({b}^{n})"),
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

impl FromStr for Expr {
    type Err = ParseError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}

/// Parses an expression from text.
pub fn parse(text: &str) -> Result<Expr, ParseError> {
    let tokens = lex(text)?;
    let mut parser = Parser {
        tokens,
        pos: 0,
        end: text.len(),
    };
    let expr = parser.expr()?;
    match parser.peek() {
        None => Ok(expr),
        Some(tok) => Err(ParseError::Syntax {
            pos: tok.pos,
            expected: "operator or end of input".into(),
        }),
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    pos: usize,
}

fn lex(text: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() || c == '.' {
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
            let lit = &text[start..i];
            let value = lit.parse::<f64>().map_err(|_| ParseError::Syntax {
                pos: start,
                expected: "numeric literal".into(),
            })?;
            out.push(Token { tok: Tok::Num(value), pos: start });
        } else if c.is_ascii_alphabetic() || c == '_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token {
                tok: Tok::Ident(text[start..i].to_string()),
                pos: start,
            });
        } else {
            let tok = match c {
                '+' | '-' | '*' | '/' | '^' => Tok::Op(c),
                '(' => Tok::LParen,
                ')' => Tok::RParen,
                _ => {
                    return Err(ParseError::Syntax {
                        pos: start,
                        expected: "number, identifier, operator or parenthesis".into(),
                    })
                }
            };
            // multi-byte UTF-8 characters are rejected above, so one byte per token here
            i += 1;
            out.push(Token { tok, pos: start });
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn here(&self) -> usize {
        self.peek().map_or(self.end, |t| t.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn eat_op(&mut self, op: char) -> bool {
        if matches!(self.peek(), Some(Token { tok: Tok::Op(c), .. }) if *c == op) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), ParseError> {
        match self.peek() {
            Some(t) if t.tok == want => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(ParseError::Syntax {
                pos: self.here(),
                expected: what.into(),
            }),
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            if self.eat_op('+') {
                lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat_op('-') {
                lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat_op('*') {
                lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat_op('/') {
                lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat_op('-') {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        if self.eat_op('+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if self.eat_op('^') {
            let n = self.integer_exponent()?;
            return Ok(Expr::Pow(Box::new(base), n));
        }
        Ok(base)
    }

    fn integer_exponent(&mut self) -> Result<i32, ParseError> {
        let pos = self.here();
        let bad = || ParseError::Syntax {
            pos,
            expected: "integer exponent".into(),
        };
        let parenthesised = matches!(self.peek(), Some(Token { tok: Tok::LParen, .. }));
        if parenthesised {
            self.pos += 1;
        }
        let negative = self.eat_op('-');
        let value = match self.next() {
            Some(Token { tok: Tok::Num(v), .. }) if v.fract() == 0.0 && v.abs() <= i32::MAX as f64 => {
                v as i32
            }
            _ => return Err(bad()),
        };
        if parenthesised {
            self.expect(Tok::RParen, "`)`")?;
        }
        Ok(if negative { -value } else { value })
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let pos = self.here();
        match self.next() {
            Some(Token { tok: Tok::Num(v), .. }) => Ok(Expr::Const(v)),
            Some(Token { tok: Tok::LParen, .. }) => {
                let inner = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Some(Token { tok: Tok::Ident(name), pos }) => {
                if let Some(func) = Func::from_name(&name) {
                    self.expect(Tok::LParen, "`(` after function name")?;
                    let arg = self.expr()?;
                    self.expect(Tok::RParen, "`)`")?;
                    Ok(Expr::Call(func, Box::new(arg)))
                } else if name == "pi" {
                    Ok(Expr::Const(PI))
                } else if let Some(v) = Var::from_name(&name) {
                    Ok(Expr::Var(v))
                } else {
                    Err(ParseError::UnknownIdentifier { name, pos })
                }
            }
            _ => Err(ParseError::Syntax {
                pos,
                expected: "number, identifier or `(`".into(),
            }),
        }
    }
}
