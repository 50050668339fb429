//! Payoff expressions in one variable `x`.
//!
//! Grammar, loosest binding first: `+ -`, then `* /`, then unary minus, then `^`
//! (right-associative). Functions: `max(a,b)`, `min(a,b)`, `exp`, `log`, `sqrt`,
//! `abs`, `pos` (`pos(t) = max(t, 0)`). Other identifiers resolve against the
//! constants supplied at parse time.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::{lit, to_f64, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Max,
    Min,
    Exp,
    Log,
    Sqrt,
    Abs,
    Pos,
}

impl Func {
    fn lookup(name: &str) -> Option<Func> {
        Some(match name {
            "max" => Func::Max,
            "min" => Func::Min,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "pos" => Func::Pos,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Max => "max",
            Func::Min => "min",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Pos => "pos",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Max | Func::Min => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }

    fn prec(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
            BinOp::Pow => 4,
        }
    }
}

/// Expression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var,
    /// Named constant, bound to its value at parse time.
    Const(String, f64),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

const PREC_NEG: u8 = 3;
const PREC_ATOM: u8 = 5;

impl Expr {
    fn prec(&self) -> u8 {
        match self {
            Expr::Bin(op, _, _) => op.prec(),
            Expr::Neg(_) => PREC_NEG,
            _ => PREC_ATOM,
        }
    }

    /// Recursive reference evaluator.
    pub fn eval_tree<T: Real>(&self, x: T) -> Result<T> {
        match self {
            Expr::Num(v) => Ok(lit(*v)),
            Expr::Var => Ok(x),
            Expr::Const(_, v) => Ok(lit(*v)),
            Expr::Neg(e) => Ok(-e.eval_tree(x)?),
            Expr::Bin(op, l, r) => apply_bin(*op, l.eval_tree(x)?, r.eval_tree(x)?),
            Expr::Call(f, args) => {
                let a = args[0].eval_tree(x)?;
                let b = if args.len() > 1 {
                    args[1].eval_tree(x)?
                } else {
                    T::zero()
                };
                apply_func(*f, a, b)
            }
        }
    }

    fn eval_dual<T: Real>(&self, x: Dual<T>, side: Side) -> Result<Dual<T>> {
        match self {
            Expr::Num(v) | Expr::Const(_, v) => Ok(Dual::constant(lit(*v))),
            Expr::Var => Ok(x),
            Expr::Neg(e) => {
                let a = e.eval_dual(x, side)?;
                Ok(Dual { v: -a.v, d: -a.d })
            }
            Expr::Bin(op, l, r) => dual_bin(*op, l.eval_dual(x, side)?, r.eval_dual(x, side)?),
            Expr::Call(f, args) => {
                let a = args[0].eval_dual(x, side)?;
                let b = if args.len() > 1 {
                    args[1].eval_dual(x, side)?
                } else {
                    Dual::constant(T::zero())
                };
                dual_func(*f, a, b, side)
            }
        }
    }

    fn compile(&self, code: &mut Vec<Instr>) {
        match self {
            Expr::Num(v) | Expr::Const(_, v) => code.push(Instr::Push(*v)),
            Expr::Var => code.push(Instr::X),
            Expr::Neg(e) => {
                e.compile(code);
                code.push(Instr::Neg);
            }
            Expr::Bin(op, l, r) => {
                l.compile(code);
                r.compile(code);
                code.push(Instr::Bin(*op));
            }
            Expr::Call(f, args) => {
                for a in args {
                    a.compile(code);
                }
                code.push(Instr::Call(*f));
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(out, "{v:?}"),
            Expr::Var => write!(out, "x"),
            Expr::Const(name, _) => write!(out, "{name}"),
            Expr::Neg(e) => {
                if e.prec() < PREC_NEG {
                    write!(out, "-({e})")
                } else {
                    write!(out, "-{e}")
                }
            }
            Expr::Bin(op, l, r) => {
                let p = op.prec();
                let lp = l.prec() < p || (*op == BinOp::Pow && l.prec() <= p);
                let rp = r.prec() < p || (*op != BinOp::Pow && r.prec() == p);
                if lp {
                    write!(out, "({l})")?;
                } else {
                    write!(out, "{l}")?;
                }
                write!(out, " {} ", op.symbol())?;
                if rp {
                    write!(out, "({r})")
                } else {
                    write!(out, "{r}")
                }
            }
            Expr::Call(f, args) => {
                write!(out, "{}(", f.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(out, ", ")?;
                    }
                    write!(out, "{a}")?;
                }
                write!(out, ")")
            }
        }
    }
}

/// Side from which a one-sided derivative is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy)]
struct Dual<T> {
    v: T,
    d: T,
}

impl<T: Real> Dual<T> {
    fn constant(v: T) -> Self {
        Dual { v, d: T::zero() }
    }
}

fn domain<T: Real>(function: &str, argument: T) -> Error {
    Error::EvalDomain {
        function: function.to_string(),
        argument: to_f64(argument),
    }
}

fn finite<T: Real>(function: &str, argument: T, v: T) -> Result<T> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(domain(function, argument))
    }
}

fn apply_bin<T: Real>(op: BinOp, a: T, b: T) -> Result<T> {
    match op {
        BinOp::Add => finite("+", a, a + b),
        BinOp::Sub => finite("-", a, a - b),
        BinOp::Mul => finite("*", a, a * b),
        BinOp::Div => {
            if b == T::zero() {
                return Err(domain("/", b));
            }
            finite("/", b, a / b)
        }
        BinOp::Pow => {
            if a < T::zero() && b.fract() != T::zero() {
                return Err(domain("^", a));
            }
            finite("^", a, a.powf(b))
        }
    }
}

fn apply_func<T: Real>(f: Func, a: T, b: T) -> Result<T> {
    match f {
        Func::Max => Ok(a.max(b)),
        Func::Min => Ok(a.min(b)),
        Func::Exp => finite("exp", a, a.exp()),
        Func::Log => {
            if a <= T::zero() {
                return Err(domain("log", a));
            }
            Ok(a.ln())
        }
        Func::Sqrt => {
            if a < T::zero() {
                return Err(domain("sqrt", a));
            }
            Ok(a.sqrt())
        }
        Func::Abs => Ok(a.abs()),
        Func::Pos => Ok(a.max(T::zero())),
    }
}

fn dual_bin<T: Real>(op: BinOp, a: Dual<T>, b: Dual<T>) -> Result<Dual<T>> {
    let v = apply_bin(op, a.v, b.v)?;
    let d = match op {
        BinOp::Add => a.d + b.d,
        BinOp::Sub => a.d - b.d,
        BinOp::Mul => a.d * b.v + a.v * b.d,
        BinOp::Div => (a.d * b.v - a.v * b.d) / (b.v * b.v),
        BinOp::Pow => {
            if b.d == T::zero() {
                if b.v == T::zero() {
                    T::zero()
                } else {
                    b.v * a.v.powf(b.v - T::one()) * a.d
                }
            } else {
                if a.v <= T::zero() {
                    return Err(domain("^", a.v));
                }
                v * (b.d * a.v.ln() + b.v * a.d / a.v)
            }
        }
    };
    Ok(Dual { v, d })
}

fn dual_func<T: Real>(f: Func, a: Dual<T>, b: Dual<T>, side: Side) -> Result<Dual<T>> {
    let s = match side {
        Side::Right => T::one(),
        Side::Left => -T::one(),
    };
    let v = apply_func(f, a.v, b.v)?;
    let d = match f {
        Func::Max => {
            if a.v > b.v {
                a.d
            } else if b.v > a.v {
                b.d
            } else if s * a.d >= s * b.d {
                a.d
            } else {
                b.d
            }
        }
        Func::Min => {
            if a.v < b.v {
                a.d
            } else if b.v < a.v {
                b.d
            } else if s * a.d <= s * b.d {
                a.d
            } else {
                b.d
            }
        }
        Func::Exp => v * a.d,
        Func::Log => a.d / a.v,
        Func::Sqrt => {
            if a.v == T::zero() {
                if a.d == T::zero() {
                    T::zero()
                } else {
                    T::infinity() * a.d.signum()
                }
            } else {
                a.d / (lit::<T>(2.0) * v)
            }
        }
        Func::Abs => {
            if a.v == T::zero() {
                s * a.d.abs()
            } else {
                a.d * a.v.signum()
            }
        }
        Func::Pos => {
            if a.v > T::zero() {
                a.d
            } else if a.v < T::zero() {
                T::zero()
            } else if s * a.d > T::zero() {
                a.d
            } else {
                T::zero()
            }
        }
    };
    Ok(Dual { v, d })
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Instr {
    Push(f64),
    X,
    Neg,
    Bin(BinOp),
    Call(Func),
}

/// A parsed payoff expression: the tree plus a flat stack program for fast evaluation.
#[derive(Debug, Clone)]
pub struct PayoffExpr {
    source: String,
    ast: Expr,
    code: Vec<Instr>,
    depth: usize,
}

impl PartialEq for PayoffExpr {
    fn eq(&self, other: &Self) -> bool {
        self.ast == other.ast
    }
}

impl fmt::Display for PayoffExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.ast)
    }
}

impl PayoffExpr {
    pub fn from_ast(ast: Expr) -> Self {
        let mut code = Vec::new();
        ast.compile(&mut code);
        let mut depth = 0usize;
        let mut max_depth = 0usize;
        for ins in &code {
            match ins {
                Instr::Push(_) | Instr::X => depth += 1,
                Instr::Neg => {}
                Instr::Bin(_) => depth -= 1,
                Instr::Call(f) => depth -= f.arity() - 1,
            }
            max_depth = max_depth.max(depth);
        }
        PayoffExpr {
            source: ast.to_string(),
            ast,
            code,
            depth: max_depth,
        }
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn ast(&self) -> &Expr {
        &self.ast
    }

    /// Evaluates at `x`; domain violations (log of non-positive, division by zero,
    /// non-finite results, ...) are errors rather than NaN.
    pub fn eval<T: Real>(&self, x: T) -> Result<T> {
        let mut stack: Vec<T> = Vec::with_capacity(self.depth);
        for ins in &self.code {
            match *ins {
                Instr::Push(v) => stack.push(lit(v)),
                Instr::X => stack.push(x),
                Instr::Neg => {
                    let a = stack.pop().expect("stack underflow");
                    stack.push(-a);
                }
                Instr::Bin(op) => {
                    let b = stack.pop().expect("stack underflow");
                    let a = stack.pop().expect("stack underflow");
                    stack.push(apply_bin(op, a, b)?);
                }
                Instr::Call(f) => {
                    let (a, b) = if f.arity() == 2 {
                        let b = stack.pop().expect("stack underflow");
                        (stack.pop().expect("stack underflow"), b)
                    } else {
                        (stack.pop().expect("stack underflow"), T::zero())
                    };
                    stack.push(apply_func(f, a, b)?);
                }
            }
        }
        let v = stack.pop().expect("empty program");
        finite("result", x, v)
    }

    /// Recursive reference evaluation (same semantics as [`PayoffExpr::eval`]).
    pub fn eval_tree<T: Real>(&self, x: T) -> Result<T> {
        let v = self.ast.eval_tree(x)?;
        finite("result", x, v)
    }

    /// Value and one-sided derivative at `x`. Kinks from `max`, `min`, `abs`, `pos`
    /// resolve to the derivative of the branch active on the requested side.
    pub fn eval_with_derivative<T: Real>(&self, x: T, side: Side) -> Result<(T, T)> {
        let r = self.ast.eval_dual(Dual { v: x, d: T::one() }, side)?;
        Ok((r.v, r.d))
    }
}

/// Parses `source`, resolving identifiers other than `x` and the built-in functions
/// against `constants`.
pub fn parse(source: &str, constants: &BTreeMap<String, f64>) -> Result<PayoffExpr> {
    let tokens = lex(source)?;
    let mut p = Parser {
        tokens,
        pos: 0,
        constants,
    };
    let ast = p.expr()?;
    let (tok, at) = p.peek();
    if *tok != Tok::End {
        return Err(Error::Syntax {
            pos: at,
            expected: vec!["operator".into(), "end of input".into()],
        });
    }
    let mut e = PayoffExpr::from_ast(ast);
    e.source = source.to_string();
    Ok(e)
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
    End,
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
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
            let text = &src[start..i];
            let v: f64 = text.parse().map_err(|_| Error::Syntax {
                pos: start,
                expected: vec!["number".into()],
            })?;
            out.push((Tok::Num(v), start));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((Tok::Ident(src[start..i].to_string()), start));
        } else if "+-*/^(),".contains(c) {
            out.push((Tok::Sym(c), i));
            i += 1;
        } else {
            return Err(Error::Syntax {
                pos: i,
                expected: vec!["number".into(), "identifier".into(), "operator".into()],
            });
        }
    }
    out.push((Tok::End, src.len()));
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<(Tok, usize)>,
    pos: usize,
    constants: &'a BTreeMap<String, f64>,
}

impl Parser<'_> {
    fn peek(&self) -> (&Tok, usize) {
        let (t, p) = &self.tokens[self.pos];
        (t, *p)
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, c: char) -> bool {
        if *self.peek().0 == Tok::Sym(c) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek().0 {
                Tok::Sym('+') => BinOp::Add,
                Tok::Sym('-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek().0 {
                Tok::Sym('*') => BinOp::Mul,
                Tok::Sym('/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat('-') {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.primary()?;
        if self.eat('^') {
            let exp = self.unary()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr> {
        let (tok, at) = self.bump();
        match tok {
            Tok::Num(v) => Ok(Expr::Num(v)),
            Tok::Sym('(') => {
                let e = self.expr()?;
                if !self.eat(')') {
                    return Err(Error::Syntax {
                        pos: self.peek().1,
                        expected: vec![")".into()],
                    });
                }
                Ok(e)
            }
            Tok::Ident(name) => {
                if name == "x" {
                    return Ok(Expr::Var);
                }
                if let Some(f) = Func::lookup(&name) {
                    return self.call(f);
                }
                match self.constants.get(&name) {
                    Some(v) => Ok(Expr::Const(name, *v)),
                    None => Err(Error::UnknownIdentifier { name, pos: at }),
                }
            }
            _ => Err(Error::Syntax {
                pos: at,
                expected: vec!["number".into(), "identifier".into(), "(".into(), "-".into()],
            }),
        }
    }

    fn call(&mut self, f: Func) -> Result<Expr> {
        if !self.eat('(') {
            return Err(Error::Syntax {
                pos: self.peek().1,
                expected: vec!["(".into()],
            });
        }
        let mut args = Vec::new();
        if !self.eat(')') {
            loop {
                args.push(self.expr()?);
                if self.eat(')') {
                    break;
                }
                if !self.eat(',') {
                    return Err(Error::Syntax {
                        pos: self.peek().1,
                        expected: vec![",".into(), ")".into()],
                    });
                }
                // A dangling comma leaves an argument slot empty.
                if *self.peek().0 == Tok::Sym(')') {
                    if args.len() != f.arity() {
                        return Err(Error::ArityMismatch {
                            function: f.name().into(),
                            got: args.len(),
                            want: f.arity(),
                        });
                    }
                    return Err(Error::Syntax {
                        pos: self.peek().1,
                        expected: vec!["expression".into()],
                    });
                }
            }
        }
        if args.len() != f.arity() {
            return Err(Error::ArityMismatch {
                function: f.name().into(),
                got: args.len(),
                want: f.arity(),
            });
        }
        Ok(Expr::Call(f, args))
    }
}

/// Payoff pair for a stopping problem (`h == None`) or a game.
#[derive(Debug, Clone)]
pub struct PayoffSpec {
    pub g: PayoffExpr,
    pub h: Option<PayoffExpr>,
    pub constants: BTreeMap<String, f64>,
}

impl PayoffSpec {
    /// Parses `g` and optional `h` with a shared constant table.
    pub fn parse(g: &str, h: Option<&str>, constants: BTreeMap<String, f64>) -> Result<Self> {
        let g = parse(g, &constants)?;
        let h = match h {
            Some(s) => Some(parse(s, &constants)?),
            None => None,
        };
        Ok(PayoffSpec { g, h, constants })
    }
}
