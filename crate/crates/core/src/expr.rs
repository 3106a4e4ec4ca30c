//! Arithmetic expressions over `x[i]`, `t`, `xi[i]` and `s`.
//!
//! Grammar (standard precedence, `^` binds tighter than unary minus and is
//! right associative):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?
//! primary := number | symbol | symbol '[' int ']' | func '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! Functions: `exp log abs sqrt min max pow`. There are no conditionals;
//! piecewise coefficients are written with `min`, `max` and `abs`.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::math;

/// Which symbols an expression may reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SymbolSet {
    pub dim: usize,
    pub x: bool,
    pub t: bool,
    pub xi: bool,
    pub s: bool,
}

impl SymbolSet {
    pub fn state(dim: usize) -> Self {
        SymbolSet { dim, x: true, t: true, xi: false, s: false }
    }

    pub fn terminal(dim: usize) -> Self {
        SymbolSet { dim, x: true, t: false, xi: false, s: false }
    }

    pub fn impulse(dim: usize) -> Self {
        SymbolSet { dim, x: false, t: true, xi: true, s: false }
    }

    pub fn radial() -> Self {
        SymbolSet { dim: 0, x: false, t: false, xi: false, s: true }
    }
}

/// Evaluation point. Unused components may be empty.
#[derive(Debug, Clone, Copy)]
pub struct Point<'a> {
    pub x: &'a [f64],
    pub t: f64,
    pub xi: &'a [f64],
    pub s: f64,
}

impl<'a> Point<'a> {
    pub fn state(x: &'a [f64], t: f64) -> Self {
        Point { x, t, xi: &[], s: 0.0 }
    }

    pub fn impulse(xi: &'a [f64], t: f64) -> Self {
        Point { x: &[], t, xi, s: 0.0 }
    }

    pub fn radial(s: f64) -> Self {
        Point { x: &[], t: 0.0, xi: &[], s }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{message} at column {column}")]
pub struct ExprError {
    pub message: String,
    /// 1-based column within the expression text.
    pub column: usize,
}

fn err<T>(message: impl Into<String>, column: usize) -> Result<T, ExprError> {
    Err(ExprError { message: message.into(), column })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    Abs,
    Sqrt,
    Min,
    Max,
    Pow,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "exp" => Func::Exp,
            "log" => Func::Log,
            "abs" => Func::Abs,
            "sqrt" => Func::Sqrt,
            "min" => Func::Min,
            "max" => Func::Max,
            "pow" => Func::Pow,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Abs => "abs",
            Func::Sqrt => "sqrt",
            Func::Min => "min",
            Func::Max => "max",
            Func::Pow => "pow",
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

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    X(usize),
    Xi(usize),
    T,
    S,
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Powi(Box<Node>, i32),
    Call(Func, Vec<Node>),
}

/// A compiled (constant-folded) expression.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    root: Node,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Int(usize),
    Op(char),
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>, ExprError> {
    let bytes: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let col = i + 1;
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == '.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == 'e' || bytes[i] == 'E') {
                let save = i;
                i += 1;
                if i < bytes.len() && (bytes[i] == '+' || bytes[i] == '-') {
                    i += 1;
                }
                if i < bytes.len() && bytes[i].is_ascii_digit() {
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                } else {
                    i = save;
                }
            }
            let text: String = bytes[start..i].iter().collect();
            match text.parse::<f64>() {
                Ok(v) => out.push((Tok::Num(v), col)),
                Err(_) => return err(format!("malformed number '{text}'"), col),
            }
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == '_') {
                i += 1;
            }
            out.push((Tok::Ident(bytes[start..i].iter().collect()), col));
        } else if "+-*/^(),[]".contains(c) {
            out.push((Tok::Op(c), col));
            i += 1;
        } else {
            return err(format!("unexpected character '{c}'"), col);
        }
    }
    // Integer literals only matter inside brackets; re-tag them there.
    for k in 1..out.len() {
        if out[k - 1].0 == Tok::Op('[') {
            if let Tok::Num(v) = out[k].0 {
                if v >= 0.0 && v == math::floor(v) {
                    out[k].0 = Tok::Int(v as usize);
                }
            }
        }
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    end_col: usize,
    symbols: &'a SymbolSet,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn col(&self) -> usize {
        self.toks.get(self.pos).map(|(_, c)| *c).unwrap_or(self.end_col)
    }

    fn eat_op(&mut self, op: char) -> bool {
        if self.peek() == Some(&Tok::Op(op)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_op(&mut self, op: char) -> Result<(), ExprError> {
        if self.eat_op(op) {
            Ok(())
        } else {
            err(format!("expected '{op}'"), self.col())
        }
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.eat_op('+') {
                BinOp::Add
            } else if self.eat_op('-') {
                BinOp::Sub
            } else {
                return Ok(lhs);
            };
            let rhs = self.term()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.eat_op('*') {
                BinOp::Mul
            } else if self.eat_op('/') {
                BinOp::Div
            } else {
                return Ok(lhs);
            };
            let rhs = self.unary()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        if self.eat_op('-') {
            Ok(Node::Neg(Box::new(self.unary()?)))
        } else if self.eat_op('+') {
            self.unary()
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.primary()?;
        if self.eat_op('^') {
            let exp = self.unary()?;
            Ok(Node::Bin(BinOp::Pow, Box::new(base), Box::new(exp)))
        } else {
            Ok(base)
        }
    }

    fn index(&mut self, name: &str, limit: usize) -> Result<usize, ExprError> {
        self.expect_op('[')?;
        let col = self.col();
        let idx = match self.toks.get(self.pos) {
            Some((Tok::Int(i), _)) => *i,
            _ => return err(format!("expected integer index for '{name}'"), col),
        };
        self.pos += 1;
        self.expect_op(']')?;
        if idx >= limit {
            return err(format!("index {name}[{idx}] out of range for dimension {limit}"), col);
        }
        Ok(idx)
    }

    fn primary(&mut self) -> Result<Node, ExprError> {
        let col = self.col();
        let tok = match self.toks.get(self.pos) {
            Some((t, _)) => t.clone(),
            None => return err("unexpected end of expression", col),
        };
        self.pos += 1;
        match tok {
            Tok::Num(v) => Ok(Node::Num(v)),
            Tok::Int(v) => Ok(Node::Num(v as f64)),
            Tok::Op('(') => {
                let inner = self.expr()?;
                self.expect_op(')')?;
                Ok(inner)
            }
            Tok::Op(c) => err(format!("unexpected '{c}'"), col),
            Tok::Ident(name) => {
                if let Some(f) = Func::from_name(&name) {
                    self.expect_op('(')?;
                    let mut args = Vec::new();
                    if !self.eat_op(')') {
                        loop {
                            args.push(self.expr()?);
                            if self.eat_op(')') {
                                break;
                            }
                            self.expect_op(',')?;
                        }
                    }
                    let ok = match f {
                        Func::Min | Func::Max => args.len() >= 2,
                        Func::Pow => args.len() == 2,
                        _ => args.len() == 1,
                    };
                    if !ok {
                        return err(
                            format!("wrong number of arguments ({}) for {}", args.len(), f.name()),
                            col,
                        );
                    }
                    return Ok(Node::Call(f, args));
                }
                let sy = self.symbols;
                match name.as_str() {
                    "x" if sy.x => Ok(Node::X(self.index("x", sy.dim)?)),
                    "xi" if sy.xi => Ok(Node::Xi(self.index("xi", sy.dim)?)),
                    "t" if sy.t => Ok(Node::T),
                    "s" if sy.s => Ok(Node::S),
                    "pi" => Ok(Node::Num(core::f64::consts::PI)),
                    _ => err(format!("unknown symbol '{name}'"), col),
                }
            }
        }
    }
}

fn apply_func(f: Func, args: &[f64]) -> f64 {
    match f {
        Func::Exp => math::exp(args[0]),
        Func::Log => math::ln(args[0]),
        Func::Abs => math::abs(args[0]),
        Func::Sqrt => math::sqrt(args[0]),
        Func::Pow => pow_value(args[0], args[1]),
        Func::Min => args.iter().copied().fold(f64::INFINITY, f64::min),
        Func::Max => args.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

fn pow_value(base: f64, exp: f64) -> f64 {
    if exp == math::round(exp) && math::abs(exp) <= 64.0 {
        math::powi(base, exp as i32)
    } else {
        math::pow(base, exp)
    }
}

fn bin_value(op: BinOp, a: f64, b: f64) -> f64 {
    match op {
        BinOp::Add => a + b,
        BinOp::Sub => a - b,
        BinOp::Mul => a * b,
        BinOp::Div => a / b,
        BinOp::Pow => pow_value(a, b),
    }
}

fn fold(node: Node) -> Node {
    match node {
        Node::Neg(inner) => match fold(*inner) {
            Node::Num(v) => Node::Num(-v),
            other => Node::Neg(Box::new(other)),
        },
        Node::Bin(op, a, b) => {
            let a = fold(*a);
            let b = fold(*b);
            match (&a, &b) {
                (Node::Num(x), Node::Num(y)) => Node::Num(bin_value(op, *x, *y)),
                (_, Node::Num(y)) if op == BinOp::Pow && *y == math::round(*y) && math::abs(*y) <= 64.0 => {
                    Node::Powi(Box::new(a), *y as i32)
                }
                _ => Node::Bin(op, Box::new(a), Box::new(b)),
            }
        }
        Node::Powi(a, n) => match fold(*a) {
            Node::Num(v) => Node::Num(math::powi(v, n)),
            other => Node::Powi(Box::new(other), n),
        },
        Node::Call(f, args) => {
            let args: Vec<Node> = args.into_iter().map(fold).collect();
            if args.iter().all(|a| matches!(a, Node::Num(_))) {
                let vals: Vec<f64> = args
                    .iter()
                    .map(|a| match a {
                        Node::Num(v) => *v,
                        _ => unreachable!(),
                    })
                    .collect();
                Node::Num(apply_func(f, &vals))
            } else {
                Node::Call(f, args)
            }
        }
        other => other,
    }
}

fn has_nonfinite_constant(node: &Node) -> bool {
    match node {
        Node::Num(v) => !v.is_finite(),
        Node::Neg(a) | Node::Powi(a, _) => has_nonfinite_constant(a),
        Node::Bin(_, a, b) => has_nonfinite_constant(a) || has_nonfinite_constant(b),
        Node::Call(_, args) => args.iter().any(has_nonfinite_constant),
        _ => false,
    }
}

impl Expr {
    /// Parses and compiles an expression restricted to `symbols`.
    pub fn parse(src: &str, symbols: &SymbolSet) -> Result<Expr, ExprError> {
        let toks = lex(src)?;
        if toks.is_empty() {
            return err("empty expression", 1);
        }
        let mut p = Parser { toks, pos: 0, end_col: src.chars().count() + 1, symbols };
        let node = p.expr()?;
        if p.pos != p.toks.len() {
            return err("unexpected trailing input", p.col());
        }
        let root = fold(node);
        if has_nonfinite_constant(&root) {
            return err("constant subexpression is not finite", 1);
        }
        Ok(Expr { root })
    }

    pub fn constant(v: f64) -> Expr {
        Expr { root: Node::Num(v) }
    }

    /// The value when the expression does not depend on any symbol.
    pub fn as_constant(&self) -> Option<f64> {
        match self.root {
            Node::Num(v) => Some(v),
            _ => None,
        }
    }

    #[inline]
    pub fn eval(&self, p: &Point<'_>) -> f64 {
        eval_node(&self.root, p)
    }

    /// Whether the expression references `t`.
    pub fn depends_on_time(&self) -> bool {
        fn walk(n: &Node) -> bool {
            match n {
                Node::T => true,
                Node::Neg(a) | Node::Powi(a, _) => walk(a),
                Node::Bin(_, a, b) => walk(a) || walk(b),
                Node::Call(_, args) => args.iter().any(walk),
                _ => false,
            }
        }
        walk(&self.root)
    }
}

fn eval_node(n: &Node, p: &Point<'_>) -> f64 {
    match n {
        Node::Num(v) => *v,
        Node::X(i) => p.x[*i],
        Node::Xi(i) => p.xi[*i],
        Node::T => p.t,
        Node::S => p.s,
        Node::Neg(a) => -eval_node(a, p),
        Node::Bin(op, a, b) => bin_value(*op, eval_node(a, p), eval_node(b, p)),
        Node::Powi(a, k) => math::powi(eval_node(a, p), *k),
        Node::Call(f, args) => match args.len() {
            1 => apply_func(*f, &[eval_node(&args[0], p)]),
            2 => apply_func(*f, &[eval_node(&args[0], p), eval_node(&args[1], p)]),
            _ => {
                let vals: Vec<f64> = args.iter().map(|a| eval_node(a, p)).collect();
                apply_func(*f, &vals)
            }
        },
    }
}

fn render_num(v: f64) -> String {
    // `{:?}` prints the shortest representation that reads back exactly.
    let s = format!("{v:?}");
    if v < 0.0 {
        format!("({s})")
    } else {
        s
    }
}

fn render(n: &Node, out: &mut String) {
    match n {
        Node::Num(v) => out.push_str(&render_num(*v)),
        Node::X(i) => out.push_str(&format!("x[{i}]")),
        Node::Xi(i) => out.push_str(&format!("xi[{i}]")),
        Node::T => out.push('t'),
        Node::S => out.push('s'),
        Node::Neg(a) => {
            out.push_str("(-");
            render(a, out);
            out.push(')');
        }
        Node::Bin(op, a, b) => {
            let sym = match op {
                BinOp::Add => " + ",
                BinOp::Sub => " - ",
                BinOp::Mul => " * ",
                BinOp::Div => " / ",
                BinOp::Pow => "^",
            };
            out.push('(');
            render(a, out);
            out.push_str(sym);
            render(b, out);
            out.push(')');
        }
        Node::Powi(a, k) => {
            out.push('(');
            render(a, out);
            out.push('^');
            out.push_str(&render_num(*k as f64));
            out.push(')');
        }
        Node::Call(f, args) => {
            out.push_str(f.name());
            out.push('(');
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                render(a, out);
            }
            out.push(')');
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        render(&self.root, &mut s);
        f.write_str(&s)
    }
}

impl Expr {
    pub fn render(&self) -> String {
        self.to_string()
    }
}
