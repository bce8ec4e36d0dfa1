//! A small arithmetic language for coefficient functions.
//!
//! Grammar (lowest to highest precedence):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?          right associative
//! primary := number | var | func '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! Variables are `t, x, u, y, z`. Functions: `abs exp log sqrt sin cos pos
//! neg` (one argument) and `min max` (two). `pos(a) = a⁺` and `neg(a) = a⁻`.
//!
//! Expressions are compiled to a postfix program for evaluation; a separate
//! recursive tree walk ([`CoefficientExpr::eval_reference`]) is kept as an
//! independent check of the compiled path.

use std::fmt;

use smallvec::SmallVec;
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Var {
    T,
    X,
    U,
    Y,
    Z,
}

impl Var {
    pub const ALL: [Var; 5] = [Var::T, Var::X, Var::U, Var::Y, Var::Z];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Var::T => "t",
            Var::X => "x",
            Var::U => "u",
            Var::Y => "y",
            Var::Z => "z",
        }
    }

    fn from_name(s: &str) -> Option<Var> {
        Some(match s {
            "t" => Var::T,
            "x" => Var::X,
            "u" => Var::U,
            "y" => Var::Y,
            "z" => Var::Z,
            _ => return None,
        })
    }
}

/// Set of variables, one bit per [`Var`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct VarSet(u8);

impl VarSet {
    pub const EMPTY: VarSet = VarSet(0);

    pub fn of(vars: &[Var]) -> VarSet {
        VarSet(vars.iter().fold(0, |m, v| m | (1 << v.index())))
    }

    pub fn contains(self, v: Var) -> bool {
        self.0 & (1 << v.index()) != 0
    }

    pub fn insert(&mut self, v: Var) {
        self.0 |= 1 << v.index();
    }

    pub fn is_subset(self, other: VarSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Var> {
        Var::ALL.into_iter().filter(move |v| self.contains(*v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Abs,
    Exp,
    Log,
    Sqrt,
    Sin,
    Cos,
    /// `a⁺`
    Pos,
    /// `a⁻`
    NegPart,
}

impl UnaryOp {
    fn func_name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "-",
            UnaryOp::Abs => "abs",
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
            UnaryOp::Sqrt => "sqrt",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Pos => "pos",
            UnaryOp::NegPart => "neg",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Min,
    Max,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Lit(f64),
    Var(Var),
    Unary(UnaryOp, Box<Node>),
    Binary(BinaryOp, Box<Node>, Box<Node>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("`{name}` at byte {offset} takes {expected} argument(s), got {found}")]
    Arity {
        name: String,
        offset: usize,
        expected: usize,
        found: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("variable `{}` is not bound", .0.name())]
    Unbound(Var),
    #[error("{op} of {arg} is undefined (bindings: {bindings})")]
    Domain {
        op: &'static str,
        arg: f64,
        bindings: Bindings<f64>,
    },
}

/// Variable assignment; unset variables are unbound.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Bindings<S> {
    slots: [Option<S>; 5],
}

impl<S: Scalar> Bindings<S> {
    pub fn new() -> Self {
        Self { slots: [None; 5] }
    }

    pub fn with(mut self, v: Var, value: S) -> Self {
        self.slots[v.index()] = Some(value);
        self
    }

    pub fn get(&self, v: Var) -> Option<S> {
        self.slots[v.index()]
    }

    fn to_f64(&self) -> Bindings<f64> {
        Bindings {
            slots: self.slots.map(|s| s.map(Scalar::as_f64)),
        }
    }
}

impl<S: Scalar> From<[S; 5]> for Bindings<S> {
    fn from(v: [S; 5]) -> Self {
        Self { slots: v.map(Some) }
    }
}

impl fmt::Display for Bindings<f64> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for v in Var::ALL {
            if let Some(val) = self.get(v) {
                if !first {
                    write!(f, ", ")?;
                }
                write!(f, "{}={val}", v.name())?;
                first = false;
            }
        }
        if first {
            write!(f, "none")?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Lexer / parser

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
    End,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn tokens(src: &'a str) -> Result<Vec<(Tok, usize)>, ParseError> {
        let mut lx = Lexer { src, pos: 0 };
        let mut out = Vec::new();
        loop {
            let (tok, off) = lx.next_tok()?;
            let end = tok == Tok::End;
            out.push((tok, off));
            if end {
                return Ok(out);
            }
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.as_bytes().get(self.pos).copied()
    }

    fn next_tok(&mut self) -> Result<(Tok, usize), ParseError> {
        while matches!(self.peek(), Some(b) if b.is_ascii_whitespace()) {
            self.pos += 1;
        }
        let start = self.pos;
        let Some(c) = self.peek() else {
            return Ok((Tok::End, start));
        };
        if c.is_ascii_digit() || c == b'.' {
            return self.number(start);
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            while matches!(self.peek(), Some(b) if b.is_ascii_alphanumeric() || b == b'_') {
                self.pos += 1;
            }
            return Ok((Tok::Ident(self.src[start..self.pos].to_string()), start));
        }
        if b"+-*/^(),".contains(&c) {
            self.pos += 1;
            return Ok((Tok::Sym(c as char), start));
        }
        let ch = self.src[start..].chars().next().unwrap_or('?');
        Err(ParseError::Syntax {
            offset: start,
            message: format!("unexpected character `{ch}`"),
        })
    }

    fn number(&mut self, start: usize) -> Result<(Tok, usize), ParseError> {
        let digits = |lx: &mut Self| {
            let s = lx.pos;
            while matches!(lx.peek(), Some(b) if b.is_ascii_digit()) {
                lx.pos += 1;
            }
            lx.pos - s
        };
        let mut n = digits(self);
        if self.peek() == Some(b'.') {
            self.pos += 1;
            n += digits(self);
        }
        if n == 0 {
            return Err(ParseError::Syntax {
                offset: start,
                message: "malformed number".into(),
            });
        }
        if matches!(self.peek(), Some(b'e' | b'E')) {
            let save = self.pos;
            self.pos += 1;
            if matches!(self.peek(), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if digits(self) == 0 {
                self.pos = save;
            }
        }
        let text = &self.src[start..self.pos];
        text.parse::<f64>()
            .map(|v| (Tok::Num(v), start))
            .map_err(|_| ParseError::Syntax {
                offset: start,
                message: format!("malformed number `{text}`"),
            })
    }
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    at: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn offset(&self) -> usize {
        self.toks[self.at].1
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.toks[self.at].clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn expect(&mut self, c: char) -> Result<(), ParseError> {
        if *self.peek() == Tok::Sym(c) {
            self.bump();
            Ok(())
        } else {
            Err(self.unexpected(&format!("expected `{c}`")))
        }
    }

    fn unexpected(&self, what: &str) -> ParseError {
        let found = match self.peek() {
            Tok::Num(v) => format!("number {v}"),
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Sym(c) => format!("`{c}`"),
            Tok::End => "end of input".into(),
        };
        ParseError::Syntax {
            offset: self.offset(),
            message: format!("{what}, found {found}"),
        }
    }

    fn expr(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Sym('+') => BinaryOp::Add,
                Tok::Sym('-') => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Node::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Sym('*') => BinaryOp::Mul,
                Tok::Sym('/') => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Node::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Node, ParseError> {
        if *self.peek() == Tok::Sym('-') {
            self.bump();
            let inner = self.unary()?;
            return Ok(Node::Unary(UnaryOp::Neg, Box::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ParseError> {
        let base = self.primary()?;
        if *self.peek() == Tok::Sym('^') {
            self.bump();
            let exp = self.unary()?;
            return Ok(Node::Binary(BinaryOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Node, ParseError> {
        match self.peek().clone() {
            Tok::Num(v) => {
                self.bump();
                Ok(Node::Lit(v))
            }
            Tok::Sym('(') => {
                self.bump();
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Tok::Ident(name) => {
                let offset = self.offset();
                self.bump();
                if *self.peek() == Tok::Sym('(') {
                    self.call(name, offset)
                } else if let Some(v) = Var::from_name(&name) {
                    Ok(Node::Var(v))
                } else {
                    Err(ParseError::UnknownIdentifier { name, offset })
                }
            }
            _ => Err(self.unexpected("expected an operand")),
        }
    }

    fn call(&mut self, name: String, offset: usize) -> Result<Node, ParseError> {
        enum Kind {
            Unary(UnaryOp),
            Binary(BinaryOp),
        }
        let kind = match name.as_str() {
            "abs" => Kind::Unary(UnaryOp::Abs),
            "exp" => Kind::Unary(UnaryOp::Exp),
            "log" => Kind::Unary(UnaryOp::Log),
            "sqrt" => Kind::Unary(UnaryOp::Sqrt),
            "sin" => Kind::Unary(UnaryOp::Sin),
            "cos" => Kind::Unary(UnaryOp::Cos),
            "pos" => Kind::Unary(UnaryOp::Pos),
            "neg" => Kind::Unary(UnaryOp::NegPart),
            "min" => Kind::Binary(BinaryOp::Min),
            "max" => Kind::Binary(BinaryOp::Max),
            _ => return Err(ParseError::UnknownIdentifier { name, offset }),
        };
        self.expect('(')?;
        let mut args = vec![self.expr()?];
        while *self.peek() == Tok::Sym(',') {
            self.bump();
            args.push(self.expr()?);
        }
        self.expect(')')?;
        let expected = match kind {
            Kind::Unary(_) => 1,
            Kind::Binary(_) => 2,
        };
        if args.len() != expected {
            return Err(ParseError::Arity {
                name,
                offset,
                expected,
                found: args.len(),
            });
        }
        let mut args = args.into_iter();
        let a = Box::new(args.next().expect("arity checked"));
        Ok(match kind {
            Kind::Unary(op) => Node::Unary(op, a),
            Kind::Binary(op) => Node::Binary(op, a, Box::new(args.next().expect("arity checked"))),
        })
    }
}

// ---------------------------------------------------------------------------
// Printing

const PREC_ADD: u8 = 1;
const PREC_MUL: u8 = 2;
const PREC_UNARY: u8 = 3;
const PREC_ATOM: u8 = 5;

fn write_node(f: &mut fmt::Formatter<'_>, node: &Node, min_prec: u8) -> fmt::Result {
    let (prec, body): (u8, Box<dyn Fn(&mut fmt::Formatter<'_>) -> fmt::Result + '_>) = match node {
        Node::Lit(v) if *v < 0.0 || (*v == 0.0 && v.is_sign_negative()) => {
            (PREC_UNARY, Box::new(move |f| write!(f, "-{:?}", -v)))
        }
        Node::Lit(v) if v.fract() == 0.0 && v.abs() < 1e15 => (PREC_ATOM, Box::new(move |f| write!(f, "{v}"))),
        Node::Lit(v) => (PREC_ATOM, Box::new(move |f| write!(f, "{v:?}"))),
        Node::Var(v) => (PREC_ATOM, Box::new(move |f| write!(f, "{}", v.name()))),
        Node::Unary(UnaryOp::Neg, a) => (
            PREC_UNARY,
            Box::new(move |f| {
                write!(f, "-")?;
                write_node(f, a, PREC_UNARY)
            }),
        ),
        Node::Unary(op, a) => (
            PREC_ATOM,
            Box::new(move |f| {
                write!(f, "{}(", op.func_name())?;
                write_node(f, a, 0)?;
                write!(f, ")")
            }),
        ),
        Node::Binary(op @ (BinaryOp::Min | BinaryOp::Max), a, b) => (
            PREC_ATOM,
            Box::new(move |f| {
                write!(f, "{}(", if *op == BinaryOp::Min { "min" } else { "max" })?;
                write_node(f, a, 0)?;
                write!(f, ", ")?;
                write_node(f, b, 0)?;
                write!(f, ")")
            }),
        ),
        Node::Binary(BinaryOp::Pow, a, b) => (
            4,
            Box::new(move |f| {
                write_node(f, a, PREC_ATOM)?;
                write!(f, "^")?;
                write_node(f, b, PREC_UNARY)
            }),
        ),
        Node::Binary(op, a, b) => {
            let (p, sym) = match op {
                BinaryOp::Add => (PREC_ADD, " + "),
                BinaryOp::Sub => (PREC_ADD, " - "),
                BinaryOp::Mul => (PREC_MUL, "*"),
                BinaryOp::Div => (PREC_MUL, "/"),
                _ => unreachable!("handled above"),
            };
            (
                p,
                Box::new(move |f| {
                    write_node(f, a, p)?;
                    write!(f, "{sym}")?;
                    write_node(f, b, p + 1)
                }),
            )
        }
    };
    if prec < min_prec {
        write!(f, "(")?;
        body(f)?;
        write!(f, ")")
    } else {
        body(f)
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_node(f, self, 0)
    }
}

// ---------------------------------------------------------------------------
// Compiled program

#[derive(Debug, Clone, Copy, PartialEq)]
enum Instr {
    Lit(f64),
    Load(Var),
    Unary(UnaryOp),
    Binary(BinaryOp),
}

#[inline]
fn apply_unary<S: Scalar>(op: UnaryOp, a: S) -> Result<S, &'static str> {
    Ok(match op {
        UnaryOp::Neg => -a,
        UnaryOp::Abs => a.abs(),
        UnaryOp::Exp => a.exp(),
        UnaryOp::Log => {
            if a <= S::zero() {
                return Err("log");
            }
            a.ln()
        }
        UnaryOp::Sqrt => {
            if a < S::zero() {
                return Err("sqrt");
            }
            a.sqrt()
        }
        UnaryOp::Sin => a.sin(),
        UnaryOp::Cos => a.cos(),
        UnaryOp::Pos => a.pos_part(),
        UnaryOp::NegPart => a.neg_part(),
    })
}

#[inline]
fn apply_binary<S: Scalar>(op: BinaryOp, a: S, b: S) -> S {
    match op {
        BinaryOp::Add => a + b,
        BinaryOp::Sub => a - b,
        BinaryOp::Mul => a * b,
        BinaryOp::Div => a / b,
        BinaryOp::Pow => a.powf(b),
        BinaryOp::Min => a.min(b),
        BinaryOp::Max => a.max(b),
    }
}

/// A parsed coefficient: syntax tree, compiled postfix program and the set of
/// free variables.
#[derive(Debug, Clone)]
pub struct CoefficientExpr {
    ast: Node,
    program: Vec<Instr>,
    free: VarSet,
    constant: Option<f64>,
}

impl PartialEq for CoefficientExpr {
    fn eq(&self, other: &Self) -> bool {
        self.ast == other.ast
    }
}

fn compile(node: &Node, out: &mut Vec<Instr>, free: &mut VarSet) {
    match node {
        Node::Lit(v) => out.push(Instr::Lit(*v)),
        Node::Var(v) => {
            free.insert(*v);
            out.push(Instr::Load(*v));
        }
        Node::Unary(op, a) => {
            compile(a, out, free);
            out.push(Instr::Unary(*op));
        }
        Node::Binary(op, a, b) => {
            compile(a, out, free);
            compile(b, out, free);
            out.push(Instr::Binary(*op));
        }
    }
}

impl CoefficientExpr {
    pub fn parse(text: &str) -> Result<Self, ParseError> {
        if text.trim().is_empty() {
            return Err(ParseError::Syntax {
                offset: 0,
                message: "empty expression".into(),
            });
        }
        let mut p = Parser {
            toks: Lexer::tokens(text)?,
            at: 0,
        };
        let ast = p.expr()?;
        if *p.peek() != Tok::End {
            return Err(p.unexpected("expected end of expression"));
        }
        Ok(Self::from_ast(ast))
    }

    pub fn from_ast(ast: Node) -> Self {
        let mut program = Vec::new();
        let mut free = VarSet::EMPTY;
        compile(&ast, &mut program, &mut free);
        let mut me = Self {
            ast,
            program,
            free,
            constant: None,
        };
        if free == VarSet::EMPTY {
            me.constant = me.eval_slots::<f64>(&[0.0; 5]).ok();
        }
        me
    }

    pub fn constant(v: f64) -> Self {
        Self::from_ast(Node::Lit(v))
    }

    pub fn ast(&self) -> &Node {
        &self.ast
    }

    pub fn free_vars(&self) -> VarSet {
        self.free
    }

    pub fn depends_on(&self, v: Var) -> bool {
        self.free.contains(v)
    }

    /// The value when the expression has no free variables.
    pub fn as_constant(&self) -> Option<f64> {
        self.constant
    }

    /// Evaluates with every variable slot supplied, indexed by [`Var::index`].
    #[inline]
    pub fn eval_slots<S: Scalar>(&self, vars: &[S; 5]) -> Result<S, EvalError> {
        if let Some(c) = self.constant {
            return Ok(S::lit(c));
        }
        let mut stack: SmallVec<[S; 16]> = SmallVec::new();
        for ins in &self.program {
            match *ins {
                Instr::Lit(v) => stack.push(S::lit(v)),
                Instr::Load(v) => stack.push(vars[v.index()]),
                Instr::Unary(op) => {
                    let a = stack.pop().expect("well-formed program");
                    match apply_unary(op, a) {
                        Ok(r) => stack.push(r),
                        Err(name) => {
                            return Err(EvalError::Domain {
                                op: name,
                                arg: a.as_f64(),
                                bindings: Bindings::from(*vars).to_f64(),
                            })
                        }
                    }
                }
                Instr::Binary(op) => {
                    let b = stack.pop().expect("well-formed program");
                    let a = stack.pop().expect("well-formed program");
                    stack.push(apply_binary(op, a, b));
                }
            }
        }
        Ok(stack.pop().expect("well-formed program"))
    }

    /// Evaluates under a partial binding; every free variable must be bound.
    pub fn eval<S: Scalar>(&self, bindings: &Bindings<S>) -> Result<S, EvalError> {
        let mut slots = [S::zero(); 5];
        for v in self.free.iter() {
            slots[v.index()] = bindings.get(v).ok_or(EvalError::Unbound(v))?;
        }
        self.eval_slots(&slots).map_err(|e| match e {
            EvalError::Domain { op, arg, .. } => EvalError::Domain {
                op,
                arg,
                bindings: bindings.to_f64(),
            },
            other => other,
        })
    }

    /// Direct recursive evaluation of the syntax tree. Independent of the
    /// compiled program; used to cross-check it.
    pub fn eval_reference<S: Scalar>(&self, bindings: &Bindings<S>) -> Result<S, EvalError> {
        fn walk<S: Scalar>(n: &Node, b: &Bindings<S>) -> Result<S, EvalError> {
            match n {
                Node::Lit(v) => Ok(S::lit(*v)),
                Node::Var(v) => b.get(*v).ok_or(EvalError::Unbound(*v)),
                Node::Unary(op, a) => {
                    let a = walk(a, b)?;
                    apply_unary(*op, a).map_err(|name| EvalError::Domain {
                        op: name,
                        arg: a.as_f64(),
                        bindings: b.to_f64(),
                    })
                }
                Node::Binary(op, l, r) => {
                    let l = walk(l, b)?;
                    let r = walk(r, b)?;
                    Ok(apply_binary(*op, l, r))
                }
            }
        }
        walk(&self.ast, bindings)
    }
}

impl fmt::Display for CoefficientExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.ast)
    }
}

impl std::str::FromStr for CoefficientExpr {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(text: &str, b: Bindings<f64>) -> f64 {
        CoefficientExpr::parse(text).unwrap().eval(&b).unwrap()
    }

    #[test]
    fn basic_examples() {
        let b = Bindings::new().with(Var::X, 2.0).with(Var::U, 3.0).with(Var::Z, 4.0);
        assert_eq!(ev("x*u + 0.5*z", b), 8.0);
        assert_eq!(ev("pos(x-1)", Bindings::new().with(Var::X, 1.5)), 0.5);
        assert_eq!(ev("max(x,-x)", Bindings::new().with(Var::X, -2.0)), 2.0);
        assert_eq!(ev("exp(0)", Bindings::new()), 1.0);
        assert_eq!(ev("x^2", Bindings::new().with(Var::X, 3.0)), 9.0);
        assert_eq!(ev("1/3", Bindings::new()), 1.0 / 3.0);
        assert_eq!(ev("neg(x)", Bindings::new().with(Var::X, -2.5)), 2.5);
    }

    #[test]
    fn precedence_and_associativity() {
        let b = Bindings::new().with(Var::X, 2.0);
        assert_eq!(ev("-x^2", b), -4.0);
        assert_eq!(ev("2^3^2", b), 512.0);
        assert_eq!(ev("2^-1", b), 0.5);
        assert_eq!(ev("8/4/2", b), 1.0);
        assert_eq!(ev("5-3-1", b), 1.0);
        assert_eq!(ev("1 + 2*3", b), 7.0);
        assert_eq!(ev("-2*x", b), -4.0);
        assert_eq!(ev("1e-1*10", b), 1.0);
    }

    #[test]
    fn syntax_errors_carry_offsets() {
        match CoefficientExpr::parse("x + * 2").unwrap_err() {
            ParseError::Syntax { offset, .. } => assert_eq!(offset, 4),
            e => panic!("{e}"),
        }
        match CoefficientExpr::parse("(x").unwrap_err() {
            ParseError::Syntax { offset, .. } => assert_eq!(offset, 2),
            e => panic!("{e}"),
        }
        assert!(matches!(
            CoefficientExpr::parse("x $ 1"),
            Err(ParseError::Syntax { offset: 2, .. })
        ));
        assert!(CoefficientExpr::parse("").is_err());
    }

    #[test]
    fn unknown_identifiers_and_arity() {
        assert_eq!(
            CoefficientExpr::parse("2*w").unwrap_err(),
            ParseError::UnknownIdentifier {
                name: "w".into(),
                offset: 2
            }
        );
        assert!(matches!(
            CoefficientExpr::parse("foo(x)"),
            Err(ParseError::UnknownIdentifier { .. })
        ));
        assert_eq!(
            CoefficientExpr::parse("max(x)").unwrap_err(),
            ParseError::Arity {
                name: "max".into(),
                offset: 0,
                expected: 2,
                found: 1
            }
        );
    }

    #[test]
    fn eval_errors() {
        let e = CoefficientExpr::parse("x + y").unwrap();
        assert_eq!(
            e.eval(&Bindings::new().with(Var::X, 1.0)),
            Err(EvalError::Unbound(Var::Y))
        );
        let e = CoefficientExpr::parse("log(x)").unwrap();
        let err = e.eval(&Bindings::new().with(Var::X, -1.0)).unwrap_err();
        match err {
            EvalError::Domain { op, arg, bindings } => {
                assert_eq!(op, "log");
                assert_eq!(arg, -1.0);
                assert_eq!(bindings.get(Var::X), Some(-1.0));
            }
            other => panic!("{other}"),
        }
        let e = CoefficientExpr::parse("sqrt(x)").unwrap();
        assert!(e.eval(&Bindings::new().with(Var::X, -0.1)).is_err());
        assert_eq!(e.eval(&Bindings::new().with(Var::X, 0.0)), Ok(0.0));
    }

    #[test]
    fn free_variables() {
        let e = CoefficientExpr::parse("t*x + sin(z)").unwrap();
        assert_eq!(e.free_vars(), VarSet::of(&[Var::T, Var::X, Var::Z]));
        assert_eq!(CoefficientExpr::parse("2*3").unwrap().as_constant(), Some(6.0));
    }

    #[test]
    fn printing() {
        for (src, want) in [
            ("x*u + 0.5*z", "x*u + 0.5*z"),
            ("-(x^2)", "-x^2"),
            ("(-x)^2", "(-x)^2"),
            ("x - (y - z)", "x - (y - z)"),
            ("(x - y) - z", "x - y - z"),
            ("2^(3^2)", "2^3^2"),
            ("(2^3)^2", "(2^3)^2"),
            ("pos(x-1)", "pos(x - 1)"),
        ] {
            assert_eq!(CoefficientExpr::parse(src).unwrap().to_string(), want, "{src}");
        }
    }

    fn arb_node() -> impl Strategy<Value = Node> {
        let leaf = prop_oneof![
            (0u32..1000).prop_map(|n| Node::Lit(n as f64 / 8.0)),
            prop::sample::select(Var::ALL.to_vec()).prop_map(Node::Var),
        ];
        leaf.prop_recursive(6, 64, 2, |inner| {
            let un = prop::sample::select(vec![
                UnaryOp::Neg,
                UnaryOp::Abs,
                UnaryOp::Exp,
                UnaryOp::Log,
                UnaryOp::Sqrt,
                UnaryOp::Sin,
                UnaryOp::Cos,
                UnaryOp::Pos,
                UnaryOp::NegPart,
            ]);
            let bin = prop::sample::select(vec![
                BinaryOp::Add,
                BinaryOp::Sub,
                BinaryOp::Mul,
                BinaryOp::Div,
                BinaryOp::Pow,
                BinaryOp::Min,
                BinaryOp::Max,
            ]);
            prop_oneof![
                (un, inner.clone()).prop_map(|(op, a)| Node::Unary(op, Box::new(a))),
                (bin, inner.clone(), inner).prop_map(|(op, a, b)| Node::Binary(op, Box::new(a), Box::new(b))),
            ]
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn print_parse_is_a_fixed_point(node in arb_node()) {
            let e = CoefficientExpr::from_ast(node);
            let printed = e.to_string();
            let back = CoefficientExpr::parse(&printed).unwrap();
            prop_assert_eq!(back.ast(), e.ast(), "printed as {}", printed);
            prop_assert_eq!(back.to_string(), printed);
        }

        #[test]
        fn compiled_matches_tree_walk_bitwise(
            node in arb_node(),
            vals in prop::array::uniform5(-4.0f64..4.0),
        ) {
            let e = CoefficientExpr::from_ast(node);
            let b = Bindings::from(vals);
            let fast = e.eval(&b);
            let slow = e.eval_reference(&b);
            match (fast, slow) {
                (Ok(a), Ok(r)) => prop_assert!(a.to_bits() == r.to_bits() || (a.is_nan() && r.is_nan())),
                (Err(EvalError::Domain { op: a, .. }), Err(EvalError::Domain { op: r, .. })) => prop_assert_eq!(a, r),
                (a, r) => prop_assert!(false, "mismatch: {:?} vs {:?}", a, r),
            }
        }
    }
}
