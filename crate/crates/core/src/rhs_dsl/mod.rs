//! A small expression language for right-hand sides `f(t, x_t)`.
//!
//! ```text
//! expr   := term (('+'|'-') term)*
//! term   := factor (('*'|'/') factor)*
//! factor := unary ('^' factor)?
//! unary  := '-' unary | atom
//! atom   := number | 'pi' | 'e' | 't' | 'x' '(' signed_number ')'
//!         | 'beta' '(' 't' ')' | func '(' expr (',' expr)? ')' | '(' expr ')'
//! ```
//!
//! `x(c)` reads the history segment at the constant offset `c ∈ [−r, 0]`,
//! i.e. `x(t + c)`. `beta(t)` reads the jump multiplier at the current time.

mod eval;
mod parser;
mod print;

use std::fmt;

pub use eval::{EvalEnv, EvalError, EvalErrorKind, FnHistory, History, NoHistory};
pub use parser::{parse, ParseError};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
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
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Abs,
    Exp,
    Log,
    Sqrt,
    Tanh,
    Min,
    Max,
}

impl Func {
    pub const ALL: [Func; 10] = [
        Func::Sin,
        Func::Cos,
        Func::Tan,
        Func::Abs,
        Func::Exp,
        Func::Log,
        Func::Sqrt,
        Func::Tanh,
        Func::Min,
        Func::Max,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Abs => "abs",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Tanh => "tanh",
            Func::Min => "min",
            Func::Max => "max",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name() == name)
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max => 2,
            _ => 1,
        }
    }
}

/// Syntax tree node. Equality is structural: source spans are ignored.
#[derive(Debug, Clone)]
pub enum Expr {
    Num(f64),
    Pi,
    E,
    Time,
    /// `x(c)`
    Delay(f64),
    /// `beta(t)`
    Beta,
    Neg(Box<Expr>),
    Binary {
        op: BinOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
        span: Span,
    },
    Call {
        func: Func,
        args: Vec<Expr>,
        span: Span,
    },
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        use Expr::*;
        match (self, other) {
            (Num(a), Num(b)) => a == b,
            (Delay(a), Delay(b)) => a == b,
            (Pi, Pi) | (E, E) | (Time, Time) | (Beta, Beta) => true,
            (Neg(a), Neg(b)) => a == b,
            (
                Binary { op, lhs, rhs, .. },
                Binary {
                    op: op2,
                    lhs: lhs2,
                    rhs: rhs2,
                    ..
                },
            ) => op == op2 && lhs == lhs2 && rhs == rhs2,
            (Call { func, args, .. }, Call { func: f2, args: a2, .. }) => func == f2 && args == a2,
            _ => false,
        }
    }
}

impl Expr {
    pub fn binary(op: BinOp, lhs: Expr, rhs: Expr) -> Self {
        Expr::Binary {
            op,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
            span: Span::default(),
        }
    }

    pub fn call(func: Func, args: Vec<Expr>) -> Self {
        Expr::Call {
            func,
            args,
            span: Span::default(),
        }
    }

    fn visit(&self, f: &mut impl FnMut(&Expr)) {
        f(self);
        match self {
            Expr::Neg(a) => a.visit(f),
            Expr::Binary { lhs, rhs, .. } => {
                lhs.visit(f);
                rhs.visit(f);
            }
            Expr::Call { args, .. } => args.iter().for_each(|a| a.visit(f)),
            _ => {}
        }
    }

    /// Distinct delay offsets, ascending.
    pub fn delays(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit(&mut |e| {
            if let Expr::Delay(c) = e {
                if !out.contains(c) {
                    out.push(*c);
                }
            }
        });
        out.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out
    }

    pub fn depth(&self) -> usize {
        match self {
            Expr::Neg(a) => 1 + a.depth(),
            Expr::Binary { lhs, rhs, .. } => 1 + lhs.depth().max(rhs.depth()),
            Expr::Call { args, .. } => 1 + args.iter().map(Expr::depth).max().unwrap_or(0),
            _ => 1,
        }
    }

    pub fn mentions_state(&self) -> bool {
        let mut found = false;
        self.visit(&mut |e| found |= matches!(e, Expr::Delay(_)));
        found
    }

    /// Splits the expression as `g(t)·x(0) + h(t)` when it is syntactically
    /// affine in the present state and reads no other delay. `None` in a slot
    /// stands for an identically zero part.
    pub fn affine_in_present(&self) -> Option<(Option<Expr>, Option<Expr>)> {
        use Expr::*;
        fn add(a: Option<Expr>, b: Option<Expr>, op: BinOp) -> Option<Expr> {
            match (a, b) {
                (None, None) => None,
                (Some(a), None) => Some(a),
                (None, Some(b)) if op == BinOp::Sub => Some(Neg(Box::new(b))),
                (None, Some(b)) => Some(b),
                (Some(a), Some(b)) => Some(Expr::binary(op, a, b)),
            }
        }
        fn scale(a: Option<Expr>, by: &Option<Expr>, op: BinOp) -> Option<Expr> {
            match (a, by) {
                (Some(a), Some(by)) => Some(Expr::binary(op, a, by.clone())),
                _ => None,
            }
        }
        match self {
            Num(_) | Pi | E | Time | Beta => Some((None, Some(self.clone()))),
            Delay(c) if *c == 0.0 => Some((Some(Num(1.0)), None)),
            Delay(_) => None,
            Neg(a) => {
                let (g, h) = a.affine_in_present()?;
                Some((g.map(|g| Neg(Box::new(g))), h.map(|h| Neg(Box::new(h)))))
            }
            Binary { op, lhs, rhs, .. } => {
                let (g1, h1) = lhs.affine_in_present()?;
                let (g2, h2) = rhs.affine_in_present()?;
                match op {
                    BinOp::Add | BinOp::Sub => Some((add(g1, g2, *op), add(h1, h2, *op))),
                    BinOp::Mul if g1.is_none() => {
                        let g = scale(g2, &h1, BinOp::Mul);
                        let h = match (&h1, h2) {
                            (Some(a), Some(b)) => Some(Expr::binary(BinOp::Mul, a.clone(), b)),
                            _ => None,
                        };
                        Some((g, h))
                    }
                    BinOp::Mul if g2.is_none() => {
                        let g = scale(g1, &h2, BinOp::Mul);
                        let h = match (h1, &h2) {
                            (Some(a), Some(b)) => Some(Expr::binary(BinOp::Mul, a, b.clone())),
                            _ => None,
                        };
                        Some((g, h))
                    }
                    BinOp::Div if g2.is_none() && h2.is_some() => {
                        Some((scale(g1, &h2, BinOp::Div), scale(h1, &h2, BinOp::Div)))
                    }
                    BinOp::Pow if g1.is_none() && g2.is_none() => Some((None, Some(self.clone()))),
                    _ => None,
                }
            }
            Call { args, .. } => {
                for a in args {
                    let (g, _) = a.affine_in_present()?;
                    if g.is_some() {
                        return None;
                    }
                }
                Some((None, Some(self.clone())))
            }
        }
    }
}

/// A parsed right-hand side together with its source text.
#[derive(Debug, Clone)]
pub struct RhsExpr {
    root: Expr,
    source: String,
}

impl PartialEq for RhsExpr {
    fn eq(&self, other: &Self) -> bool {
        self.root == other.root
    }
}

impl RhsExpr {
    pub fn from_expr(root: Expr) -> Self {
        let source = root.to_string();
        Self { root, source }
    }

    pub fn root(&self) -> &Expr {
        &self.root
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn delays(&self) -> Vec<f64> {
        self.root.delays()
    }

    /// Canonical fully parenthesised text.
    pub fn pretty_print(&self) -> String {
        self.root.to_string()
    }
}
