use thiserror::Error;

use super::{BinOp, Expr, Func, RhsExpr, Span};
use crate::regulated::{RegulatedGridFn, Side};
use crate::scalar::Real;

/// Read access to a history segment `τ ↦ x(t + τ)` on `[−r, 0]`.
pub trait History<S> {
    fn at(&self, offset: S) -> S;
}

impl<S: Real> History<S> for RegulatedGridFn<S> {
    fn at(&self, offset: S) -> S {
        self.eval_unchecked(offset, Side::Left)
    }
}

/// Adapts a closure as a history.
pub struct FnHistory<F>(pub F);

impl<S, F: Fn(S) -> S> History<S> for FnHistory<F> {
    fn at(&self, offset: S) -> S {
        (self.0)(offset)
    }
}

/// History for expressions that never read the state.
pub struct NoHistory;

impl<S: Real> History<S> for NoHistory {
    fn at(&self, _offset: S) -> S {
        S::nan()
    }
}

pub struct EvalEnv<'a, S> {
    pub t: S,
    pub history: &'a dyn History<S>,
    pub beta: &'a dyn Fn(S) -> S,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalErrorKind {
    DivisionByZero,
    LogOfNonPositive,
    SqrtOfNegative,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{kind:?} at source span {span} (t = {t})")]
pub struct EvalError {
    pub kind: EvalErrorKind,
    pub span: Span,
    pub t: f64,
}

impl Expr {
    pub fn eval<S: Real>(&self, env: &EvalEnv<'_, S>) -> Result<S, EvalError> {
        let fail = |kind, span: Span| EvalError {
            kind,
            span,
            t: env.t.to_f64_lossy(),
        };
        Ok(match self {
            Expr::Num(v) => S::lit(*v),
            Expr::Pi => S::PI(),
            Expr::E => S::E(),
            Expr::Time => env.t,
            Expr::Delay(c) => env.history.at(S::lit(*c)),
            Expr::Beta => (env.beta)(env.t),
            Expr::Neg(a) => -a.eval(env)?,
            Expr::Binary { op, lhs, rhs, span } => {
                let a = lhs.eval(env)?;
                let b = rhs.eval(env)?;
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b == S::zero() {
                            return Err(fail(EvalErrorKind::DivisionByZero, *span));
                        }
                        a / b
                    }
                    BinOp::Pow => a.powf(b),
                }
            }
            Expr::Call { func, args, span } => {
                let a = args[0].eval(env)?;
                match func {
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Tan => a.tan(),
                    Func::Abs => a.abs(),
                    Func::Exp => a.exp(),
                    Func::Tanh => a.tanh(),
                    Func::Log => {
                        if !(a > S::zero()) {
                            return Err(fail(EvalErrorKind::LogOfNonPositive, *span));
                        }
                        a.ln()
                    }
                    Func::Sqrt => {
                        if a < S::zero() {
                            return Err(fail(EvalErrorKind::SqrtOfNegative, *span));
                        }
                        a.sqrt()
                    }
                    Func::Min => a.min(args[1].eval(env)?),
                    Func::Max => a.max(args[1].eval(env)?),
                }
            }
        })
    }
}

impl RhsExpr {
    /// Evaluates `f(t, φ)` where `x(c)` reads `history` at offset `c`.
    pub fn eval_rhs<S: Real>(
        &self,
        t: S,
        history: &dyn History<S>,
        beta: &dyn Fn(S) -> S,
    ) -> Result<S, EvalError> {
        self.root().eval(&EvalEnv { t, history, beta })
    }
}
