//! The multiplicative change of variables `x = β·u` and the neutral operator.
//!
//! With `c(t) = B·β(t−δ)/β(t)` the impulsive equation becomes the jump-free
//! neutral equation `u′(t) + c(t)·u′(t−δ) = h(t, u_t)`, where
//! `h(t, φ) = f(t, β_t·φ)/β(t)`. The operator `(Av)(t) = v(t) + c(t)·v(t−δ)`
//! acts on `T`-periodic functions, the delayed argument wrapping by `+T`.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::regulated::{locate_in, Grid, Location, RegulatedError, RegulatedGridFn, Side};
use crate::rhs_dsl::{EvalError, FnHistory, RhsExpr};
use crate::scalar::{Real, Scalar};
use crate::schedule::{ImpulseSchedule, PiecewiseConstantFn, ScheduleErrors};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpecError {
    #[error("neutral coefficient B must be nonnegative (got {0})")]
    NegativeNeutral(f64),
    #[error("threshold d must be positive (got {0})")]
    NonPositiveD(f64),
    #[error("Lipschitz constant b must be positive (got {0})")]
    NonPositiveLipschitz(f64),
    #[error("S override must be nonnegative (got {0})")]
    NegativeS(f64),
    #[error("right-hand side reads x({offset}), outside [-r, 0] with r = {r}")]
    DelayOutOfRange { offset: f64, r: f64 },
    #[error("invalid schedule: {0}")]
    Schedule(#[from] ScheduleErrors),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransformError {
    #[error("grid has no node at breakpoint {0}")]
    MissingBreakpoint(f64),
    #[error("expected a function on [{a}, {b}], got [{got_a}, {got_b}]")]
    WrongDomain { a: f64, b: f64, got_a: f64, got_b: f64 },
    #[error("contraction not guaranteed: B·K/k = {0} >= 1")]
    NotContractive(f64),
    #[error("Neumann iteration stalled after {iterations} steps (residual {residual})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("inverse bound violated: |v| = {norm} > {bound}")]
    BoundViolated { norm: f64, bound: f64 },
    #[error(transparent)]
    Regulated(#[from] RegulatedError),
}

/// Data of `x′(t) + B·x′(t−δ) = f(t, x_t)` with impulses, plus the constants
/// entering the hypotheses.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec<S> {
    pub neutral: S,
    pub schedule: ImpulseSchedule<S>,
    pub rhs: RhsExpr,
    pub d: S,
    pub lipschitz_b: S,
    pub s_override: Option<S>,
}

impl<S: Real> ProblemSpec<S> {
    pub fn new(
        neutral: S,
        schedule: ImpulseSchedule<S>,
        rhs: RhsExpr,
        d: S,
        lipschitz_b: S,
        s_override: Option<S>,
    ) -> Result<Self, SpecError> {
        let schedule = schedule.validate()?;
        if !(neutral >= S::zero()) {
            return Err(SpecError::NegativeNeutral(neutral.to_f64_lossy()));
        }
        if !(d > S::zero()) {
            return Err(SpecError::NonPositiveD(d.to_f64_lossy()));
        }
        if !(lipschitz_b > S::zero()) {
            return Err(SpecError::NonPositiveLipschitz(lipschitz_b.to_f64_lossy()));
        }
        if let Some(s) = s_override {
            if !(s >= S::zero()) {
                return Err(SpecError::NegativeS(s.to_f64_lossy()));
            }
        }
        let r = schedule.history.to_f64_lossy();
        if let Some(&offset) = rhs.delays().iter().find(|&&c| c < -r || c > 0.0) {
            return Err(SpecError::DelayOutOfRange { offset, r });
        }
        Ok(Self {
            neutral,
            schedule,
            rhs,
            d,
            lipschitz_b,
            s_override,
        })
    }

    pub fn period(&self) -> S {
        self.schedule.period
    }

    pub fn delta(&self) -> S {
        self.schedule.delta
    }

    pub fn history(&self) -> S {
        self.schedule.history
    }

    pub fn beta(&self) -> PiecewiseConstantFn<S> {
        self.schedule.build_beta()
    }

    /// `f(t, φ)` where `φ(τ)` is supplied pointwise and `beta(t)` in the
    /// expression reads the multiplier on the given side.
    pub fn f_eval(
        &self,
        beta: &PiecewiseConstantFn<S>,
        t: S,
        side: Side,
        phi: &dyn Fn(S) -> S,
    ) -> Result<S, EvalError> {
        let b = |s: S| beta.eval_side(&s, side);
        self.rhs.eval_rhs(t, &FnHistory(phi), &b)
    }

    /// `h(t, φ) = f(t, β_t·φ)/β(t)` with all one-sided reads on `side`.
    pub fn h_eval_side(
        &self,
        beta: &PiecewiseConstantFn<S>,
        t: S,
        side: Side,
        phi: &dyn Fn(S) -> S,
    ) -> Result<S, EvalError> {
        let scaled = |tau: S| beta.eval_side(&(t + tau), side) * phi(tau);
        Ok(self.f_eval(beta, t, side, &scaled)? / beta.eval_side(&t, side))
    }
}

/// `h(t, φ) = f(t, β_t·φ)/β(t)` for a history segment `φ` on `[−r, 0]`.
pub fn h_eval<S: Real>(
    spec: &ProblemSpec<S>,
    beta: &PiecewiseConstantFn<S>,
    t: S,
    phi: &RegulatedGridFn<S>,
) -> Result<S, EvalError> {
    spec.h_eval_side(beta, t, Side::Left, &|tau| phi.eval_unchecked(tau, Side::Left))
}

/// `c(t) = B·β(t−δ)/β(t)` on `[0, T]`, left-continuous.
#[derive(Debug, Clone, PartialEq)]
pub struct NeutralCoefficientFn<S> {
    pieces: PiecewiseConstantFn<S>,
    bound: S,
}

impl<S: Scalar> NeutralCoefficientFn<S> {
    pub fn new(neutral: S, beta: &PiecewiseConstantFn<S>, schedule: &ImpulseSchedule<S>) -> Self {
        let period = schedule.period.clone();
        let delta = schedule.delta.clone();
        let zero = S::zero();
        let mut cuts = vec![zero.clone(), period.clone()];
        for p in beta.breakpoints() {
            for q in [p.clone(), p.clone() + delta.clone()] {
                if q > zero && q < period && !cuts.contains(&q) {
                    cuts.push(q);
                }
            }
        }
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let two = S::one() + S::one();
        let values = cuts
            .windows(2)
            .map(|w| {
                let mid = (w[0].clone() + w[1].clone()) / two.clone();
                neutral.clone() * beta.eval(&(mid.clone() - delta.clone())) / beta.eval(&mid)
            })
            .collect();
        let (k, big_k) = beta.extrema();
        let bound = neutral * big_k / k;
        Self {
            pieces: PiecewiseConstantFn::new(cuts, values).expect("sorted distinct cuts"),
            bound,
        }
    }

    pub fn pieces(&self) -> &PiecewiseConstantFn<S> {
        &self.pieces
    }

    pub fn eval(&self, t: &S) -> S {
        self.pieces.eval(t)
    }

    pub fn eval_side(&self, t: &S, side: Side) -> S {
        self.pieces.eval_side(t, side)
    }

    /// `B·K/k`, the contraction bound of the delayed part.
    pub fn contraction_bound(&self) -> S {
        self.bound.clone()
    }

    pub fn sup_abs(&self) -> S {
        let (lo, hi) = self.pieces.extrema();
        let (lo, hi) = (lo.abs(), hi.abs());
        if lo > hi {
            lo
        } else {
            hi
        }
    }

    pub fn period(&self) -> S {
        self.pieces.end()
    }
}

fn ensure_breakpoints<S: Real>(grid: &Grid<S>, beta: &PiecewiseConstantFn<S>) -> Result<(), TransformError> {
    for &p in beta.breakpoints() {
        if grid.contains(p) && grid.find_node(p).is_none() {
            return Err(TransformError::MissingBreakpoint(p.to_f64_lossy()));
        }
    }
    Ok(())
}

/// Impulse coefficient attached to a grid node, if the node is an impulse time.
fn impulse_at<S: Real>(schedule: &ImpulseSchedule<S>, t: S) -> Option<S> {
    schedule
        .times
        .iter()
        .position(|&tk| tk == t)
        .map(|k| schedule.coeffs[k])
}

/// `x = β·u` nodewise. At an impulse time where `u` is continuous the right
/// limit is set to `(1 + b_k)·x(t_k)` so the jump identity holds exactly.
pub fn to_impulsive<S: Real>(
    u: &RegulatedGridFn<S>,
    beta: &PiecewiseConstantFn<S>,
    schedule: &ImpulseSchedule<S>,
) -> Result<RegulatedGridFn<S>, TransformError> {
    let grid = u.grid().clone();
    ensure_breakpoints(&grid, beta)?;
    let values: Vec<S> = grid
        .nodes()
        .iter()
        .zip(u.values())
        .map(|(&t, &v)| beta.eval_side(&t, Side::Left) * v)
        .collect();
    let mut right = BTreeMap::new();
    let last = grid.len() - 1;
    for i in grid.breakpoint_indices().filter(|&i| i < last) {
        let t = grid.node(i);
        let r = match (impulse_at(schedule, t), u.right_limits().get(&i)) {
            (Some(b), None) => (S::one() + b) * values[i],
            _ => beta.eval_side(&t, Side::Right) * u.value_right(i),
        };
        if r != values[i] {
            right.insert(i, r);
        }
    }
    Ok(RegulatedGridFn::new(grid, values, right)?)
}

/// Multiplies a derivative trajectory by `β`, slot by slot.
pub fn scale_by_beta<S: Real>(
    f: &RegulatedGridFn<S>,
    beta: &PiecewiseConstantFn<S>,
) -> Result<RegulatedGridFn<S>, TransformError> {
    ensure_breakpoints(f.grid(), beta)?;
    Ok(RegulatedGridFn::from_fn(f.grid().clone(), |t, side| {
        let i = f.grid().find_node(t).unwrap();
        let v = match side {
            Side::Left => f.values()[i],
            Side::Right => f.value_right(i),
        };
        beta.eval_side(&t, side) * v
    }))
}

/// `u = x/β` slot by slot. A right limit that agrees with the node value to
/// a few ulps is dropped, so exact impulse jumps leave no trace in `u`.
pub fn to_nonimpulsive<S: Real>(
    x: &RegulatedGridFn<S>,
    beta: &PiecewiseConstantFn<S>,
) -> Result<RegulatedGridFn<S>, TransformError> {
    let grid = x.grid().clone();
    ensure_breakpoints(&grid, beta)?;
    let values: Vec<S> = grid
        .nodes()
        .iter()
        .zip(x.values())
        .map(|(&t, &v)| v / beta.eval_side(&t, Side::Left))
        .collect();
    let mut right = BTreeMap::new();
    let last = grid.len() - 1;
    let slack = S::epsilon() * S::lit(8.0);
    for i in grid.breakpoint_indices().filter(|&i| i < last) {
        let r = x.value_right(i) / beta.eval_side(&grid.node(i), Side::Right);
        if (r - values[i]).abs() > slack * values[i].abs().max(r.abs()) {
            right.insert(i, r);
        }
    }
    Ok(RegulatedGridFn::new(grid, values, right)?)
}

/// Degrees of freedom of a regulated function on `[0, T]` viewed as a
/// `T`-periodic function: one slot per node value and one per right limit at
/// breakpoints before `T`.
#[derive(Debug, Clone)]
pub struct PeriodicSpace<S> {
    grid: Arc<Grid<S>>,
    right_slot: Vec<Option<usize>>,
    slot_count: usize,
}

/// Interpolation stencil of a point: up to two `(slot, weight)` pairs.
pub type Stencil<S> = [(usize, S); 2];

impl<S: Real> PeriodicSpace<S> {
    pub fn new(grid: Arc<Grid<S>>) -> Self {
        let n = grid.len();
        let mut right_slot = vec![None; n];
        let mut next = n;
        for i in grid.breakpoint_indices().filter(|&i| i + 1 < n) {
            right_slot[i] = Some(next);
            next += 1;
        }
        Self {
            grid,
            right_slot,
            slot_count: next,
        }
    }

    pub fn grid(&self) -> &Arc<Grid<S>> {
        &self.grid
    }

    pub fn period(&self) -> S {
        self.grid.b() - self.grid.a()
    }

    pub fn len(&self) -> usize {
        self.slot_count
    }

    pub fn is_empty(&self) -> bool {
        self.slot_count == 0
    }

    /// Slot holding the right limit at node `i`, or its value slot.
    pub fn right_of(&self, i: usize) -> usize {
        self.right_slot[i].unwrap_or(i)
    }

    /// `(time, side)` represented by each slot.
    pub fn slot_points(&self) -> Vec<(S, Side)> {
        let mut out: Vec<(S, Side)> = self.grid.nodes().iter().map(|&t| (t, Side::Left)).collect();
        for (i, s) in self.right_slot.iter().enumerate() {
            if s.is_some() {
                out.push((self.grid.node(i), Side::Right));
            }
        }
        out
    }

    pub fn to_dofs(&self, f: &RegulatedGridFn<S>) -> Vec<S> {
        let mut out = f.values().to_vec();
        for (i, s) in self.right_slot.iter().enumerate() {
            if s.is_some() {
                out.push(f.value_right(i));
            }
        }
        out
    }

    pub fn from_dofs(&self, dofs: &[S]) -> RegulatedGridFn<S> {
        let n = self.grid.len();
        let mut right = BTreeMap::new();
        for (i, s) in self.right_slot.iter().enumerate() {
            if let Some(s) = s {
                if dofs[*s] != dofs[i] {
                    right.insert(i, dofs[*s]);
                }
            }
        }
        RegulatedGridFn::new(self.grid.clone(), dofs[..n].to_vec(), right)
            .expect("slots follow the grid layout")
    }

    /// Maps `s` into `[a, b]` by the period; a left limit at `a` becomes the
    /// left limit at `b`.
    pub fn wrap(&self, s: S, side: Side) -> S {
        let (a, b) = (self.grid.a(), self.grid.b());
        let p = b - a;
        let mut s = s;
        while s < a || (s == a && side == Side::Left) {
            s = s + p;
        }
        while s > b {
            s = s - p;
        }
        s.max(a).min(b)
    }

    pub fn stencil(&self, s: S, side: Side) -> Stencil<S> {
        let s = self.wrap(s, side);
        match locate_in(self.grid.nodes(), s) {
            Location::Node(i) => {
                let slot = match side {
                    Side::Left => i,
                    Side::Right => self.right_of(i),
                };
                [(slot, S::one()), (slot, S::zero())]
            }
            Location::Cell(i) => {
                let nodes = self.grid.nodes();
                let theta = (s - nodes[i]) / (nodes[i + 1] - nodes[i]);
                [(self.right_of(i), S::one() - theta), (i + 1, theta)]
            }
        }
    }

    pub fn eval(&self, dofs: &[S], s: S, side: Side) -> S {
        let [(a, wa), (b, wb)] = self.stencil(s, side);
        wa * dofs[a] + wb * dofs[b]
    }

    /// Trapezoid weights matching [`RegulatedGridFn::trapezoid_integral`].
    pub fn quadrature_weights(&self) -> Vec<S> {
        let nodes = self.grid.nodes();
        let mut w = vec![S::zero(); self.slot_count];
        for i in 0..nodes.len() - 1 {
            let half = (nodes[i + 1] - nodes[i]) * S::lit(0.5);
            let l = self.right_of(i);
            w[l] = w[l] + half;
            w[i + 1] = w[i + 1] + half;
        }
        w
    }

    /// Continuous cumulative trapezoid integral from `a`, as slots.
    pub fn cumulative_integral(&self, dofs: &[S]) -> Vec<S> {
        let nodes = self.grid.nodes();
        let mut out = vec![S::zero(); self.slot_count];
        let mut acc = S::zero();
        let mut carry = S::zero();
        for i in 0..nodes.len() - 1 {
            let piece = (nodes[i + 1] - nodes[i]) * (dofs[self.right_of(i)] + dofs[i + 1]) * S::lit(0.5);
            let y = piece - carry;
            let t = acc + y;
            carry = (t - acc) - y;
            acc = t;
            out[i + 1] = acc;
        }
        for (i, s) in self.right_slot.iter().enumerate() {
            if let Some(s) = s {
                out[*s] = out[i];
            }
        }
        out
    }
}

/// Result of a Neumann solve `Av = y`.
#[derive(Debug, Clone)]
pub struct NeumannSolve<S> {
    pub v: Vec<S>,
    pub iterations: usize,
    pub residual: S,
}

/// Sparse form of `A = Id + F` with `(Fv)(t) = c(t)·v(t−δ)` on a periodic space.
#[derive(Debug, Clone)]
pub struct NeutralOperator<S> {
    space: PeriodicSpace<S>,
    rows: Vec<(S, Stencil<S>)>,
    contraction: S,
}

impl<S: Real> NeutralOperator<S> {
    pub fn new(
        coefficient: &NeutralCoefficientFn<S>,
        space: PeriodicSpace<S>,
        delta: S,
    ) -> Result<Self, TransformError> {
        let period = coefficient.period();
        let grid = space.grid();
        if grid.a() != S::zero() || grid.b() != period {
            return Err(TransformError::WrongDomain {
                a: 0.0,
                b: period.to_f64_lossy(),
                got_a: grid.a().to_f64_lossy(),
                got_b: grid.b().to_f64_lossy(),
            });
        }
        let rows = space
            .slot_points()
            .into_iter()
            .map(|(t, side)| (coefficient.eval_side(&t, side), space.stencil(t - delta, side)))
            .collect();
        let contraction = coefficient.contraction_bound();
        Ok(Self {
            space,
            rows,
            contraction,
        })
    }

    pub fn space(&self) -> &PeriodicSpace<S> {
        &self.space
    }

    fn apply_f(&self, v: &[S], out: &mut [S]) {
        for (o, (c, st)) in out.iter_mut().zip(&self.rows) {
            *o = *c * (st[0].1 * v[st[0].0] + st[1].1 * v[st[1].0]);
        }
    }

    fn apply_f_transpose(&self, v: &[S], out: &mut [S]) {
        out.iter_mut().for_each(|o| *o = S::zero());
        for (vi, (c, st)) in v.iter().zip(&self.rows) {
            for &(slot, w) in st {
                out[slot] = out[slot] + *c * w * *vi;
            }
        }
    }

    pub fn apply(&self, v: &[S]) -> Vec<S> {
        let mut out = vec![S::zero(); v.len()];
        self.apply_f(v, &mut out);
        out.iter_mut().zip(v).for_each(|(o, &x)| *o = *o + x);
        out
    }

    pub fn apply_transpose(&self, v: &[S]) -> Vec<S> {
        let mut out = vec![S::zero(); v.len()];
        self.apply_f_transpose(v, &mut out);
        out.iter_mut().zip(v).for_each(|(o, &x)| *o = *o + x);
        out
    }

    fn check_contraction(&self) -> Result<(), TransformError> {
        if !(self.contraction < S::one()) {
            return Err(TransformError::NotContractive(self.contraction.to_f64_lossy()));
        }
        Ok(())
    }

    fn max_iterations(&self, tol: S, scale: S) -> usize {
        let q = self.contraction.max(S::lit(1e-300));
        if q <= S::zero() || scale <= S::zero() {
            return 2;
        }
        let n = ((tol / scale).ln() / q.ln()).ceil().to_usize().unwrap_or(10_000);
        n.saturating_mul(2).clamp(4, 200_000)
    }

    /// Solves `Av = y` by `v ← y − Fv` until `|Av − y|∞ ≤ tol`.
    pub fn solve(&self, y: &[S], tol: S) -> Result<NeumannSolve<S>, TransformError> {
        self.check_contraction()?;
        let y_norm = sup(y);
        let mut v = y.to_vec();
        let mut fv = vec![S::zero(); y.len()];
        let max_iter = self.max_iterations(tol, y_norm.max(tol));
        for it in 0..=max_iter {
            self.apply_f(&v, &mut fv);
            let mut residual = S::zero();
            for ((vi, &yi), &fi) in v.iter_mut().zip(y).zip(&fv) {
                let next = yi - fi;
                residual = residual.max((next - *vi).abs());
                *vi = next;
            }
            if residual <= tol {
                let bound = y_norm / (S::one() - self.contraction) + tol;
                let norm = sup(&v);
                if norm > bound * (S::one() + S::lit(1e-12)) {
                    return Err(TransformError::BoundViolated {
                        norm: norm.to_f64_lossy(),
                        bound: bound.to_f64_lossy(),
                    });
                }
                return Ok(NeumannSolve {
                    v,
                    iterations: it + 1,
                    residual,
                });
            }
            if it == max_iter {
                return Err(TransformError::NoConvergence {
                    iterations: it + 1,
                    residual: residual.to_f64_lossy(),
                });
            }
        }
        unreachable!()
    }

    /// Solves `Aᵀψ = w`; the transposed delayed part is a contraction in the
    /// 1-norm, which is what the iteration monitors.
    pub fn solve_transpose(&self, w: &[S], tol: S) -> Result<NeumannSolve<S>, TransformError> {
        self.check_contraction()?;
        let scale: S = w.iter().fold(S::zero(), |a, &x| a + x.abs());
        let mut psi = w.to_vec();
        let mut ft = vec![S::zero(); w.len()];
        let max_iter = self.max_iterations(tol, scale.max(tol));
        for it in 0..=max_iter {
            self.apply_f_transpose(&psi, &mut ft);
            let mut change = S::zero();
            for ((p, &wi), &fi) in psi.iter_mut().zip(w).zip(&ft) {
                let next = wi - fi;
                change = change + (next - *p).abs();
                *p = next;
            }
            if change <= tol * scale.max(S::one()) {
                return Ok(NeumannSolve {
                    v: psi,
                    iterations: it + 1,
                    residual: change,
                });
            }
            if it == max_iter {
                return Err(TransformError::NoConvergence {
                    iterations: it + 1,
                    residual: change.to_f64_lossy(),
                });
            }
        }
        unreachable!()
    }
}

fn sup<S: Real>(v: &[S]) -> S {
    v.iter().fold(S::zero(), |m, x| m.max(x.abs()))
}

/// `(Av)(t) = v(t) + c(t)·v(t−δ)` for `v` on `[0, T]`, extended periodically.
pub fn apply_a<S: Real>(
    coefficient: &NeutralCoefficientFn<S>,
    v: &RegulatedGridFn<S>,
    delta: S,
) -> Result<RegulatedGridFn<S>, TransformError> {
    let space = PeriodicSpace::new(v.grid().clone());
    let op = NeutralOperator::new(coefficient, space, delta)?;
    let out = op.apply(&op.space().to_dofs(v));
    Ok(op.space().from_dofs(&out))
}

/// Neumann solution of `Av = y` with `|Av − y|∞ ≤ tol`.
pub fn solve_a_inverse<S: Real>(
    coefficient: &NeutralCoefficientFn<S>,
    y: &RegulatedGridFn<S>,
    delta: S,
    tol: S,
) -> Result<RegulatedGridFn<S>, TransformError> {
    let space = PeriodicSpace::new(y.grid().clone());
    let op = NeutralOperator::new(coefficient, space, delta)?;
    let sol = op.solve(&op.space().to_dofs(y), tol)?;
    Ok(op.space().from_dofs(&sol.v))
}

/// Derivative of a sampled function by finite differences: three-point
/// central formulas at smooth nodes, one-sided three-point formulas taken
/// inside the adjacent piece at breakpoints.
pub fn finite_difference_derivative_fn<S: Real>(f: &RegulatedGridFn<S>) -> RegulatedGridFn<S> {
    let grid = f.grid().clone();
    let t = grid.nodes();
    let n = t.len();
    let v = f.values();
    let bp = |i: usize| grid.is_breakpoint(i);
    let backward = |i: usize| -> S {
        let h1 = t[i] - t[i - 1];
        if i >= 2 && !bp(i - 1) {
            let h2 = t[i - 1] - t[i - 2];
            let (a, b, c) = (v[i], v[i - 1], f.value_right(i - 2));
            (a - b) / h1 + (a - b - (b - c) * h1 / h2) / (h1 + h2)
        } else {
            (v[i] - f.value_right(i - 1)) / h1
        }
    };
    let forward = |i: usize| -> S {
        let h1 = t[i + 1] - t[i];
        let a = f.value_right(i);
        if i + 2 < n && !bp(i + 1) {
            let h2 = t[i + 2] - t[i + 1];
            let (b, c) = (v[i + 1], v[i + 2]);
            (b - a) / h1 - ((c - b) * h1 / h2 - (b - a)) / (h1 + h2)
        } else {
            (v[i + 1] - a) / h1
        }
    };
    let mut values = Vec::with_capacity(n);
    let mut right = BTreeMap::new();
    for i in 0..n {
        if i > 0 && i + 1 < n && !bp(i) {
            let (h1, h2) = (t[i] - t[i - 1], t[i + 1] - t[i]);
            let (a, b, c) = (f.value_right(i - 1), v[i], v[i + 1]);
            values.push(
                -h2 / (h1 * (h1 + h2)) * a + (h2 - h1) / (h1 * h2) * b + h1 / (h2 * (h1 + h2)) * c,
            );
        } else if i == 0 {
            values.push(forward(0));
        } else {
            values.push(backward(i));
            if i + 1 < n {
                right.insert(i, forward(i));
            }
        }
    }
    RegulatedGridFn::new(grid, values, right).expect("right limits at breakpoints only")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ZoneKind {
    Impulse,
    WindowEnd,
    Propagated,
}

/// A breakpoint neighbourhood left out of the residual maximum.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExcludedZone {
    pub t: f64,
    pub half_width: f64,
    pub kind: ZoneKind,
    /// `x(t⁺) − x(t)` of the candidate at this node.
    pub value_jump: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceReport {
    pub max_ode_residual: f64,
    pub max_ode_residual_at: f64,
    pub max_jump_residual: f64,
    pub periodicity_residual: f64,
    pub reverse_max_ode_residual: f64,
    pub checked_nodes: usize,
    pub excluded_zones: Vec<ExcludedZone>,
}

impl EquivalenceReport {
    pub fn within(&self, ode_tol: f64, jump_tol: f64, periodicity_tol: f64) -> bool {
        self.max_ode_residual <= ode_tol
            && self.reverse_max_ode_residual <= ode_tol
            && self.max_jump_residual <= jump_tol
            && self.periodicity_residual <= periodicity_tol
    }
}

/// Which problem a candidate trajectory solves.
#[derive(Debug, Clone, Copy)]
pub enum Candidate<'a, S> {
    NonImpulsive(&'a RegulatedGridFn<S>),
    Impulsive(&'a RegulatedGridFn<S>),
}

/// Residual check of both problems for a candidate on `[−r, T]`.
///
/// Derivatives come from finite differences of the candidate values, never
/// from stored solver derivatives. Breakpoint nodes are excluded and listed.
pub fn verify_equivalence<S: Real>(
    spec: &ProblemSpec<S>,
    beta: &PiecewiseConstantFn<S>,
    candidate: Candidate<'_, S>,
) -> Result<EquivalenceReport, TransformError> {
    let (x, u) = match candidate {
        Candidate::NonImpulsive(u) => (to_impulsive(u, beta, &spec.schedule)?, u.clone()),
        Candidate::Impulsive(x) => (x.clone(), to_nonimpulsive(x, beta)?),
    };
    let grid = x.grid().clone();
    let (r, period, delta) = (spec.history(), spec.period(), spec.delta());
    if grid.a() != -r || grid.b() != period {
        return Err(TransformError::WrongDomain {
            a: (-r).to_f64_lossy(),
            b: period.to_f64_lossy(),
            got_a: grid.a().to_f64_lossy(),
            got_b: grid.b().to_f64_lossy(),
        });
    }
    let coefficient = NeutralCoefficientFn::new(spec.neutral, beta, &spec.schedule);
    let dx = finite_difference_derivative_fn(&x);
    let du = finite_difference_derivative_fn(&u);
    let nodes = grid.nodes();
    let n = nodes.len();
    let inf = f64::INFINITY;

    let mut max_res = 0.0f64;
    let mut max_at = f64::NAN;
    let mut max_rev = 0.0f64;
    let mut checked = 0usize;
    let mut zones = Vec::new();
    for i in 1..n - 1 {
        let t = nodes[i];
        if t <= S::zero() {
            continue;
        }
        if grid.is_breakpoint(i) {
            let kind = if impulse_at(&spec.schedule, t).is_some() {
                ZoneKind::Impulse
            } else if t == spec.schedule.window_end() {
                ZoneKind::WindowEnd
            } else {
                ZoneKind::Propagated
            };
            let half = (nodes[i + 1] - nodes[i - 1]) * S::lit(0.25);
            zones.push(ExcludedZone {
                t: t.to_f64_lossy(),
                half_width: half.to_f64_lossy(),
                kind,
                value_jump: (x.value_right(i) - x.values()[i]).to_f64_lossy(),
            });
            continue;
        }
        checked += 1;
        let xr = |tau: S| x.eval_unchecked(t + tau, Side::Left);
        let forward = match spec.f_eval(beta, t, Side::Left, &xr) {
            Ok(f) => {
                let lhs = dx.values()[i] + spec.neutral * dx.eval_unchecked(t - delta, Side::Left);
                (lhs - f).abs().to_f64_lossy()
            }
            Err(_) => inf,
        };
        let ur = |tau: S| u.eval_unchecked(t + tau, Side::Left);
        let reverse = match spec.h_eval_side(beta, t, Side::Left, &ur) {
            Ok(h) => {
                let lhs = du.values()[i]
                    + coefficient.eval_side(&t, Side::Left) * du.eval_unchecked(t - delta, Side::Left);
                (lhs - h).abs().to_f64_lossy()
            }
            Err(_) => inf,
        };
        let forward = if forward.is_nan() { inf } else { forward };
        if forward > max_res {
            max_res = forward;
            max_at = t.to_f64_lossy();
        }
        max_rev = max_rev.max(if reverse.is_nan() { inf } else { reverse });
    }

    let mut max_jump = 0.0f64;
    for (&tk, &bk) in spec.schedule.times.iter().zip(&spec.schedule.coeffs) {
        let res = match grid.find_node(tk) {
            Some(i) => (x.value_right(i) - (S::one() + bk) * x.values()[i]).abs().to_f64_lossy(),
            None => inf,
        };
        max_jump = max_jump.max(res);
    }
    let x0 = x.eval_unchecked(S::zero(), Side::Left);
    let periodicity = (x0 - x.values()[n - 1]).abs().to_f64_lossy();
    Ok(EquivalenceReport {
        max_ode_residual: max_res,
        max_ode_residual_at: max_at,
        max_jump_residual: max_jump,
        periodicity_residual: periodicity,
        reverse_max_ode_residual: max_rev,
        checked_nodes: checked,
        excluded_zones: zones,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rhs_dsl::parse;
    use std::f64::consts::PI;

    pub(crate) fn sec4_spec() -> ProblemSpec<f64> {
        let sched = ImpulseSchedule::new(2.0 * PI, 1.0, 2.0, vec![1.0, 1.5], vec![2.0, 3.0]);
        let rhs = parse("x(0)*abs(cos(t))/(27*pi*beta(t))", 2.0).unwrap();
        ProblemSpec::new(1.0 / 13.0, sched, rhs, 1.0, 1.0 / (27.0 * PI), None).unwrap()
    }

    fn sec4_grid(cells: usize) -> Arc<Grid<f64>> {
        let spec = sec4_spec();
        let beta = spec.beta();
        Arc::new(Grid::segmented(-2.0, 2.0 * PI, cells, beta.breakpoints(), None).unwrap())
    }

    #[test]
    fn spec_validation() {
        let s = sec4_spec();
        let mk = |b: f64, d: f64, l: f64| {
            ProblemSpec::new(b, s.schedule.clone(), s.rhs.clone(), d, l, None)
        };
        assert!(matches!(mk(-0.1, 1.0, 1.0), Err(SpecError::NegativeNeutral(_))));
        assert!(matches!(mk(0.1, -1.0, 1.0), Err(SpecError::NonPositiveD(_))));
        assert!(matches!(mk(0.1, 1.0, 0.0), Err(SpecError::NonPositiveLipschitz(_))));
    }

    #[test]
    fn h_cancels_one_beta() {
        let spec = sec4_spec();
        let beta = spec.beta();
        let g = Arc::new(Grid::uniform(-2.0, 0.0, 4).unwrap());
        for &(t, c) in &[(0.3, 2.0), (1.2, -1.0), (1.7, 0.5), (6.0, 3.0)] {
            let phi = RegulatedGridFn::constant(g.clone(), c);
            let h = h_eval(&spec, &beta, t, &phi).unwrap();
            let expect = c * f64::cos(t).abs() / (27.0 * PI * beta.eval(&t));
            assert!((h - expect).abs() < 1e-15, "{t}: {h} vs {expect}");
        }
    }

    #[test]
    fn identity_beta_gives_h_equal_f() {
        let sched = ImpulseSchedule::new(4.0, 0.5, 1.0, vec![], vec![]);
        let rhs = parse("x(-0.5)*t + sin(x(0))", 1.0).unwrap();
        let spec = ProblemSpec::new(0.2, sched, rhs, 1.0, 1.0, None).unwrap();
        let beta = spec.beta();
        let phi = |tau: f64| 1.0 + tau * tau;
        let h = spec.h_eval_side(&beta, 2.0, Side::Left, &phi).unwrap();
        let f = spec.f_eval(&beta, 2.0, Side::Left, &phi).unwrap();
        assert_eq!(h, f);
    }

    #[test]
    fn beta_as_impulsive_image_of_one() {
        let spec = sec4_spec();
        let beta = spec.beta();
        let g = sec4_grid(64);
        let one = RegulatedGridFn::constant(g.clone(), 1.0);
        let x = to_impulsive(&one, &beta, &spec.schedule).unwrap();
        assert_eq!(x.eval(1.0).unwrap(), 1.0);
        assert_eq!(x.right_limit(1.0).unwrap(), 3.0);
        assert_eq!(x.eval(1.5).unwrap(), 3.0);
        assert_eq!(x.right_limit(1.5).unwrap(), 12.0);
        let u = to_nonimpulsive(&x, &beta).unwrap();
        let jumps: Vec<usize> = u.right_limits().keys().copied().collect();
        assert!(jumps.is_empty(), "{jumps:?}");
    }

    #[test]
    fn mismatched_jump_survives() {
        let spec = sec4_spec();
        let beta = spec.beta();
        let g = sec4_grid(64);
        let i = g.find_node(1.0).unwrap();
        let mut right = BTreeMap::new();
        right.insert(i, 5.0);
        let x = RegulatedGridFn::new(g.clone(), vec![1.0; g.len()], right).unwrap();
        let x = to_impulsive(&to_nonimpulsive(&x, &beta).unwrap(), &beta, &spec.schedule).unwrap();
        assert!(x.right_limits().contains_key(&i));
    }

    #[test]
    fn missing_breakpoint_rejected() {
        let spec = sec4_spec();
        let g = Arc::new(Grid::uniform(-2.0, 2.0 * PI, 10).unwrap());
        let u = RegulatedGridFn::constant(g, 1.0);
        assert!(matches!(
            to_impulsive(&u, &spec.beta(), &spec.schedule),
            Err(TransformError::MissingBreakpoint(_))
        ));
    }

    fn periodic_grid(cells: usize) -> Arc<Grid<f64>> {
        let spec = sec4_spec();
        let c = NeutralCoefficientFn::new(spec.neutral, &spec.beta(), &spec.schedule);
        Arc::new(Grid::segmented(0.0, 2.0 * PI, cells, c.pieces().breakpoints(), None).unwrap())
    }

    #[test]
    fn coefficient_pieces() {
        let spec = sec4_spec();
        let c = NeutralCoefficientFn::new(spec.neutral, &spec.beta(), &spec.schedule);
        assert_eq!(c.eval(&0.5), 1.0 / 13.0);
        // t in (1.5, 2]: β(t) = 12, β(t − 1) = 1
        assert!((c.eval(&2.0) - 1.0 / (13.0 * 12.0)).abs() < 1e-17);
        assert!((c.eval(&(2.0 * PI - 0.5)) - 12.0 / 13.0).abs() < 1e-15);
        assert!(c.sup_abs() <= c.contraction_bound() + 1e-15);
    }

    #[test]
    fn apply_a_on_constants() {
        let spec = sec4_spec();
        let c = NeutralCoefficientFn::new(spec.neutral, &spec.beta(), &spec.schedule);
        let g = periodic_grid(100);
        let one = RegulatedGridFn::constant(g.clone(), 1.0);
        let av = apply_a(&c, &one, 1.0).unwrap();
        assert!((av.eval(2.0).unwrap() - (1.0 + 1.0 / 156.0)).abs() < 1e-15);
        let sched = ImpulseSchedule::new(3.0f64, 0.7, 1.0, vec![], vec![]);
        let c0 = NeutralCoefficientFn::new(0.0, &sched.build_beta(), &sched);
        let g0 = Arc::new(Grid::uniform(0.0, 3.0, 30).unwrap());
        let y = RegulatedGridFn::from_fn(g0, |t: f64, _| t.sin());
        assert_eq!(apply_a(&c0, &y, 0.7).unwrap(), y);
    }

    #[test]
    fn inverse_of_constant() {
        let sched = ImpulseSchedule::new(3.0f64, 0.7, 1.0, vec![], vec![]);
        let c = NeutralCoefficientFn::new(0.4, &sched.build_beta(), &sched);
        let g = Arc::new(Grid::uniform(0.0, 3.0, 30).unwrap());
        let v = solve_a_inverse(&c, &RegulatedGridFn::constant(g, 1.0), 0.7, 1e-14).unwrap();
        assert!(v.values().iter().all(|&x| (x - 1.0 / 1.4).abs() < 1e-13));
    }

    #[test]
    fn inverse_then_apply_on_sec4() {
        let spec = sec4_spec();
        let c = NeutralCoefficientFn::new(spec.neutral, &spec.beta(), &spec.schedule);
        let g = periodic_grid(400);
        let y = RegulatedGridFn::from_fn(g, |t, side| {
            let s = if side == Side::Right { 0.1 } else { 0.0 };
            (3.0 * t).sin() + (t * t).cos() + s
        });
        let v = solve_a_inverse(&c, &y, 1.0, 1e-10).unwrap();
        let back = apply_a(&c, &v, 1.0).unwrap();
        let err = back.zip_with(&y, |a, b| a - b).unwrap().sup_norm();
        assert!(err <= 1e-10, "{err}");
        let bound = y.sup_norm() * 13.0 + 1e-10;
        assert!(v.sup_norm() <= bound);
    }

    #[test]
    fn refuses_without_contraction() {
        let sched = ImpulseSchedule::new(3.0f64, 0.7, 1.0, vec![], vec![]);
        let c = NeutralCoefficientFn::new(1.0, &sched.build_beta(), &sched);
        let g = Arc::new(Grid::uniform(0.0, 3.0, 30).unwrap());
        assert!(matches!(
            solve_a_inverse(&c, &RegulatedGridFn::constant(g, 1.0), 0.7, 1e-10),
            Err(TransformError::NotContractive(_))
        ));
    }

    #[test]
    fn transpose_is_adjoint() {
        let spec = sec4_spec();
        let c = NeutralCoefficientFn::new(spec.neutral, &spec.beta(), &spec.schedule);
        let op = NeutralOperator::new(&c, PeriodicSpace::new(periodic_grid(50)), 1.0).unwrap();
        let n = op.space().len();
        let a: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.11).cos()).collect();
        let lhs: f64 = op.apply(&a).iter().zip(&b).map(|(x, y)| x * y).sum();
        let rhs: f64 = a.iter().zip(op.apply_transpose(&b)).map(|(x, y)| x * y).sum();
        assert!((lhs - rhs).abs() < 1e-12);
        let psi = op.solve_transpose(&b, 1e-14).unwrap();
        let back = op.apply_transpose(&psi.v);
        assert!(back.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn cumulative_integral_matches_quadrature() {
        let space = PeriodicSpace::new(periodic_grid(80));
        let f = RegulatedGridFn::from_fn(space.grid().clone(), |t, s| {
            t.cos() + if s == Side::Right { 1.0 } else { 0.0 }
        });
        let dofs = space.to_dofs(&f);
        let w = space.quadrature_weights();
        let q: f64 = w.iter().zip(&dofs).map(|(a, b)| a * b).sum();
        let cum = space.cumulative_integral(&dofs);
        assert!((cum[space.grid().len() - 1] - q).abs() < 1e-12);
        assert!((f.trapezoid_integral() - q).abs() < 1e-12);
    }

    #[test]
    fn wrap_rules() {
        let space = PeriodicSpace::new(Arc::new(Grid::uniform(0.0, 4.0, 4).unwrap()));
        assert_eq!(space.wrap(-1.0, Side::Left), 3.0);
        assert_eq!(space.wrap(0.0, Side::Left), 4.0);
        assert_eq!(space.wrap(0.0, Side::Right), 0.0);
    }

    #[test]
    fn finite_differences_of_quadratic_are_exact() {
        let g = sec4_grid(37);
        let f = RegulatedGridFn::from_fn(g.clone(), |t, s| {
            let base = if t > 1.0 || (t == 1.0 && s == Side::Right) { 2.0 } else { 0.0 };
            t * t - 3.0 * t + base
        });
        let d = finite_difference_derivative_fn(&f);
        for (i, &t) in g.nodes().iter().enumerate() {
            assert!((d.values()[i] - (2.0 * t - 3.0)).abs() < 1e-9, "{t}");
            assert!((d.value_right(i) - (2.0 * t - 3.0)).abs() < 1e-9, "{t}");
        }
    }

    #[test]
    fn zero_candidate_is_a_solution() {
        let spec = sec4_spec();
        let beta = spec.beta();
        let zero = RegulatedGridFn::constant(sec4_grid(128), 0.0);
        let rep = verify_equivalence(&spec, &beta, Candidate::NonImpulsive(&zero)).unwrap();
        assert_eq!(rep.max_ode_residual, 0.0);
        assert_eq!(rep.max_jump_residual, 0.0);
        assert_eq!(rep.periodicity_residual, 0.0);
        assert!(rep.excluded_zones.iter().any(|z| z.kind == ZoneKind::Impulse));
    }

    #[test]
    fn constants_solve_trivial_problem() {
        let sched = ImpulseSchedule::new(3.0, 0.5, 1.0, vec![], vec![]);
        let spec = ProblemSpec::new(0.7, sched, parse("0", 1.0).unwrap(), 1.0, 1.0, None).unwrap();
        let beta = spec.beta();
        let g = Arc::new(Grid::segmented(-1.0, 3.0, 40, beta.breakpoints(), None).unwrap());
        let x = RegulatedGridFn::constant(g, 2.5);
        let rep = verify_equivalence(&spec, &beta, Candidate::Impulsive(&x)).unwrap();
        assert!(rep.within(1e-13, 0.0, 0.0), "{rep:?}");
    }
}
