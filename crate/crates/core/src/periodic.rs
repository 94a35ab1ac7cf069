//! Periodic solutions by the kernel/complement split.
//!
//! A `T`-periodic `u` solves `A u′ = λ·h(·, u_·)` exactly when
//! `u = c + v`, where `v(t) = ∫₀ᵗ A⁻¹(λh − q)` with `v(0) = 0`, `q` is the
//! constant that makes `v(T) = 0`, and the kernel constant `c` zeroes the
//! projected mean of `h`. The map `u ↦ c + v` is iterated with Anderson
//! mixing; the constant is found by bracketed secant/bisection.

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::hypotheses::{hypothesis_report, HypothesisOptions, HypothesisReport};
use crate::regulated::{Grid, RegulatedGridFn, Side};
use crate::rhs_dsl::{BinOp, EvalError, Expr, RhsExpr};
use crate::scalar::Real;
use crate::schedule::PiecewiseConstantFn;
use crate::solver::{derivative_l2_norm, JumpRecord, Trajectory};
use crate::transform::{
    scale_by_beta, to_impulsive, verify_equivalence, Candidate, EquivalenceReport, NeutralCoefficientFn,
    NeutralOperator, PeriodicSpace, ProblemSpec, TransformError,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PeriodicError {
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error("hypotheses (H3)/(H4) fail; rerun with the force option to solve anyway")]
    HypothesesFail,
    #[error("H2 sampling insufficient; widen bracket (g({lo}) = {g_lo}, g({hi}) = {g_hi})")]
    NoSignChange { lo: f64, hi: f64, g_lo: f64, g_hi: f64 },
    #[error("right-hand side failed at t = {t}: {source}")]
    Eval { t: f64, source: EvalError },
    #[error(transparent)]
    Transform(#[from] TransformError),
}

/// How the constant part of `λh` is removed before integrating.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Projector {
    /// Weighted mean with weights `A⁻ᵀ1`; the integral of `A⁻¹(w − q)` vanishes.
    #[default]
    Periodic,
    /// Plain time average `(1/T)∫w`.
    Mean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicSolveConfig<S> {
    pub n: usize,
    pub lambda_schedule: Vec<S>,
    pub max_outer_iters: usize,
    pub fp_tol: S,
    pub mean_tol: S,
    pub root_bracket: Option<(S, S)>,
    pub projector: Projector,
    pub relaxation: S,
    pub anderson_depth: usize,
    /// Solve even when (H3) or (H4) fail; the result is marked uncertified.
    pub force: bool,
    pub hypotheses: HypothesisOptions,
}

impl<S: Real> Default for PeriodicSolveConfig<S> {
    fn default() -> Self {
        Self {
            n: 2048,
            lambda_schedule: vec![S::one()],
            max_outer_iters: 200,
            fp_tol: S::lit(1e-10),
            mean_tol: S::lit(1e-10),
            root_bracket: None,
            projector: Projector::Periodic,
            relaxation: S::lit(0.5),
            anderson_depth: 5,
            force: false,
            hypotheses: HypothesisOptions::default(),
        }
    }
}

impl<S: Real> PeriodicSolveConfig<S> {
    pub fn validate(&self) -> Result<(), PeriodicError> {
        let bad = |m: &str| Err(PeriodicError::Config(m.to_string()));
        if self.n < 4 {
            return bad("N must be at least 4");
        }
        if self.lambda_schedule.iter().any(|&l| !(l > S::zero() && l <= S::one())) {
            return bad("every lambda must lie in (0, 1]");
        }
        if self.lambda_schedule.windows(2).any(|w| !(w[0] < w[1])) {
            return bad("lambda schedule must be ascending");
        }
        if !(self.fp_tol > S::zero() && self.mean_tol > S::zero()) {
            return bad("tolerances must be positive");
        }
        if !(self.relaxation > S::zero() && self.relaxation <= S::one()) {
            return bad("relaxation must lie in (0, 1]");
        }
        if let Some((lo, hi)) = self.root_bracket {
            if !(lo < hi) {
                return bad("root bracket must satisfy lo < hi");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SolveStatus {
    Converged,
    NotConverged,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[allow(non_snake_case)]
pub struct BoundCertificate {
    /// `‖u‖∞` of the jump-free solution; this is the quantity bounded by `D`.
    pub sup_norm: f64,
    /// `‖x‖∞` of the impulsive image `x = β·u`.
    pub sup_norm_impulsive: f64,
    pub D: Option<f64>,
    /// `‖u′‖₂` over one period.
    pub l2_norm: f64,
    pub l2_bound: Option<f64>,
    pub within_bounds: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicSolution<S> {
    pub lambda: S,
    pub u: Trajectory<S>,
    pub x: Trajectory<S>,
    pub kernel_constant: S,
    pub kernel_degenerate: bool,
    pub residuals: EquivalenceReport,
    pub bound_certificates: BoundCertificate,
    pub status: SolveStatus,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    /// `|q|` of the weighted mean at the returned iterate.
    pub projected_mean: f64,
    /// `|(1/T)∫h|` at the returned iterate.
    pub plain_mean: f64,
    pub certified: bool,
    pub hypotheses: HypothesisReport,
}

/// `λ·f`, so the impulsive image of a `λ`-solution can be checked.
pub fn scaled_rhs(rhs: &RhsExpr, lambda: f64) -> RhsExpr {
    if lambda == 1.0 {
        return rhs.clone();
    }
    RhsExpr::from_expr(Expr::binary(BinOp::Mul, Expr::Num(lambda), rhs.root().clone()))
}

/// Breakpoints on `[0, T]` of a periodic solution: impulses, `T − δ`, the
/// coefficient jumps, delay shifts, and their images under `t ↦ t + δ mod T`
/// until the neutral factor has decayed below `1e-10`.
pub fn periodic_breakpoints<S: Real>(spec: &ProblemSpec<S>, beta: &PiecewiseConstantFn<S>) -> Vec<S> {
    let (period, delta) = (spec.period(), spec.delta());
    let wrap = |s: S| {
        let mut s = s;
        while s < S::zero() {
            s = s + period;
        }
        while s >= period {
            s = s - period;
        }
        s
    };
    let mut seeds = vec![S::zero()];
    seeds.extend(spec.schedule.times.iter().copied());
    seeds.push(spec.schedule.window_end());
    seeds.extend(beta.breakpoints().iter().copied().filter(|&p| p > S::zero() && p < period));
    for &c in &spec.rhs.delays() {
        if c < 0.0 {
            for p in seeds.clone() {
                seeds.push(wrap(p - S::lit(c)));
            }
        }
    }
    let mut out = seeds.clone();
    let q = NeutralCoefficientFn::new(spec.neutral, beta, &spec.schedule).sup_abs();
    if delta > S::zero() && q > S::zero() {
        let j_max = if q < S::one() {
            (S::lit(1e-10).ln() / q.ln()).ceil().to_usize().unwrap_or(1)
        } else {
            1
        };
        let per_period = (period / delta).ceil().to_usize().unwrap_or(1).max(1);
        let j_max = j_max.max(per_period).min(64 * per_period);
        const CAP: usize = 2048;
        for j in 1..=j_max {
            for &p in &seeds {
                if out.len() >= CAP {
                    break;
                }
                out.push(wrap(p + delta * S::from_usize(j).unwrap()));
            }
        }
    }
    out.push(period);
    out
}

/// Numerical setting shared by all iterations of a solve.
pub struct PeriodicWorkspace<'a, S: Real> {
    spec: &'a ProblemSpec<S>,
    beta: &'a PiecewiseConstantFn<S>,
    op: NeutralOperator<S>,
    points: Vec<(S, Side)>,
    weights: Vec<S>,
    neumann_floor: S,
}

impl<'a, S: Real> PeriodicWorkspace<'a, S> {
    pub fn new(
        spec: &'a ProblemSpec<S>,
        beta: &'a PiecewiseConstantFn<S>,
        grid: Arc<Grid<S>>,
        projector: Projector,
    ) -> Result<Self, PeriodicError> {
        let coefficient = NeutralCoefficientFn::new(spec.neutral, beta, &spec.schedule);
        let space = PeriodicSpace::new(grid);
        let op = NeutralOperator::new(&coefficient, space, spec.delta())?;
        let points = op.space().slot_points();
        let omega = op.space().quadrature_weights();
        let weights = match projector {
            Projector::Mean => omega,
            Projector::Periodic => op.solve_transpose(&omega, S::lit(1e-15))?.v,
        };
        Ok(Self {
            spec,
            beta,
            op,
            points,
            weights,
            neumann_floor: S::lit(1e-14),
        })
    }

    pub fn space(&self) -> &PeriodicSpace<S> {
        self.op.space()
    }

    /// Slot values of `h(t, u_t)` with delayed reads from the periodic
    /// extension of `u`.
    pub fn eval_h(&self, u: &[S]) -> Result<Vec<S>, PeriodicError> {
        let space = self.space();
        self.points
            .iter()
            .map(|&(t, side)| {
                let phi = |tau: S| space.eval(u, t + tau, side);
                self.spec
                    .h_eval_side(self.beta, t, side, &phi)
                    .map_err(|source| PeriodicError::Eval {
                        t: t.to_f64_lossy(),
                        source,
                    })
            })
            .collect()
    }

    fn dot(&self, a: &[S], b: &[S]) -> S {
        crate::scalar::compensated_sum(a.iter().zip(b).map(|(&x, &y)| x * y))
    }

    /// The constant removed from `w` by the projector.
    pub fn project(&self, w: &[S]) -> S {
        let ones = self.weights.iter().fold(S::zero(), |a, &x| a + x);
        self.dot(&self.weights, w) / ones
    }

    /// `v = ∫₀ᵗ A⁻¹(w − q)` as slots, with its derivative `A⁻¹(w − q)`.
    pub fn lp_inverse_complement(&self, w: &[S], tol: S) -> Result<(Vec<S>, Vec<S>, S), PeriodicError> {
        let q = self.project(w);
        let shifted: Vec<S> = w.iter().map(|&x| x - q).collect();
        let scale = shifted.iter().fold(S::zero(), |m, x| m.max(x.abs()));
        let tol = tol.max(self.neumann_floor * (S::one() + scale));
        let z = self.op.solve(&shifted, tol)?.v;
        let v = self.space().cumulative_integral(&z);
        Ok((v, z, q))
    }

    fn kernel_residual(&self, c: S, v: &[S]) -> Result<S, PeriodicError> {
        let u: Vec<S> = v.iter().map(|&x| x + c).collect();
        Ok(self.project(&self.eval_h(&u)?))
    }

    fn plain_mean(&self, h: &[S]) -> S {
        let omega = self.space().quadrature_weights();
        self.dot(&omega, h) / self.space().period()
    }
}

struct Kernel<S> {
    c: S,
    degenerate: bool,
}

fn solve_kernel<S: Real>(
    ws: &PeriodicWorkspace<'_, S>,
    v: &[S],
    bracket: (S, S),
    expand: bool,
    tol: S,
) -> Result<Kernel<S>, PeriodicError> {
    let g = |c: S| ws.kernel_residual(c, v);
    let (mut lo, mut hi) = bracket;
    let (mut g_lo, mut g_hi) = (g(lo)?, g(hi)?);
    let mut grow = 0;
    while expand && g_lo.signum() == g_hi.signum() && g_lo != S::zero() && g_hi != S::zero() && grow < 40 {
        if g_lo.abs() <= tol && g_hi.abs() <= tol {
            break;
        }
        lo = lo * S::lit(2.0);
        hi = hi * S::lit(2.0);
        g_lo = g(lo)?;
        g_hi = g(hi)?;
        grow += 1;
    }
    let mid = (lo + hi) * S::lit(0.5);
    if g_lo.abs() <= tol && g_hi.abs() <= tol && g(mid)?.abs() <= tol {
        return Ok(Kernel { c: mid, degenerate: true });
    }
    if g_lo == S::zero() {
        return Ok(Kernel { c: lo, degenerate: false });
    }
    if g_hi == S::zero() {
        return Ok(Kernel { c: hi, degenerate: false });
    }
    if g_lo.signum() == g_hi.signum() {
        return Err(PeriodicError::NoSignChange {
            lo: lo.to_f64_lossy(),
            hi: hi.to_f64_lossy(),
            g_lo: g_lo.to_f64_lossy(),
            g_hi: g_hi.to_f64_lossy(),
        });
    }
    // Illinois variant of regula falsi, falling back to bisection
    let mut side = 0i8;
    let mut best = if g_lo.abs() < g_hi.abs() { lo } else { hi };
    for _ in 0..200 {
        let width = hi - lo;
        if width <= S::epsilon() * S::lit(4.0) * (S::one() + lo.abs().max(hi.abs())) {
            break;
        }
        let mut c = hi - g_hi * (hi - lo) / (g_hi - g_lo);
        if !(c > lo && c < hi) {
            c = (lo + hi) * S::lit(0.5);
        }
        let gc = g(c)?;
        best = c;
        if gc.abs() <= tol * S::lit(1e-3) || gc == S::zero() {
            break;
        }
        if gc.signum() == g_hi.signum() {
            hi = c;
            g_hi = gc;
            if side == 1 {
                g_lo = g_lo * S::lit(0.5);
            }
            side = 1;
        } else {
            lo = c;
            g_lo = gc;
            if side == -1 {
                g_hi = g_hi * S::lit(0.5);
            }
            side = -1;
        }
    }
    Ok(Kernel { c: best, degenerate: false })
}

/// One application of the split map at `λ`.
struct Step<S> {
    next: Vec<S>,
    derivative: Vec<S>,
    kernel: Kernel<S>,
}

fn split_map<S: Real>(
    ws: &PeriodicWorkspace<'_, S>,
    u: &[S],
    lambda: S,
    bracket: (S, S),
    expand: bool,
    cfg: &PeriodicSolveConfig<S>,
) -> Result<Step<S>, PeriodicError> {
    let w: Vec<S> = ws.eval_h(u)?.into_iter().map(|x| lambda * x).collect();
    let tol = (cfg.fp_tol.min(cfg.mean_tol)) * S::lit(1e-3);
    let (v, z, _) = ws.lp_inverse_complement(&w, tol)?;
    let kernel = solve_kernel(ws, &v, bracket, expand, cfg.mean_tol)?;
    let next = v.iter().map(|&x| x + kernel.c).collect();
    Ok(Step {
        next,
        derivative: z,
        kernel,
    })
}

fn sup<S: Real>(v: &[S]) -> S {
    v.iter().fold(S::zero(), |m, x| m.max(x.abs()))
}

/// Least-squares Anderson mixing over the last few residuals.
struct Anderson<S> {
    depth: usize,
    beta: S,
    dx: Vec<Vec<S>>,
    dg: Vec<Vec<S>>,
    last: Option<(Vec<S>, Vec<S>)>,
}

impl<S: Real> Anderson<S> {
    fn new(depth: usize, beta: S) -> Self {
        Self {
            depth,
            beta,
            dx: Vec::new(),
            dg: Vec::new(),
            last: None,
        }
    }

    fn reset(&mut self) {
        self.dx.clear();
        self.dg.clear();
        self.last = None;
    }

    fn next(&mut self, x: &[S], g: &[S]) -> Vec<S> {
        if let Some((px, pg)) = self.last.take() {
            self.dx.push(x.iter().zip(&px).map(|(a, b)| *a - *b).collect());
            self.dg.push(g.iter().zip(&pg).map(|(a, b)| *a - *b).collect());
            if self.dx.len() > self.depth {
                self.dx.remove(0);
                self.dg.remove(0);
            }
        }
        self.last = Some((x.to_vec(), g.to_vec()));
        let mut out: Vec<S> = x.iter().zip(g).map(|(&a, &b)| a + self.beta * b).collect();
        let m = self.dg.len();
        if m == 0 || self.depth == 0 {
            return out;
        }
        let mut a = vec![vec![S::zero(); m]; m];
        let mut rhs = vec![S::zero(); m];
        for (i, (row, r)) in a.iter_mut().zip(rhs.iter_mut()).enumerate() {
            for (cell, dj) in row.iter_mut().zip(&self.dg) {
                *cell = dot(&self.dg[i], dj);
            }
            *r = dot(&self.dg[i], g);
        }
        let trace = (0..m).fold(S::zero(), |s, i| s + a[i][i]);
        let reg = trace * S::lit(1e-12) + S::min_positive_value();
        for (i, row) in a.iter_mut().enumerate() {
            row[i] = row[i] + reg;
        }
        let Some(gamma) = gauss_solve(a, rhs) else {
            self.reset();
            return out;
        };
        for (k, &gk) in gamma.iter().enumerate() {
            for (o, (dx, dg)) in out.iter_mut().zip(self.dx[k].iter().zip(&self.dg[k])) {
                *o = *o - gk * (*dx + self.beta * *dg);
            }
        }
        out
    }
}

fn dot<S: Real>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).fold(S::zero(), |s, (&x, &y)| s + x * y)
}

#[allow(clippy::needless_range_loop)]
fn gauss_solve<S: Real>(mut a: Vec<Vec<S>>, mut b: Vec<S>) -> Option<Vec<S>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())?;
        if !(a[piv][col].abs() > S::zero()) {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] = a[row][k] - f * a[col][k];
            }
            b[row] = b[row] - f * b[col];
        }
    }
    let mut x = vec![S::zero(); n];
    for i in (0..n).rev() {
        let s = (i + 1..n).fold(b[i], |s, k| s - a[i][k] * x[k]);
        x[i] = s / a[i][i];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

struct LambdaOutcome<S> {
    u: Vec<S>,
    derivative: Vec<S>,
    kernel: Kernel<S>,
    converged: bool,
    iterations: usize,
    history: Vec<f64>,
    projected_mean: S,
}

fn iterate_lambda<S: Real>(
    ws: &PeriodicWorkspace<'_, S>,
    start: Vec<S>,
    lambda: S,
    bracket: (S, S),
    expand: bool,
    cfg: &PeriodicSolveConfig<S>,
) -> Result<LambdaOutcome<S>, PeriodicError> {
    let mut mixer = Anderson::new(cfg.anderson_depth, cfg.relaxation);
    let mut u = start;
    let mut history = Vec::new();
    let mut best: Option<(S, Step<S>)> = None;
    for it in 0..cfg.max_outer_iters.max(1) {
        let step = split_map(ws, &u, lambda, bracket, expand, cfg)?;
        let g: Vec<S> = step.next.iter().zip(&u).map(|(a, b)| *a - *b).collect();
        let res = sup(&g);
        history.push(res.to_f64_lossy());
        let mean = ws.project(&ws.eval_h(&step.next)?).abs();
        let improved = best.as_ref().is_none_or(|(r, _)| res < *r);
        if res <= cfg.fp_tol && mean <= cfg.mean_tol {
            return Ok(LambdaOutcome {
                u: step.next,
                derivative: step.derivative,
                kernel: step.kernel,
                converged: true,
                iterations: it + 1,
                history,
                projected_mean: mean,
            });
        }
        if !res.is_finite() {
            break;
        }
        let blown = best.as_ref().is_some_and(|(r, _)| res > *r * S::lit(1e3));
        if blown {
            mixer.reset();
            let (_, b) = best.as_ref().unwrap();
            u = b.next.clone();
            continue;
        }
        u = mixer.next(&u, &g);
        if improved {
            best = Some((res, step));
        }
    }
    let (_, step) = match best {
        Some(b) => b,
        None => (S::nan(), split_map(ws, &u, lambda, bracket, expand, cfg)?),
    };
    let mean = ws.project(&ws.eval_h(&step.next)?).abs();
    Ok(LambdaOutcome {
        u: step.next,
        derivative: step.derivative,
        kernel: step.kernel,
        converged: false,
        iterations: cfg.max_outer_iters,
        history,
        projected_mean: mean,
    })
}

/// Periodic grid on `[0, T]` used by the solver.
pub fn periodic_grid<S: Real>(
    spec: &ProblemSpec<S>,
    beta: &PiecewiseConstantFn<S>,
    n: usize,
) -> Result<Arc<Grid<S>>, PeriodicError> {
    let bps = periodic_breakpoints(spec, beta);
    Grid::segmented(S::zero(), spec.period(), n, &bps, None)
        .map(Arc::new)
        .map_err(|e| PeriodicError::Transform(e.into()))
}

/// Slot data on `[0, T]` extended periodically to a grid on `[−r, T]`.
pub fn extend_periodically<S: Real>(space: &PeriodicSpace<S>, r: S, slots: &[S]) -> RegulatedGridFn<S> {
    let g = space.grid();
    let period = space.period();
    let tol = period * S::lit(1e-12);
    let mut nodes = vec![-r];
    let mut flags = vec![true];
    for i in 0..g.len() - 1 {
        let s = g.node(i) - period;
        if s > -r + tol {
            nodes.push(s);
            flags.push(g.is_breakpoint(i));
        }
    }
    for i in 0..g.len() {
        nodes.push(g.node(i));
        flags.push(g.is_breakpoint(i));
    }
    let grid = Arc::new(Grid::new(nodes, flags).expect("increasing by construction"));
    let own = space.from_dofs(slots);
    RegulatedGridFn::from_fn(grid, |t, side| {
        if t < S::zero() {
            space.eval(slots, t, side)
        } else {
            own.eval_side(t, side).expect("node of the periodic grid")
        }
    })
}

fn default_bracket<S: Real>(report: &HypothesisReport, d: S) -> ((S, S), bool) {
    match report.D {
        Some(dd) if dd.is_finite() && dd > 0.0 => ((S::lit(-2.0 * dd), S::lit(2.0 * dd)), false),
        _ => {
            let m = S::lit(2.0) * d.max(S::one());
            ((-m, m), true)
        }
    }
}

/// Builds trajectories, residuals and certificates for converged slot data.
#[allow(clippy::too_many_arguments)]
fn assemble<S: Real>(
    ws: &PeriodicWorkspace<'_, S>,
    spec: &ProblemSpec<S>,
    beta: &PiecewiseConstantFn<S>,
    lambda: S,
    out: LambdaOutcome<S>,
    report: &HypothesisReport,
    cfg: &PeriodicSolveConfig<S>,
) -> Result<PeriodicSolution<S>, PeriodicError> {
    let space = ws.space();
    let r = spec.history();
    let u_ext = extend_periodically(space, r, &out.u);
    let du_ext = extend_periodically(space, r, &out.derivative);
    let u = Trajectory {
        x: u_ext.clone(),
        xprime: du_ext.clone(),
        jump_log: Vec::new(),
    };
    let x_fn = to_impulsive(&u_ext, beta, &spec.schedule)?;
    let dx_fn = scale_by_beta(&du_ext, beta)?;
    let g = x_fn.grid().clone();
    let jump_log = spec
        .schedule
        .times
        .iter()
        .filter_map(|&t| g.find_node(t))
        .map(|i| JumpRecord {
            t: g.node(i).to_f64_lossy(),
            pre: x_fn.values()[i].to_f64_lossy(),
            post: x_fn.value_right(i).to_f64_lossy(),
        })
        .collect();
    let x = Trajectory {
        x: x_fn,
        xprime: dx_fn,
        jump_log,
    };
    let scaled = ProblemSpec {
        rhs: scaled_rhs(&spec.rhs, lambda.to_f64_lossy()),
        ..spec.clone()
    };
    let residuals = verify_equivalence(&scaled, beta, Candidate::NonImpulsive(&u_ext))?;
    let h = ws.eval_h(&out.u)?;
    let plain_mean = ws.plain_mean(&h).abs().to_f64_lossy();
    let sup_norm = u.sup_norm_from(S::zero()).to_f64_lossy();
    let l2_norm = derivative_l2_norm(&u).to_f64_lossy();
    let fp = cfg.fp_tol.to_f64_lossy();
    let within_bounds = match (report.D, report.xprime_l2_bound) {
        (Some(d), Some(l2)) => Some(sup_norm <= d + fp && l2_norm <= l2 + fp),
        _ => None,
    };
    let converged = out.converged;
    let certified = converged && report.gate_passes() && within_bounds == Some(true);
    Ok(PeriodicSolution {
        lambda,
        bound_certificates: BoundCertificate {
            sup_norm,
            sup_norm_impulsive: x.sup_norm_from(S::zero()).to_f64_lossy(),
            D: report.D,
            l2_norm,
            l2_bound: report.xprime_l2_bound,
            within_bounds,
        },
        u,
        x,
        kernel_constant: out.kernel.c,
        kernel_degenerate: out.kernel.degenerate,
        residuals,
        status: if converged {
            SolveStatus::Converged
        } else {
            SolveStatus::NotConverged
        },
        iterations: out.iterations,
        residual_history: out.history,
        projected_mean: out.projected_mean.to_f64_lossy(),
        plain_mean,
        certified,
        hypotheses: report.clone(),
    })
}

struct Prepared<'a, S: Real> {
    ws: PeriodicWorkspace<'a, S>,
    report: HypothesisReport,
    bracket: (S, S),
    expand: bool,
}

fn prepare<'a, S: Real>(
    spec: &'a ProblemSpec<S>,
    beta: &'a PiecewiseConstantFn<S>,
    cfg: &PeriodicSolveConfig<S>,
) -> Result<Prepared<'a, S>, PeriodicError> {
    cfg.validate()?;
    let report = hypothesis_report(spec, beta, &cfg.hypotheses);
    if !report.gate_passes() && !cfg.force {
        return Err(PeriodicError::HypothesesFail);
    }
    let grid = periodic_grid(spec, beta, cfg.n)?;
    let ws = PeriodicWorkspace::new(spec, beta, grid, cfg.projector)?;
    let (bracket, expand) = match cfg.root_bracket {
        Some(b) => (b, false),
        None => default_bracket(&report, spec.d),
    };
    Ok(Prepared {
        ws,
        report,
        bracket,
        expand,
    })
}

/// Solves at one `λ` from the zero function.
pub fn solve_at_lambda<S: Real>(
    spec: &ProblemSpec<S>,
    beta: &PiecewiseConstantFn<S>,
    cfg: &PeriodicSolveConfig<S>,
    lambda: S,
) -> Result<PeriodicSolution<S>, PeriodicError> {
    let p = prepare(spec, beta, cfg)?;
    let start = vec![S::zero(); p.ws.space().len()];
    let out = iterate_lambda(&p.ws, start, lambda, p.bracket, p.expand, cfg)?;
    assemble(&p.ws, spec, beta, lambda, out, &p.report, cfg)
}

/// Follows the `λ` schedule with warm starts and returns the solution at its
/// last entry, or `None` for an empty schedule.
pub fn solve_periodic<S: Real>(
    spec: &ProblemSpec<S>,
    beta: &PiecewiseConstantFn<S>,
    cfg: &PeriodicSolveConfig<S>,
) -> Result<Option<PeriodicSolution<S>>, PeriodicError> {
    let p = prepare(spec, beta, cfg)?;
    let mut u = vec![S::zero(); p.ws.space().len()];
    let mut last = None;
    let mut history = Vec::new();
    let mut iterations = 0;
    for &lambda in &cfg.lambda_schedule {
        let out = iterate_lambda(&p.ws, u, lambda, p.bracket, p.expand, cfg)?;
        u = out.u.clone();
        history.extend_from_slice(&out.history);
        iterations += out.iterations;
        let converged = out.converged;
        last = Some((lambda, out));
        if !converged {
            break;
        }
    }
    let Some((lambda, mut out)) = last else {
        return Ok(None);
    };
    out.history = history;
    out.iterations = iterations;
    assemble(&p.ws, spec, beta, lambda, out, &p.report, cfg).map(Some)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub sup_norm: f64,
    pub l2_norm: f64,
    pub converged: bool,
    pub within_bounds: Option<bool>,
    pub iterations: usize,
}

impl SweepRow {
    pub fn from_solution<S: Real>(s: &PeriodicSolution<S>) -> Self {
        Self {
            lambda: s.lambda.to_f64_lossy(),
            sup_norm: s.bound_certificates.sup_norm,
            l2_norm: s.bound_certificates.l2_norm,
            converged: s.status == SolveStatus::Converged,
            within_bounds: s.bound_certificates.within_bounds,
            iterations: s.iterations,
        }
    }
}

/// Independent solves at every scheduled `λ`. A converged row violating the
/// bounds has `within_bounds == Some(false)`.
pub fn lambda_sweep_report<S: Real>(
    spec: &ProblemSpec<S>,
    beta: &PiecewiseConstantFn<S>,
    cfg: &PeriodicSolveConfig<S>,
) -> Result<Vec<SweepRow>, PeriodicError> {
    cfg.lambda_schedule
        .iter()
        .map(|&l| solve_at_lambda(spec, beta, cfg, l).map(|s| SweepRow::from_solution(&s)))
        .collect()
}

/// `∫₀ᵗ A⁻¹(w − q)` with `q = (1/T)∫w`, for `w` on a grid over `[0, T]`.
pub fn apply_lp_inverse_complement<S: Real>(
    spec: &ProblemSpec<S>,
    beta: &PiecewiseConstantFn<S>,
    w: &RegulatedGridFn<S>,
) -> Result<RegulatedGridFn<S>, PeriodicError> {
    apply_lp_inverse_complement_with(spec, beta, w, Projector::Mean)
}

pub fn apply_lp_inverse_complement_with<S: Real>(
    spec: &ProblemSpec<S>,
    beta: &PiecewiseConstantFn<S>,
    w: &RegulatedGridFn<S>,
    projector: Projector,
) -> Result<RegulatedGridFn<S>, PeriodicError> {
    let ws = PeriodicWorkspace::new(spec, beta, w.grid().clone(), projector)?;
    let slots = ws.space().to_dofs(w);
    let (v, _, _) = ws.lp_inverse_complement(&slots, S::lit(1e-14))?;
    Ok(ws.space().from_dofs(&v))
}
