//! Independent oracles for tests and fixture generation.
//!
//! Nothing here reuses the verifier's finite differences or quadrature:
//! derivatives, trapezoid sums and the exact constants are implemented
//! separately so that agreement means something.

use std::fs;
use std::io;
use std::ops::{Div, Mul};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use num_rational::Ratio;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::periodic::{solve_periodic, PeriodicSolveConfig};
use crate::regulated::{Grid, RegulatedGridFn};
use crate::rhs_dsl::{parse, BinOp, Expr, Func, RhsExpr};
use crate::schedule::{beta_extrema, ImpulseSchedule, PiecewiseConstantFn};
use crate::solver::{
    history_breakpoints, integrate_impulsive_on, integration_grid, InitialData, JumpRecord, SolverError,
    Trajectory,
};
use crate::transform::ProblemSpec;
use std::f64::consts::PI;

/// Step-halving record of a reference run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleRun {
    pub base_n: usize,
    pub refined_n: usize,
    pub finest_n: usize,
    /// `max |x_R − x_4N|` over base nodes.
    pub richardson_estimate: f64,
    /// `log₂(‖x_N − x_2N‖/‖x_2N − x_4N‖)`, absent when a difference vanishes.
    pub observed_order: Option<f64>,
    pub differences: [f64; 2],
}

fn slot_values(tr: &Trajectory<f64>, stride: usize, base: &Grid<f64>) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut x = Vec::new();
    let mut xr = Vec::new();
    let mut d = Vec::new();
    let mut dr = Vec::new();
    for i in 0..base.len() {
        let j = i * stride;
        x.push(tr.x.values()[j]);
        xr.push(tr.x.value_right(j));
        d.push(tr.xprime.values()[j]);
        dr.push(tr.xprime.value_right(j));
    }
    (x, xr, d, dr)
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Runs `N`, `2N` and `4N` on nested grids and Richardson-extrapolates the
/// two finest runs onto the base nodes with the nominal order two.
pub fn reference_trajectory(
    spec: &ProblemSpec<f64>,
    beta: &PiecewiseConstantFn<f64>,
    init: &InitialData<f64>,
    n: usize,
) -> Result<(Trajectory<f64>, OracleRun), SolverError> {
    let g1 = integration_grid(spec, n, &history_breakpoints(init, spec.period()))?;
    let g2 = Arc::new(g1.refined());
    let g4 = Arc::new(g2.refined());
    let t1 = integrate_impulsive_on(spec, beta, init, g1.clone(), None)?;
    let t2 = integrate_impulsive_on(spec, beta, init, g2, None)?;
    let t4 = integrate_impulsive_on(spec, beta, init, g4, None)?;
    let (x1, xr1, _, _) = slot_values(&t1, 1, &g1);
    let (x2, xr2, d2, dr2) = slot_values(&t2, 2, &g1);
    let (x4, xr4, d4, dr4) = slot_values(&t4, 4, &g1);
    let e1 = max_diff(&x1, &x2).max(max_diff(&xr1, &xr2));
    let e2 = max_diff(&x2, &x4).max(max_diff(&xr2, &xr4));
    let extrapolate = |fine: &[f64], coarse: &[f64]| -> Vec<f64> {
        fine.iter().zip(coarse).map(|(f, c)| f + (f - c) / 3.0).collect()
    };
    let xv = extrapolate(&x4, &x2);
    let xrv = extrapolate(&xr4, &xr2);
    let dv = extrapolate(&d4, &d2);
    let drv = extrapolate(&dr4, &dr2);
    let estimate = max_diff(&xv, &x4).max(max_diff(&xrv, &xr4));
    let rights = |vals: &[f64], r: &[f64]| {
        g1.breakpoint_indices()
            .filter(|&i| r[i] != vals[i])
            .map(|i| (i, r[i]))
            .collect()
    };
    let x = RegulatedGridFn::new(g1.clone(), xv.clone(), rights(&xv, &xrv)).map_err(SolverError::from)?;
    let xprime = RegulatedGridFn::new(g1.clone(), dv.clone(), rights(&dv, &drv)).map_err(SolverError::from)?;
    let jump_log = spec
        .schedule
        .times
        .iter()
        .filter_map(|&t| g1.find_node(t))
        .map(|i| JumpRecord {
            t: g1.node(i),
            pre: xv[i],
            post: xrv[i],
        })
        .collect();
    let observed_order = (e1 > 0.0 && e2 > 0.0).then(|| (e1 / e2).log2());
    Ok((
        Trajectory { x, xprime, jump_log },
        OracleRun {
            base_n: n,
            refined_n: 2 * n,
            finest_n: 4 * n,
            richardson_estimate: estimate,
            observed_order,
            differences: [e1, e2],
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FdError {
    #[error("node {0} is an endpoint")]
    Endpoint(usize),
    #[error("node {0} is at or next to a breakpoint")]
    AdjacentBreakpoint(usize),
}

/// Three-point central difference of `x` at an interior smooth node.
pub fn finite_difference_derivative(traj: &Trajectory<f64>, node: usize) -> Result<f64, FdError> {
    let g = traj.grid();
    if node == 0 || node + 1 >= g.len() {
        return Err(FdError::Endpoint(node));
    }
    if (node - 1..=node + 1).any(|i| g.is_breakpoint(i)) {
        return Err(FdError::AdjacentBreakpoint(node));
    }
    let (a, b, c) = (g.node(node - 1), g.node(node), g.node(node + 1));
    let x = traj.x.values();
    let (h1, h2) = (b - a, c - b);
    Ok((h1 * h1 * x[node + 1] - h2 * h2 * x[node - 1] + (h2 * h2 - h1 * h1) * x[node]) / (h1 * h2 * (h1 + h2)))
}

/// Plain trapezoid sum over sample pairs.
pub fn reference_trapezoid(t: &[f64], y: &[f64]) -> f64 {
    t.windows(2)
        .zip(y.windows(2))
        .map(|(tw, yw)| 0.5 * (tw[1] - tw[0]) * (yw[0] + yw[1]))
        .sum()
}

/// A problem satisfying (H2)–(H4) by construction, with
/// `f = a(t)·x(0)/β(t) + c(t)` and `T`-periodic positive `a`.
pub fn random_problem(seed: u64) -> ProblemSpec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let period: f64 = rng.gen_range(4.0..8.0);
    let delta: f64 = rng.gen_range(0.3..0.3 * period);
    let r = (delta + rng.gen_range(0.1..1.0)).min(period);
    let m = rng.gen_range(0..=4usize);
    let times = loop {
        let mut ts: Vec<f64> = (0..m).map(|_| rng.gen_range(0.1..period - delta - 0.1)).collect();
        ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if ts.windows(2).all(|w| w[1] - w[0] > 0.05) {
            break ts;
        }
    };
    let coeffs: Vec<f64> = (0..m).map(|_| rng.gen_range(-0.49..3.0)).collect();
    let schedule = ImpulseSchedule::new(period, delta, r, times, coeffs);
    let (k, big_k) = beta_extrema(&schedule.build_beta());
    let neutral = rng.gen_range(0.0..0.9) * k / big_k;
    let lipschitz = rng.gen_range(0.2..0.9) * (k - neutral * big_k) / (period * k);
    let eps: f64 = rng.gen_range(0.0..0.5);
    let a0 = lipschitz * k / (1.0 + eps);
    let w = 2.0 * PI / period;
    let (th1, th2): (f64, f64) = (rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI));
    let (c0, c1): (f64, f64) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    let s = c0.abs() + c1.abs();
    let d = 1.1 * s / (a0 * (1.0 - eps)) + 0.1;
    let source = format!(
        "{a0}*(1 + {eps}*cos({w}*t + {th1}))*x(0)/beta(t) + ({c0}) + ({c1})*sin({w2}*t + {th2})",
        w2 = 2.0 * w
    );
    let rhs = parse(&source, r).expect("generated source parses");
    ProblemSpec::new(neutral, schedule, rhs, d, lipschitz, Some(s)).expect("constructed within constraints")
}

/// Random expression tree of depth at most `max_depth` whose leaves read
/// `x(c)` only for `c ∈ [−r, 0]`.
pub fn random_expr(rng: &mut impl Rng, max_depth: usize, r: f64) -> Expr {
    if max_depth <= 1 || rng.gen_bool(0.25) {
        return match rng.gen_range(0..6) {
            0 => Expr::Num(rng.gen_range(0..1000) as f64 / 8.0),
            1 => Expr::Pi,
            2 => Expr::E,
            3 => Expr::Time,
            4 => Expr::Beta,
            _ => Expr::Delay(-(rng.gen_range(0..=64) as f64) * r / 64.0),
        };
    }
    let sub = max_depth - 1;
    match rng.gen_range(0..3) {
        0 => Expr::Neg(Box::new(random_expr(rng, sub, r))),
        1 => {
            let op = [BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div, BinOp::Pow][rng.gen_range(0..5)];
            Expr::binary(op, random_expr(rng, sub, r), random_expr(rng, sub, r))
        }
        _ => {
            let func = Func::ALL[rng.gen_range(0..Func::ALL.len())];
            let args = (0..func.arity()).map(|_| random_expr(rng, sub, r)).collect();
            Expr::call(func, args)
        }
    }
}

pub fn random_rhs(seed: u64, max_depth: usize, r: f64) -> RhsExpr {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    RhsExpr::from_expr(random_expr(&mut rng, max_depth, r))
}

/// Random regulated function on `[−r, T]` whose grid contains the
/// breakpoints of `beta`; about a third of the breakpoints carry a jump.
pub fn random_regulated_fn(seed: u64, beta: &PiecewiseConstantFn<f64>, cells: usize) -> RegulatedGridFn<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, b) = (beta.start(), beta.end());
    let mut marks: Vec<f64> = beta.breakpoints().to_vec();
    marks.extend((0..3).map(|_| rng.gen_range(a..b)));
    let grid = Arc::new(Grid::segmented(a, b, cells, &marks, None).expect("valid interval"));
    let values: Vec<f64> = (0..grid.len()).map(|_| rng.gen_range(-10.0..10.0)).collect();
    let last = grid.len() - 1;
    let mut rights = std::collections::BTreeMap::new();
    for i in grid.breakpoint_indices().filter(|&i| i < last) {
        if rng.gen_bool(1.0 / 3.0) {
            rights.insert(i, rng.gen_range(-10.0..10.0));
        }
    }
    RegulatedGridFn::new(grid, values, rights).expect("consistent sizes")
}

/// `coef·π^pow` with rational `coef`, enough for the constants of the
/// worked example to be computed without rounding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PiMonomial {
    pub coef: Ratio<i64>,
    pub pow: i32,
}

impl PiMonomial {
    pub fn new(num: i64, den: i64, pow: i32) -> Self {
        Self {
            coef: Ratio::new(num, den),
            pow,
        }
    }

    pub fn rational(num: i64, den: i64) -> Self {
        Self::new(num, den, 0)
    }

    /// Sum of like monomials; `None` when the powers differ and neither is zero.
    pub fn checked_add(self, other: Self) -> Option<Self> {
        if self.coef.is_zero() {
            return Some(other);
        }
        if other.coef.is_zero() {
            return Some(self);
        }
        (self.pow == other.pow).then(|| Self {
            coef: self.coef + other.coef,
            pow: self.pow,
        })
    }

    pub fn checked_sub(self, other: Self) -> Option<Self> {
        self.checked_add(Self {
            coef: -other.coef,
            pow: other.pow,
        })
    }

    pub fn is_positive(self) -> bool {
        self.coef.is_positive()
    }

    pub fn to_f64(self) -> f64 {
        self.coef.to_f64().unwrap() * PI.powi(self.pow)
    }
}

impl Mul for PiMonomial {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self {
            coef: self.coef * o.coef,
            pow: self.pow + o.pow,
        }
    }
}

impl Div for PiMonomial {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        Self {
            coef: self.coef / o.coef,
            pow: self.pow - o.pow,
        }
    }
}

/// Exact constants of the worked example.
#[derive(Debug, Clone, PartialEq)]
#[allow(non_snake_case)]
pub struct ExactConstants {
    pub k: PiMonomial,
    pub K: PiMonomial,
    pub h3_margin: PiMonomial,
    pub h4_bound: PiMonomial,
    pub h4_margin: PiMonomial,
    pub denominator: PiMonomial,
    pub D: PiMonomial,
    /// `‖x′‖₂` bound squared, so no root is needed.
    pub l2_bound_squared: PiMonomial,
}

/// Constants from `B`, `b`, `d`, `S`, `T` and the impulse factors, with
/// `k` and `K` the extreme partial products of `1 + b_k` and `1`.
#[allow(non_snake_case)]
pub fn exact_constants(
    B: PiMonomial,
    b: PiMonomial,
    d: PiMonomial,
    S: PiMonomial,
    T: PiMonomial,
    factors: &[Ratio<i64>],
) -> Option<ExactConstants> {
    let mut prods = vec![Ratio::one()];
    let mut run = Ratio::one();
    for &f in factors {
        run *= f;
        prods.push(run);
    }
    let k = PiMonomial {
        coef: *prods.iter().min()?,
        pow: 0,
    };
    let K = PiMonomial {
        coef: *prods.iter().max()?,
        pow: 0,
    };
    let h3_margin = (k / K).checked_sub(B)?;
    let h4_bound = k.checked_sub(B * K)? / (T * k);
    let h4_margin = h4_bound.checked_sub(b)?;
    let denominator = k.checked_sub(b * T * k)?.checked_sub(B * K)?;
    let numerator = (b * d * k).checked_add(S)?;
    let D = d.checked_add(numerator * T / denominator)?;
    let l2_bound_squared = numerator * numerator * T / (denominator * denominator);
    Some(ExactConstants {
        k,
        K,
        h3_margin,
        h4_bound,
        h4_margin,
        denominator,
        D,
        l2_bound_squared,
    })
}

pub fn sec4_exact() -> ExactConstants {
    exact_constants(
        PiMonomial::rational(1, 13),
        PiMonomial::new(1, 27, -1),
        PiMonomial::rational(1, 1),
        PiMonomial::rational(0, 1),
        PiMonomial::new(2, 1, 1),
        &[Ratio::from_integer(3), Ratio::from_integer(4)],
    )
    .expect("like powers throughout")
}

/// The worked example with the given right-hand side and threshold.
pub fn sec4_problem(rhs: &str, d: f64) -> ProblemSpec<f64> {
    let schedule = ImpulseSchedule::new(2.0 * PI, 1.0, 2.0, vec![1.0, 1.5], vec![2.0, 3.0]);
    ProblemSpec::new(1.0 / 13.0, schedule, parse(rhs, 2.0).expect("valid source"), d, 1.0 / (27.0 * PI), None)
        .expect("valid constants")
}

pub const SEC4_RHS: &str = "x(0)*abs(cos(t))/(27*pi*beta(t))";
pub const SHIFTED_RHS: &str = "(x(0)-5)*abs(cos(t))/(27*pi*beta(t))";
pub const LINEAR_RHS: &str = "-x(0) + cos(t)";

/// `(1/T)∫h(t, c)` for the worked example, integrated by hand piece by piece.
pub fn sec4_kernel_average(c: f64) -> f64 {
    let (s1, s15) = (1f64.sin(), 1.5f64.sin());
    c / 27.0 / (2.0 * PI * PI) * (2.0 * s1 + (s15 - s1) / 3.0 + (4.0 - s15 - s1) / 12.0)
}

/// The linear scalar problem `x′ = −x(t) + cos t` without impulses or
/// neutral term.
pub fn linear_problem() -> ProblemSpec<f64> {
    let schedule = ImpulseSchedule::new(2.0 * PI, 1.0, 2.0, vec![], vec![]);
    ProblemSpec::new(0.0, schedule, parse(LINEAR_RHS, 2.0).expect("valid source"), 1.0, 1.0, None)
        .expect("valid constants")
}

/// Periodic solution of `x′ = λ(−x + cos t)`.
pub fn linear_solution(lambda: f64, t: f64) -> f64 {
    (lambda * lambda * t.cos() + lambda * t.sin()) / (1.0 + lambda * lambda)
}

/// `sup |x_λ| = λ/√(1 + λ²)`.
pub fn linear_sup_norm(lambda: f64) -> f64 {
    lambda / (1.0 + lambda * lambda).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
#[allow(non_snake_case)]
pub struct Sec4Fixture {
    pub k: f64,
    pub K: f64,
    pub h3_margin: String,
    pub h3_margin_value: f64,
    pub h4_bound: String,
    pub h4_bound_value: f64,
    pub h4_margin_value: f64,
    pub D: String,
    pub D_value: f64,
    pub l2_bound_squared: String,
    pub l2_bound_value: f64,
    pub kernel_average_at_27: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct LinearFixture {
    pub lambdas: Vec<f64>,
    pub sup_norms: Vec<f64>,
    pub t: Vec<f64>,
    pub x_at_lambda_one: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct ShiftedFixture {
    pub n: usize,
    pub kernel_constant: f64,
    pub t: Vec<f64>,
    pub u: Vec<f64>,
    pub x: Vec<f64>,
    pub sup_norm: f64,
}

fn show(m: PiMonomial) -> String {
    match m.pow {
        0 => format!("{}", m.coef),
        p => format!("{}*pi^{p}", m.coef),
    }
}

pub fn sec4_fixture() -> Sec4Fixture {
    let e = sec4_exact();
    Sec4Fixture {
        k: e.k.to_f64(),
        K: e.K.to_f64(),
        h3_margin: show(e.h3_margin),
        h3_margin_value: e.h3_margin.to_f64(),
        h4_bound: show(e.h4_bound),
        h4_bound_value: e.h4_bound.to_f64(),
        h4_margin_value: e.h4_margin.to_f64(),
        D: show(e.D),
        D_value: e.D.to_f64(),
        l2_bound_squared: show(e.l2_bound_squared),
        l2_bound_value: e.l2_bound_squared.to_f64().sqrt(),
        kernel_average_at_27: sec4_kernel_average(27.0),
    }
}

pub const FIXTURE_SAMPLES: usize = 256;

pub fn linear_fixture() -> LinearFixture {
    let lambdas: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
    let t: Vec<f64> = (0..=FIXTURE_SAMPLES)
        .map(|i| 2.0 * PI * i as f64 / FIXTURE_SAMPLES as f64)
        .collect();
    LinearFixture {
        sup_norms: lambdas.iter().map(|&l| linear_sup_norm(l)).collect(),
        x_at_lambda_one: t.iter().map(|&s| linear_solution(1.0, s)).collect(),
        lambdas,
        t,
    }
}

pub const SHIFTED_ORACLE_N: usize = 8192;

/// Fixed-point oracle for the shifted example at `n` cells.
pub fn shifted_fixture(n: usize) -> ShiftedFixture {
    let spec = sec4_problem(SHIFTED_RHS, 6.0);
    let beta = spec.beta();
    let cfg = PeriodicSolveConfig {
        n,
        fp_tol: 1e-12,
        mean_tol: 1e-12,
        ..Default::default()
    };
    let sol = solve_periodic(&spec, &beta, &cfg)
        .expect("hypotheses hold")
        .expect("non-empty schedule");
    let t: Vec<f64> = (0..=FIXTURE_SAMPLES)
        .map(|i| 2.0 * PI * i as f64 / FIXTURE_SAMPLES as f64)
        .collect();
    ShiftedFixture {
        n,
        kernel_constant: sol.kernel_constant,
        u: t.iter().map(|&s| sol.u.x.eval(s).unwrap()).collect(),
        x: t.iter().map(|&s| sol.x.x.eval(s).unwrap()).collect(),
        sup_norm: sol.bound_certificates.sup_norm,
        t,
    }
}

/// Writes every fixture into `dir` and returns the paths written.
pub fn regen_fixtures(dir: &Path) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let files: [(&str, String); 3] = [
        ("sec4_constants.json", to_json(&sec4_fixture())?),
        ("linear_closed_form.json", to_json(&linear_fixture())?),
        ("shifted_sec4.json", to_json(&shifted_fixture(SHIFTED_ORACLE_N))?),
    ];
    let mut out = Vec::new();
    for (name, body) in files {
        let p = dir.join(name);
        fs::write(&p, body)?;
        out.push(p);
    }
    Ok(out)
}

fn to_json<T: Serialize>(v: &T) -> io::Result<String> {
    let mut s = serde_json::to_string_pretty(v).map_err(io::Error::other)?;
    s.push('\n');
    Ok(s)
}
