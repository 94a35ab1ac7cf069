//! Sampling checks of the four hypotheses, the a priori bounds and the
//! one-dimensional degree on the constants.
//!
//! (H1) and (H2) are universally quantified over histories, so only
//! necessary conditions can be checked; every report carries the sampling
//! resolution it used.

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::regulated::{Grid, RegulatedGridFn, Side};
use crate::rhs_dsl::{EvalEnv, EvalError, NoHistory};
use crate::scalar::{argmax_by, Real, Scalar};
use crate::schedule::{beta_extrema, PiecewiseConstantFn};
use crate::transform::ProblemSpec;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Status {
    Pass,
    Marginal,
    Fail,
}

/// `k/K − B`, positive iff `B < k/K`.
#[derive(Debug, Clone, PartialEq)]
pub struct H3Check<S> {
    pub pass: bool,
    pub margin: S,
}

pub fn check_h3<S: Scalar>(neutral: S, k: S, big_k: S) -> H3Check<S> {
    let margin = k / big_k - neutral;
    H3Check {
        pass: margin > S::zero(),
        margin,
    }
}

/// `bound = (k − B·K)/(T·k)` and `margin = bound − b`.
#[derive(Debug, Clone, PartialEq)]
pub struct H4Check<S> {
    pub pass: bool,
    pub bound: S,
    pub margin: S,
}

pub fn check_h4<S: Scalar>(b: S, neutral: S, k: S, big_k: S, period: S) -> H4Check<S> {
    let bound = (k.clone() - neutral * big_k) / (period * k);
    let margin = bound.clone() - b;
    H4Check {
        pass: margin > S::zero(),
        bound,
        margin,
    }
}

/// Largest `|g(t)|` over `n + 1` uniform samples when `f = g(t)·x(0) + h(t)`
/// syntactically; `None` otherwise.
pub fn sampled_lipschitz<S: Real>(
    spec: &ProblemSpec<S>,
    beta: &PiecewiseConstantFn<S>,
    n: usize,
) -> Result<Option<S>, EvalError> {
    let g = match spec.rhs.root().affine_in_present() {
        None => return Ok(None),
        Some((None, _)) => return Ok(Some(S::zero())),
        Some((Some(g), _)) => g,
    };
    let b = |s: S| beta.eval(&s);
    let mut best = S::zero();
    for t in uniform_times(spec.period(), n) {
        let v = g.eval(&EvalEnv {
            t,
            history: &NoHistory,
            beta: &b,
        })?;
        best = best.max(v.abs());
    }
    Ok(Some(best))
}

fn uniform_times<S: Real>(period: S, n: usize) -> impl Iterator<Item = S> {
    let n = n.max(1);
    (0..=n).map(move |i| period * (S::from_usize(i).unwrap() / S::from_usize(n).unwrap()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct H2Report {
    pub status: Status,
    pub min_value: f64,
    pub witness_t: f64,
    pub witness_c: f64,
    pub grid_points: usize,
    pub c_samples: Vec<f64>,
    pub error: Option<String>,
}

/// Magnitudes `d·{1, 1.5, 2, 4, 10}`; both signs are always sampled.
pub fn default_c_samples<S: Real>(d: S) -> Vec<S> {
    [1.0, 1.5, 2.0, 4.0, 10.0].iter().map(|&m| d * S::lit(m)).collect()
}

pub const H2_ZERO_TOL: f64 = 1e-12;

/// Minimum of `c·f(t, β_t·c)` over uniform `t` and constant histories with
/// `|c|` in `c_samples`.
pub fn check_h2<S: Real>(
    spec: &ProblemSpec<S>,
    beta: &PiecewiseConstantFn<S>,
    grid_points: usize,
    c_samples: &[S],
) -> H2Report {
    let mut min = f64::INFINITY;
    let (mut wt, mut wc) = (f64::NAN, f64::NAN);
    let mut error = None;
    'outer: for &m in c_samples {
        for c in [m, -m] {
            for t in uniform_times(spec.period(), grid_points) {
                let phi = |tau: S| beta.eval(&(t + tau)) * c;
                match spec.f_eval(beta, t, Side::Left, &phi) {
                    Ok(f) => {
                        let v = (c * f).to_f64_lossy();
                        if v < min || v.is_nan() {
                            min = if v.is_nan() { f64::NEG_INFINITY } else { v };
                            wt = t.to_f64_lossy();
                            wc = c.to_f64_lossy();
                        }
                    }
                    Err(e) => {
                        error = Some(e.to_string());
                        min = f64::NEG_INFINITY;
                        wt = t.to_f64_lossy();
                        wc = c.to_f64_lossy();
                        break 'outer;
                    }
                }
            }
        }
    }
    let status = if min > H2_ZERO_TOL {
        Status::Pass
    } else if min >= -H2_ZERO_TOL {
        Status::Marginal
    } else {
        Status::Fail
    };
    H2Report {
        status,
        min_value: min,
        witness_t: wt,
        witness_c: wc,
        grid_points,
        c_samples: c_samples.iter().map(|c| c.to_f64_lossy()).collect(),
        error,
    }
}

/// Affine probe history `τ ↦ a + slope·τ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearProbe<S> {
    pub a: S,
    pub slope: S,
}

pub fn default_probes<S: Real>(d: S, r: S) -> Vec<LinearProbe<S>> {
    vec![
        LinearProbe { a: S::one(), slope: S::zero() },
        LinearProbe { a: -S::one(), slope: S::lit(0.5) },
        LinearProbe { a: d, slope: d / r },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct H1Report {
    pub status: Status,
    /// Largest adjacent-sample jump relative to `1 + local scale`.
    pub worst_jump: f64,
    pub worst_t: f64,
    pub flagged: usize,
    pub grid_points: usize,
    pub tol: f64,
    pub error: Option<String>,
}

/// Scans `t ↦ f(t, β_t·φ)` for each probe and flags adjacent samples whose
/// difference exceeds `tol·(1 + max(|F_i|, |F_{i+1}|))`.
pub fn check_h1<S: Real>(
    spec: &ProblemSpec<S>,
    beta: &PiecewiseConstantFn<S>,
    probes: &[LinearProbe<S>],
    grid_points: usize,
    tol: S,
) -> H1Report {
    let mut worst = S::zero();
    let mut worst_t = f64::NAN;
    let mut flagged = 0usize;
    let mut error = None;
    'outer: for p in probes {
        let mut prev: Option<(S, S)> = None;
        for t in uniform_times(spec.period(), grid_points) {
            let phi = |tau: S| beta.eval(&(t + tau)) * (p.a + p.slope * tau);
            let v = match spec.f_eval(beta, t, Side::Left, &phi) {
                Ok(v) => v,
                Err(e) => {
                    error = Some(e.to_string());
                    flagged += 1;
                    worst_t = t.to_f64_lossy();
                    break 'outer;
                }
            };
            if let Some((_, pv)) = prev {
                let rel = (v - pv).abs() / (S::one() + v.abs().max(pv.abs()));
                if rel > worst || rel.is_nan() {
                    worst = if rel.is_nan() { S::infinity() } else { rel };
                    worst_t = t.to_f64_lossy();
                }
                if !(rel <= tol) {
                    flagged += 1;
                }
            }
            prev = Some((t, v));
        }
    }
    H1Report {
        status: if flagged == 0 { Status::Pass } else { Status::Fail },
        worst_jump: worst.to_f64_lossy(),
        worst_t,
        flagged,
        grid_points,
        tol: tol.to_f64_lossy(),
        error,
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoundsError {
    #[error("hypotheses insufficient for a priori bound (k - bTk - BK = {0} <= 0)")]
    Insufficient(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AprioriBounds<S> {
    pub l2_bound: S,
    pub d_bound: S,
    pub denominator: S,
}

/// `‖x′‖₂ ≤ (bdk + S)√T/(k − bTk − BK)` and `D = d + (bdk + S)T/(k − bTk − BK)`.
#[allow(clippy::too_many_arguments)]
pub fn apriori_bounds<S: Real>(
    d: S,
    b: S,
    k: S,
    big_k: S,
    neutral: S,
    period: S,
    s: S,
) -> Result<AprioriBounds<S>, BoundsError> {
    let denominator = k - b * period * k - neutral * big_k;
    if !(denominator > S::zero()) {
        return Err(BoundsError::Insufficient(denominator.to_f64_lossy()));
    }
    let numerator = b * d * k + s;
    Ok(AprioriBounds {
        l2_bound: numerator * period.sqrt() / denominator,
        d_bound: d + numerator * period / denominator,
        denominator,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SEstimate {
    pub value: f64,
    pub sampled: f64,
    pub overridden: bool,
}

/// `max_t |f(t, 0)|` over uniform samples; the user override wins when set.
pub fn estimate_s<S: Real>(
    spec: &ProblemSpec<S>,
    beta: &PiecewiseConstantFn<S>,
    grid_points: usize,
) -> Result<(S, SEstimate), EvalError> {
    let zero = |_: S| S::zero();
    let mut vals = Vec::with_capacity(grid_points + 1);
    for t in uniform_times(spec.period(), grid_points) {
        vals.push(spec.f_eval(beta, t, Side::Left, &zero)?.abs());
    }
    let sampled = argmax_by(&vals).map(|(_, v)| v).unwrap_or(S::zero());
    let value = spec.s_override.unwrap_or(sampled);
    Ok((
        value,
        SEstimate {
            value: value.to_f64_lossy(),
            sampled: sampled.to_f64_lossy(),
            overridden: spec.s_override.is_some(),
        },
    ))
}

fn kernel_grid<S: Real>(spec: &ProblemSpec<S>, beta: &PiecewiseConstantFn<S>, n: usize) -> Arc<Grid<S>> {
    Arc::new(Grid::segmented(S::zero(), spec.period(), n, beta.breakpoints(), None).expect("period is positive"))
}

/// `g(c) = (1/T)∫₀ᵀ h(t, c) dt` for the constant history `c`.
pub fn kernel_average<S: Real>(
    spec: &ProblemSpec<S>,
    beta: &PiecewiseConstantFn<S>,
    c: S,
    grid_points: usize,
) -> Result<S, EvalError> {
    let grid = kernel_grid(spec, beta, grid_points);
    let mut err = None;
    let f = RegulatedGridFn::from_fn(grid, |t, side| {
        spec.h_eval_side(beta, t, side, &|_| c).unwrap_or_else(|e| {
            err.get_or_insert(e);
            S::nan()
        })
    });
    if let Some(e) = err {
        return Err(e);
    }
    Ok(f.trapezoid_integral() / spec.period())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DegreeReport {
    pub degree: i32,
    pub m: f64,
    pub g_minus: f64,
    pub g_plus: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DegreeError {
    #[error("M = {m} must exceed the a priori bound D = {d}")]
    MNotAboveD { m: f64, d: f64 },
    #[error("degree undefined at this M: g({at}) = {value}")]
    Undefined { at: f64, value: f64 },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

pub const DEGREE_ZERO_TOL: f64 = 1e-14;

/// Degree of `c ↦ g(c)` on `(−M, M)` from the signs of `g(±M)`.
pub fn brouwer_degree_1d<S: Real>(
    spec: &ProblemSpec<S>,
    beta: &PiecewiseConstantFn<S>,
    m: S,
    d_bound: Option<S>,
    grid_points: usize,
) -> Result<DegreeReport, DegreeError> {
    if let Some(d) = d_bound {
        if !(m > d) {
            return Err(DegreeError::MNotAboveD {
                m: m.to_f64_lossy(),
                d: d.to_f64_lossy(),
            });
        }
    }
    let lo = kernel_average(spec, beta, -m, grid_points)?.to_f64_lossy();
    let hi = kernel_average(spec, beta, m, grid_points)?.to_f64_lossy();
    for (at, value) in [(-m, lo), (m, hi)] {
        if !(value.abs() > DEGREE_ZERO_TOL) {
            return Err(DegreeError::Undefined {
                at: at.to_f64_lossy(),
                value,
            });
        }
    }
    let degree = match (lo < 0.0, hi > 0.0) {
        (true, true) => 1,
        (false, false) => -1,
        _ => 0,
    };
    Ok(DegreeReport {
        degree,
        m: m.to_f64_lossy(),
        g_minus: lo,
        g_plus: hi,
    })
}

/// Sampling resolutions used by [`hypothesis_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisOptions {
    pub h1_grid: usize,
    pub h1_tol: f64,
    /// A multiple of four, so quarter periods are sampled.
    pub h2_grid: usize,
    pub sample_grid: usize,
    pub kernel_grid: usize,
}

impl Default for HypothesisOptions {
    fn default() -> Self {
        Self {
            h1_grid: 10_000,
            h1_tol: 1e-3,
            h2_grid: 4096,
            sample_grid: 10_000,
            kernel_grid: 4096,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginSummary {
    pub pass: bool,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct H4Summary {
    pub pass: bool,
    pub bound: f64,
    pub margin: f64,
    pub lipschitz_sampled: Option<f64>,
    pub lipschitz_consistent: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[allow(non_snake_case)]
pub struct HypothesisReport {
    pub k: f64,
    pub K: f64,
    pub h3: MarginSummary,
    pub h3_margin: f64,
    pub h4: H4Summary,
    pub h4_bound: f64,
    pub h4_margin: f64,
    pub S: SEstimate,
    pub xprime_l2_bound: Option<f64>,
    pub D: Option<f64>,
    pub bounds_error: Option<String>,
    pub h1: H1Report,
    pub h2: H2Report,
    pub degree: Option<DegreeReport>,
    pub degree_error: Option<String>,
}

impl HypothesisReport {
    /// (H3) and (H4), the hypotheses backing the contraction.
    pub fn gate_passes(&self) -> bool {
        self.h3.pass && self.h4.pass
    }

    /// The `check` verdict: (H3), (H4), and (H2) not failed.
    pub fn check_passes(&self) -> bool {
        self.gate_passes() && self.h2.status != Status::Fail
    }
}

/// Runs every check and bound in one go.
pub fn hypothesis_report<S: Real>(
    spec: &ProblemSpec<S>,
    beta: &PiecewiseConstantFn<S>,
    opts: &HypothesisOptions,
) -> HypothesisReport {
    let (k, big_k) = beta_extrema(beta);
    let h3 = check_h3(spec.neutral, k, big_k);
    let h4 = check_h4(spec.lipschitz_b, spec.neutral, k, big_k, spec.period());
    let lip = sampled_lipschitz(spec, beta, opts.sample_grid).ok().flatten();
    let consistent = lip.map(|l| spec.lipschitz_b >= l * (S::one() - S::lit(1e-9)));
    let mut bounds_error = None;
    let (s_value, s_report) = match estimate_s(spec, beta, opts.sample_grid) {
        Ok(v) => v,
        Err(e) => {
            bounds_error = Some(e.to_string());
            (
                S::nan(),
                SEstimate {
                    value: f64::NAN,
                    sampled: f64::NAN,
                    overridden: false,
                },
            )
        }
    };
    let bounds = if h3.pass && h4.pass && bounds_error.is_none() {
        match apriori_bounds(spec.d, spec.lipschitz_b, k, big_k, spec.neutral, spec.period(), s_value) {
            Ok(b) => Some(b),
            Err(e) => {
                bounds_error = Some(e.to_string());
                None
            }
        }
    } else {
        if bounds_error.is_none() {
            bounds_error = Some("hypotheses insufficient for a priori bound".into());
        }
        None
    };
    let h1 = check_h1(
        spec,
        beta,
        &default_probes(spec.d, spec.history()),
        opts.h1_grid,
        S::lit(opts.h1_tol),
    );
    let h2 = check_h2(spec, beta, opts.h2_grid, &default_c_samples(spec.d));
    let (degree, degree_error) = match bounds {
        Some(b) => {
            let m = b.d_bound + S::one();
            match brouwer_degree_1d(spec, beta, m, Some(b.d_bound), opts.kernel_grid) {
                Ok(d) => (Some(d), None),
                Err(e) => (None, Some(e.to_string())),
            }
        }
        None => (None, Some("no a priori bound available".into())),
    };
    let f = |v: S| v.to_f64_lossy();
    HypothesisReport {
        k: f(k),
        K: f(big_k),
        h3: MarginSummary {
            pass: h3.pass,
            margin: f(h3.margin),
        },
        h3_margin: f(h3.margin),
        h4: H4Summary {
            pass: h4.pass,
            bound: f(h4.bound),
            margin: f(h4.margin),
            lipschitz_sampled: lip.map(f),
            lipschitz_consistent: consistent,
        },
        h4_bound: f(h4.bound),
        h4_margin: f(h4.margin),
        S: s_report,
        xprime_l2_bound: bounds.map(|b| f(b.l2_bound)),
        D: bounds.map(|b| f(b.d_bound)),
        bounds_error,
        h1,
        h2,
        degree,
        degree_error,
    }
}
