//! Method-of-steps integration of neutral equations with impulses.
//!
//! Both `x′(t) + B·x′(t−δ) = f(t, x_t)` with jumps and the transformed
//! `u′(t) + c(t)·u′(t−δ) = h(t, u_t)` are advanced cell by cell with Heun's
//! method on a grid that contains every impulse and every propagated
//! discontinuity. The delayed derivative is read from the part of the
//! derivative trajectory already computed.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::regulated::{interp_side, Grid, RegulatedError, RegulatedGridFn, Side};
use crate::rhs_dsl::EvalError;
use crate::scalar::{compensated_sum, Real};
use crate::schedule::PiecewiseConstantFn;
use crate::transform::{NeutralCoefficientFn, ProblemSpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("right-hand side failed at t = {t}: {source}")]
    Eval { t: f64, source: EvalError },
    #[error("impulse time {0} is not a grid node")]
    MissingImpulseNode(f64),
    #[error("history derivative on [-delta, 0] is required when delta > 0")]
    MissingDerivative,
    #[error("history {what} must cover [{a}, 0]")]
    HistoryDomain { what: &'static str, a: f64 },
    #[error("history derivative inconsistent with history at t = {t}: {given} vs {estimate}")]
    InconsistentHistory { t: f64, given: f64, estimate: f64 },
    #[error("trajectory csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Regulated(#[from] RegulatedError),
}

/// Where the state before `t = 0` comes from.
#[derive(Debug, Clone)]
pub enum InitialData<S> {
    Explicit {
        history: RegulatedGridFn<S>,
        history_derivative: Option<RegulatedGridFn<S>>,
    },
    /// `x(t) = x(t + T)` read from an earlier trajectory on `[−r, T]`.
    PeriodicWrap(Trajectory<S>),
}

impl<S: Real> InitialData<S> {
    /// Samples a history `φ` and its derivative on `[−r, 0]`.
    pub fn from_fns(
        r: S,
        cells: usize,
        phi: impl Fn(S) -> S,
        dphi: impl Fn(S) -> S,
    ) -> Result<Self, SolverError> {
        let g = Arc::new(Grid::uniform(-r, S::zero(), cells.max(1))?);
        Ok(InitialData::Explicit {
            history: RegulatedGridFn::from_fn(g.clone(), |t, _| phi(t)),
            history_derivative: Some(RegulatedGridFn::from_fn(g, |t, _| dphi(t))),
        })
    }

    pub fn constant(r: S, c: S) -> Self {
        let g = Arc::new(Grid::uniform(-r, S::zero(), 1).unwrap());
        InitialData::Explicit {
            history: RegulatedGridFn::constant(g.clone(), c),
            history_derivative: Some(RegulatedGridFn::constant(g, S::zero())),
        }
    }

    /// Compares the derivative against central differences of the history
    /// at smooth nodes of `[−δ, 0]`, allowing ten grid steps of slack.
    pub fn check_consistency(&self, delta: S) -> Result<(), SolverError> {
        let InitialData::Explicit {
            history,
            history_derivative: Some(dh),
        } = self
        else {
            return Ok(());
        };
        let g = dh.grid();
        let step = history.grid().max_step().max(g.max_step());
        for i in 1..g.len().saturating_sub(1) {
            let t = g.node(i);
            if t < -delta || g.is_breakpoint(i) {
                continue;
            }
            let e = step * S::lit(0.5);
            if t - e < history.grid().a() || t + e > S::zero() {
                continue;
            }
            let fd = (history.eval_unchecked(t + e, Side::Left)
                - history.eval_unchecked(t - e, Side::Left))
                / (e + e);
            let given = dh.values()[i];
            let tol = S::lit(10.0) * step * (S::one() + given.abs());
            if (fd - given).abs() > tol {
                return Err(SolverError::InconsistentHistory {
                    t: t.to_f64_lossy(),
                    given: given.to_f64_lossy(),
                    estimate: fd.to_f64_lossy(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JumpRecord {
    pub t: f64,
    pub pre: f64,
    pub post: f64,
}

/// Values and derivatives on `[−r, T]` plus the applied impulses.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<S> {
    pub x: RegulatedGridFn<S>,
    pub xprime: RegulatedGridFn<S>,
    pub jump_log: Vec<JumpRecord>,
}

impl<S: Real> Trajectory<S> {
    pub fn grid(&self) -> &Arc<Grid<S>> {
        self.x.grid()
    }

    /// Sup norm of `x` over nodes in `[from, grid end]`, right limits included.
    pub fn sup_norm_from(&self, from: S) -> S {
        let g = self.grid();
        (0..g.len())
            .filter(|&i| g.node(i) >= from)
            .fold(S::zero(), |m, i| m.max(self.x.values()[i].abs()).max(self.x.value_right(i).abs()))
    }

    /// Writes `t,x,x_right,xprime,xprime_right`; right-limit columns are
    /// blank where the function is continuous.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), SolverError> {
        let err = |e: csv::Error| SolverError::Csv(e.to_string());
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "x", "x_right", "xprime", "xprime_right"]).map_err(err)?;
        let blank = |v: Option<&S>| v.map(|v| v.to_string()).unwrap_or_default();
        for (i, &t) in self.grid().nodes().iter().enumerate() {
            w.write_record([
                t.to_string(),
                self.x.values()[i].to_string(),
                blank(self.x.right_limits().get(&i)),
                self.xprime.values()[i].to_string(),
                blank(self.xprime.right_limits().get(&i)),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| SolverError::Csv(e.to_string()))
    }

    /// Reads the format of [`Trajectory::write_csv`]. Nodes with a right
    /// limit, the end nodes and nodes equal to one of `breakpoints` are
    /// flagged as breakpoints.
    pub fn read_csv<R: Read>(input: R, breakpoints: &[S]) -> Result<Self, SolverError> {
        let mut rd = csv::Reader::from_reader(input);
        let headers = rd.headers().map_err(|e| SolverError::Csv(e.to_string()))?.clone();
        let expected = ["t", "x", "x_right", "xprime", "xprime_right"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(SolverError::Csv(format!(
                "expected columns {}, got {}",
                expected.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let num = |s: &str, row: usize| -> Result<Option<S>, SolverError> {
            if s.trim().is_empty() {
                return Ok(None);
            }
            s.trim()
                .parse::<f64>()
                .map(|v| Some(S::lit(v)))
                .map_err(|_| SolverError::Csv(format!("row {row}: cannot parse {s:?}")))
        };
        let mut rows = Vec::new();
        for (row, rec) in rd.records().enumerate() {
            let rec = rec.map_err(|e| SolverError::Csv(e.to_string()))?;
            if rec.len() != 5 {
                return Err(SolverError::Csv(format!("row {row}: expected 5 fields")));
            }
            let req = |i: usize| {
                num(&rec[i], row)?.ok_or_else(|| SolverError::Csv(format!("row {row}: missing field {i}")))
            };
            rows.push((req(0)?, req(1)?, num(&rec[2], row)?, req(3)?, num(&rec[4], row)?));
        }
        let n = rows.len();
        let flags: Vec<bool> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                i == 0 || i + 1 == n || r.2.is_some() || r.4.is_some() || breakpoints.contains(&r.0)
            })
            .collect();
        let grid = Arc::new(Grid::new(rows.iter().map(|r| r.0).collect(), flags)?);
        let x = RegulatedGridFn::from_samples(grid.clone(), rows.iter().map(|r| (r.1, r.2)))?;
        let xprime = RegulatedGridFn::from_samples(grid, rows.iter().map(|r| (r.3, r.4)))?;
        Ok(Self {
            x,
            xprime,
            jump_log: Vec::new(),
        })
    }
}

/// `(∫₀ᵀ x′(t)² dt)^{1/2}` by the per-cell trapezoid rule.
pub fn derivative_l2_norm<S: Real>(traj: &Trajectory<S>) -> S {
    let g = traj.grid();
    let nodes = g.nodes();
    let d = &traj.xprime;
    compensated_sum((0..nodes.len() - 1).filter(|&i| nodes[i] >= S::zero()).map(|i| {
        let a = d.value_right(i);
        let b = d.values()[i + 1];
        (nodes[i + 1] - nodes[i]) * (a * a + b * b) * S::lit(0.5)
    }))
    .sqrt()
}

/// Times where `x` or `x′` may be non-smooth on `[−r, T]`: the origin, the
/// impulses, `T − δ`, shifts of those by the right-hand side delays, history
/// breakpoints, and everything propagated by multiples of `δ`.
pub fn breakpoint_set<S: Real>(spec: &ProblemSpec<S>, extra: &[S]) -> Vec<S> {
    let (r, period, delta) = (spec.history(), spec.period(), spec.delta());
    let mut out = vec![S::zero(), period];
    out.extend(spec.schedule.times.iter().copied());
    out.push(spec.schedule.window_end());
    out.push(-delta);
    out.push(-r);
    let mut seeds: Vec<S> = out.clone();
    seeds.retain(|&p| p >= S::zero() && p < period);
    for &c in &spec.rhs.delays() {
        let c = S::lit(c);
        if c < S::zero() {
            for &p in seeds.clone().iter() {
                seeds.push(p - c);
            }
        }
    }
    seeds.extend(extra.iter().copied());
    let mut all = out;
    all.extend(seeds.iter().copied());
    if delta > S::zero() {
        const CAP: usize = 4096;
        for &p in &seeds {
            let mut j = 1usize;
            loop {
                let q = p + delta * S::from_usize(j).unwrap();
                if q > period || all.len() >= CAP {
                    break;
                }
                all.push(q);
                j += 1;
            }
        }
    }
    all.retain(|&p| p >= -r && p <= period);
    all
}

/// Integration grid on `[−r, T]` with about `n` cells per period.
pub fn integration_grid<S: Real>(spec: &ProblemSpec<S>, n: usize, extra: &[S]) -> Result<Arc<Grid<S>>, SolverError> {
    let (r, period, delta) = (spec.history(), spec.period(), spec.delta());
    let total = ((S::from_usize(n).unwrap() * (period + r) / period).ceil()).to_usize().unwrap_or(n);
    let cap = (delta > S::zero()).then_some(delta);
    Ok(Arc::new(Grid::segmented(-r, period, total, &breakpoint_set(spec, extra), cap)?))
}

type RhsFn<'a, S> = dyn Fn(S, Side, &dyn Fn(S) -> S) -> Result<S, EvalError> + 'a;

struct System<'a, S> {
    coefficient: &'a dyn Fn(S, Side) -> S,
    rhs: &'a RhsFn<'a, S>,
    jumps: Vec<(S, S)>,
    delta: S,
    period: S,
}

/// Breakpoints of the initial data that an integration grid must contain.
pub fn history_breakpoints<S: Real>(init: &InitialData<S>, period: S) -> Vec<S> {
    match init {
        InitialData::Explicit { history, .. } => history
            .grid()
            .breakpoint_indices()
            .map(|i| history.grid().node(i))
            .collect(),
        InitialData::PeriodicWrap(prev) => prev
            .grid()
            .breakpoint_indices()
            .map(|i| prev.grid().node(i) - period)
            .filter(|&t| t <= S::zero())
            .collect(),
    }
}

fn integrate<S: Real>(
    grid: Arc<Grid<S>>,
    init: &InitialData<S>,
    sys: &System<'_, S>,
    until: Option<S>,
) -> Result<Trajectory<S>, SolverError> {
    let nodes = grid.nodes();
    let n = nodes.len();
    let i0 = grid.find_node(S::zero()).expect("origin is a node");
    let delta = sys.delta;
    let eval_err = |t: S| move |source| SolverError::Eval { t: t.to_f64_lossy(), source };

    let mut vals = vec![S::nan(); n];
    let mut rights: Vec<Option<S>> = vec![None; n];
    let mut dvals = vec![S::nan(); n];
    let mut drights: Vec<Option<S>> = vec![None; n];

    match init {
        InitialData::Explicit {
            history,
            history_derivative,
        } => {
            let hg = history.grid();
            if hg.a() > nodes[0] || hg.b() != S::zero() {
                return Err(SolverError::HistoryDomain {
                    what: "values",
                    a: nodes[0].to_f64_lossy(),
                });
            }
            if delta > S::zero() {
                match history_derivative {
                    None => return Err(SolverError::MissingDerivative),
                    Some(dh) if dh.grid().a() > -delta || dh.grid().b() != S::zero() => {
                        return Err(SolverError::HistoryDomain {
                            what: "derivative",
                            a: (-delta).to_f64_lossy(),
                        })
                    }
                    _ => {}
                }
            }
            for i in 0..=i0 {
                let t = nodes[i];
                vals[i] = history.eval_unchecked(t, Side::Left);
                if grid.is_breakpoint(i) && i < i0 {
                    let rv = history.eval_unchecked(t, Side::Right);
                    if rv != vals[i] {
                        rights[i] = Some(rv);
                    }
                }
                let dh = history_derivative.as_ref().filter(|dh| dh.grid().contains(t));
                match dh {
                    Some(dh) => {
                        dvals[i] = dh.eval_unchecked(t, Side::Left);
                        if grid.is_breakpoint(i) && i < i0 {
                            let rv = dh.eval_unchecked(t, Side::Right);
                            if rv != dvals[i] {
                                drights[i] = Some(rv);
                            }
                        }
                    }
                    None => {
                        let lo = if i > 0 { nodes[i - 1] } else { t };
                        let hi = if i < i0 { nodes[i + 1] } else { t };
                        dvals[i] = if hi > lo {
                            (history.eval_unchecked(hi, Side::Left) - history.eval_unchecked(lo, Side::Left))
                                / (hi - lo)
                        } else {
                            S::zero()
                        };
                    }
                }
            }
        }
        InitialData::PeriodicWrap(prev) => {
            let pg = prev.grid();
            if pg.a() > nodes[0] + sys.period || pg.b() != sys.period {
                return Err(SolverError::HistoryDomain {
                    what: "wrapped trajectory",
                    a: nodes[0].to_f64_lossy(),
                });
            }
            for i in 0..=i0 {
                let s = nodes[i] + sys.period;
                vals[i] = prev.x.eval_unchecked(s, Side::Left);
                dvals[i] = prev.xprime.eval_unchecked(s, Side::Left);
                if grid.is_breakpoint(i) && i < i0 {
                    let rv = prev.x.eval_unchecked(s, Side::Right);
                    if rv != vals[i] {
                        rights[i] = Some(rv);
                    }
                    let rv = prev.xprime.eval_unchecked(s, Side::Right);
                    if rv != dvals[i] {
                        drights[i] = Some(rv);
                    }
                }
            }
        }
    }

    let mut jump_at: BTreeMap<usize, S> = BTreeMap::new();
    for &(t, factor) in &sys.jumps {
        let i = grid
            .find_node(t)
            .ok_or_else(|| SolverError::MissingImpulseNode(t.to_f64_lossy()))?;
        jump_at.insert(i, factor);
    }
    let mut jump_log = Vec::new();

    let last = match until {
        Some(u) => nodes.partition_point(|&t| t <= u).max(i0 + 1) - 1,
        None => n - 1,
    };

    let mut fsal: Option<S> = None;
    for k in i0..last {
        let (tn, tn1) = (nodes[k], nodes[k + 1]);
        let h = tn1 - tn;
        let mut y = vals[k];
        if let Some(&factor) = jump_at.get(&k) {
            let post = factor * y;
            jump_log.push(JumpRecord {
                t: tn.to_f64_lossy(),
                pre: y.to_f64_lossy(),
                post: post.to_f64_lossy(),
            });
            rights[k] = Some(post);
            y = post;
        }
        let breakpoint = grid.is_breakpoint(k);

        let stage = |t: S, side: Side, vals: &[S], rights: &[Option<S>], dvals: &[S], drights: &[Option<S>], fallback: S| {
            let read = |s: S| interp_side(&nodes[..=k + 1], &vals[..=k + 1], |i| rights[i], s, side);
            let phi = |tau: S| read(t + tau);
            let f = (sys.rhs)(t, side, &phi).map_err(eval_err(t))?;
            let c = (sys.coefficient)(t, side);
            if delta > S::zero() {
                let s = t - delta;
                let dd = if s <= tn {
                    interp_side(&nodes[..=k], &dvals[..=k], |i| drights[i], s, side)
                } else {
                    fallback
                };
                Ok::<S, SolverError>(f - c * dd)
            } else {
                Ok(f / (S::one() + c))
            }
        };

        let k1 = match fsal {
            Some(d) if !breakpoint => d,
            _ => {
                vals[k + 1] = y;
                stage(tn, Side::Right, &vals, &rights, &dvals, &drights, S::zero())?
            }
        };
        if (breakpoint || k == i0) && k1 != dvals[k] {
            drights[k] = Some(k1);
        }
        vals[k + 1] = y + h * k1;
        let k2 = stage(tn1, Side::Left, &vals, &rights, &dvals, &drights, k1)?;
        vals[k + 1] = y + h * (k1 + k2) * S::lit(0.5);
        let d = stage(tn1, Side::Left, &vals, &rights, &dvals, &drights, k1)?;
        dvals[k + 1] = d;
        fsal = Some(d);
    }

    let (grid, take) = if last + 1 < n {
        let sub = Grid::new(nodes[..=last].to_vec(), {
            let mut f = grid.breakpoint_flags()[..=last].to_vec();
            *f.last_mut().unwrap() = true;
            f
        })?;
        (Arc::new(sub), last + 1)
    } else {
        (grid.clone(), n)
    };
    let to_map = |r: &[Option<S>]| -> BTreeMap<usize, S> {
        r[..take.saturating_sub(1)]
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (i, v)))
            .collect()
    };
    let x = RegulatedGridFn::new(grid.clone(), vals[..take].to_vec(), to_map(&rights))?;
    let xprime = RegulatedGridFn::new(grid, dvals[..take].to_vec(), to_map(&drights))?;
    Ok(Trajectory { x, xprime, jump_log })
}

/// Integrates the impulsive problem on `[−r, T]` with about `n` cells per
/// period.
pub fn integrate_impulsive<S: Real>(
    spec: &ProblemSpec<S>,
    beta: &PiecewiseConstantFn<S>,
    init: &InitialData<S>,
    n: usize,
) -> Result<Trajectory<S>, SolverError> {
    integrate_impulsive_until(spec, beta, init, n, None)
}

/// Like [`integrate_impulsive`], stopping at the last node not after `until`.
pub fn integrate_impulsive_until<S: Real>(
    spec: &ProblemSpec<S>,
    beta: &PiecewiseConstantFn<S>,
    init: &InitialData<S>,
    n: usize,
    until: Option<S>,
) -> Result<Trajectory<S>, SolverError> {
    let grid = integration_grid(spec, n, &history_breakpoints(init, spec.period()))?;
    integrate_impulsive_on(spec, beta, init, grid, until)
}

/// Integrates the impulsive problem on a caller-supplied grid over `[−r, T]`
/// that contains every breakpoint and has no cell longer than `δ`.
pub fn integrate_impulsive_on<S: Real>(
    spec: &ProblemSpec<S>,
    beta: &PiecewiseConstantFn<S>,
    init: &InitialData<S>,
    grid: Arc<Grid<S>>,
    until: Option<S>,
) -> Result<Trajectory<S>, SolverError> {
    let neutral = spec.neutral;
    let coefficient = move |_: S, _: Side| neutral;
    let rhs = |t: S, side: Side, phi: &dyn Fn(S) -> S| spec.f_eval(beta, t, side, phi);
    let jumps = spec
        .schedule
        .times
        .iter()
        .zip(&spec.schedule.coeffs)
        .map(|(&t, &b)| (t, S::one() + b))
        .collect();
    let sys = System {
        coefficient: &coefficient,
        rhs: &rhs,
        jumps,
        delta: spec.delta(),
        period: spec.period(),
    };
    integrate(grid, init, &sys, until)
}

/// Integrates the jump-free transformed problem on `[−r, T]`.
pub fn integrate_transformed<S: Real>(
    spec: &ProblemSpec<S>,
    beta: &PiecewiseConstantFn<S>,
    init: &InitialData<S>,
    n: usize,
) -> Result<Trajectory<S>, SolverError> {
    integrate_transformed_until(spec, beta, init, n, None)
}

pub fn integrate_transformed_until<S: Real>(
    spec: &ProblemSpec<S>,
    beta: &PiecewiseConstantFn<S>,
    init: &InitialData<S>,
    n: usize,
    until: Option<S>,
) -> Result<Trajectory<S>, SolverError> {
    let mut extra = history_breakpoints(init, spec.period());
    extra.extend(beta.breakpoints().iter().copied());
    let grid = integration_grid(spec, n, &extra)?;
    let c = NeutralCoefficientFn::new(spec.neutral, beta, &spec.schedule);
    let coefficient = move |t: S, side: Side| c.eval_side(&t, side);
    let rhs = |t: S, side: Side, phi: &dyn Fn(S) -> S| spec.h_eval_side(beta, t, side, phi);
    let sys = System {
        coefficient: &coefficient,
        rhs: &rhs,
        jumps: Vec::new(),
        delta: spec.delta(),
        period: spec.period(),
    };
    integrate(grid, init, &sys, until)
}
