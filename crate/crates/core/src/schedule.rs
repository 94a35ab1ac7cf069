//! Impulse schedules and the piecewise-constant jump multiplier.

use std::fmt;

use thiserror::Error;

use crate::regulated::Side;
use crate::scalar::Scalar;

/// One period of impulses for `x′(t) + Bx′(t−δ) = f(t, x_t)` with jumps
/// `x(t_k⁺) = (1 + b_k)·x(t_k)`. Later moments repeat with period `T` and
/// the same coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseSchedule<S> {
    pub period: S,
    pub delta: S,
    pub history: S,
    pub times: Vec<S>,
    pub coeffs: Vec<S>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScheduleViolation {
    #[error("neutral delay must satisfy 0 <= delta (got {0})")]
    NegativeDelta(String),
    #[error("history length must exceed delta (delta = {delta}, r = {r})")]
    HistoryNotAboveDelta { delta: String, r: String },
    #[error("history length must not exceed the period (r = {r}, T = {period})")]
    HistoryAbovePeriod { r: String, period: String },
    #[error("{times} impulse times but {coeffs} coefficients")]
    LengthMismatch { times: usize, coeffs: usize },
    #[error("impulse time {index} = {value} must be positive")]
    TimeNotPositive { index: usize, value: String },
    #[error("impulse times must increase (index {index})")]
    TimesNotIncreasing { index: usize },
    #[error("impulse times must precede T-delta (index {index}: {value} >= {limit})")]
    TimeAfterLimit { index: usize, value: String, limit: String },
    #[error("coefficient must exceed -1 (index {index}: {value})")]
    CoefficientTooSmall { index: usize, value: String },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub struct ScheduleErrors(pub Vec<ScheduleViolation>);

impl fmt::Display for ScheduleErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msgs: Vec<String> = self.0.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", msgs.join("; "))
    }
}

fn show<S: fmt::Debug>(s: &S) -> String {
    format!("{s:?}")
}

impl<S: Scalar> ImpulseSchedule<S> {
    pub fn new(period: S, delta: S, history: S, times: Vec<S>, coeffs: Vec<S>) -> Self {
        Self {
            period,
            delta,
            history,
            times,
            coeffs,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `T − δ`, the end of the last impulse window.
    pub fn window_end(&self) -> S {
        self.period.clone() - self.delta.clone()
    }

    /// Checks every constraint and reports all violations at once.
    pub fn validate(self) -> Result<Self, ScheduleErrors> {
        let mut errs = Vec::new();
        let zero = S::zero();
        if self.delta < zero {
            errs.push(ScheduleViolation::NegativeDelta(show(&self.delta)));
        }
        if !(self.delta < self.history) {
            errs.push(ScheduleViolation::HistoryNotAboveDelta {
                delta: show(&self.delta),
                r: show(&self.history),
            });
        }
        if self.history > self.period {
            errs.push(ScheduleViolation::HistoryAbovePeriod {
                r: show(&self.history),
                period: show(&self.period),
            });
        }
        if self.times.len() != self.coeffs.len() {
            errs.push(ScheduleViolation::LengthMismatch {
                times: self.times.len(),
                coeffs: self.coeffs.len(),
            });
        }
        let limit = self.window_end();
        for (i, t) in self.times.iter().enumerate() {
            if i == 0 && !(*t > zero) {
                errs.push(ScheduleViolation::TimeNotPositive {
                    index: i,
                    value: show(t),
                });
            }
            if i > 0 && !(self.times[i - 1] < *t) {
                errs.push(ScheduleViolation::TimesNotIncreasing { index: i });
            }
            if !(*t < limit) {
                errs.push(ScheduleViolation::TimeAfterLimit {
                    index: i,
                    value: show(t),
                    limit: show(&limit),
                });
            }
        }
        let minus_one = -S::one();
        for (i, b) in self.coeffs.iter().enumerate() {
            if !(*b > minus_one) {
                errs.push(ScheduleViolation::CoefficientTooSmall {
                    index: i,
                    value: show(b),
                });
            }
        }
        if errs.is_empty() {
            Ok(self)
        } else {
            Err(ScheduleErrors(errs))
        }
    }

    /// Builds the multiplier that is 1 on `[−r, t_1]` and on the final
    /// window after `T − δ`, and the running product `∏(1 + b_j)` over past
    /// impulses in between. Values are left-continuous at every breakpoint.
    pub fn build_beta(&self) -> PiecewiseConstantFn<S> {
        let mut breakpoints = vec![-self.history.clone()];
        let mut values = Vec::new();
        let mut running = S::one();
        for (t, b) in self.times.iter().zip(&self.coeffs) {
            breakpoints.push(t.clone());
            values.push(running.clone());
            // ascending index order fixes the rounding sequence
            running = running * (S::one() + b.clone());
        }
        let end = self.window_end();
        if end < self.period {
            breakpoints.push(end);
            values.push(running);
            breakpoints.push(self.period.clone());
            values.push(S::one());
        } else {
            // zero delay: the trailing unit window degenerates to the point T
            breakpoints.push(self.period.clone());
            values.push(running);
        }
        PiecewiseConstantFn {
            breakpoints,
            values,
        }
    }
}

/// Piecewise-constant function on `[p_0, p_n]`: `values[i]` on `(p_i, p_{i+1}]`,
/// with the first piece closed at `p_0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseConstantFn<S> {
    breakpoints: Vec<S>,
    values: Vec<S>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PiecewiseError {
    #[error("need {0} values for {1} breakpoints")]
    Count(usize, usize),
    #[error("breakpoints must increase")]
    NotIncreasing,
}

impl<S: Scalar> PiecewiseConstantFn<S> {
    pub fn new(breakpoints: Vec<S>, values: Vec<S>) -> Result<Self, PiecewiseError> {
        if breakpoints.len() < 2 || values.len() + 1 != breakpoints.len() {
            return Err(PiecewiseError::Count(
                breakpoints.len().saturating_sub(1),
                breakpoints.len(),
            ));
        }
        if breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(PiecewiseError::NotIncreasing);
        }
        Ok(Self {
            breakpoints,
            values,
        })
    }

    pub fn breakpoints(&self) -> &[S] {
        &self.breakpoints
    }

    pub fn piece_values(&self) -> &[S] {
        &self.values
    }

    pub fn start(&self) -> S {
        self.breakpoints[0].clone()
    }

    pub fn end(&self) -> S {
        self.breakpoints.last().unwrap().clone()
    }

    /// `(lo, hi, value)` per piece.
    pub fn pieces(&self) -> impl Iterator<Item = (S, S, S)> + '_ {
        self.values.iter().enumerate().map(move |(i, v)| {
            (
                self.breakpoints[i].clone(),
                self.breakpoints[i + 1].clone(),
                v.clone(),
            )
        })
    }

    /// Left-continuous evaluation. Times outside the domain clamp to the
    /// nearest end piece.
    pub fn eval(&self, t: &S) -> S {
        self.eval_side(t, Side::Left)
    }

    pub fn eval_side(&self, t: &S, side: Side) -> S {
        let n = self.values.len();
        // first breakpoint index with p >= t
        let k = self.breakpoints.partition_point(|p| p < t);
        let on_break = k < self.breakpoints.len() && self.breakpoints[k] == *t;
        let piece = if on_break {
            match side {
                Side::Left => k.saturating_sub(1),
                Side::Right => k,
            }
        } else {
            k.saturating_sub(1)
        };
        self.values[piece.min(n - 1)].clone()
    }

    /// Exact `(min, max)` over the piece values.
    pub fn extrema(&self) -> (S, S) {
        let mut lo = self.values[0].clone();
        let mut hi = self.values[0].clone();
        for v in &self.values[1..] {
            if *v < lo {
                lo = v.clone();
            }
            if *v > hi {
                hi = v.clone();
            }
        }
        (lo, hi)
    }
}

/// `(k, K)`: the minimum and maximum of the multiplier.
pub fn beta_extrema<S: Scalar>(beta: &PiecewiseConstantFn<S>) -> (S, S) {
    beta.extrema()
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;
    use std::f64::consts::PI;

    fn example() -> ImpulseSchedule<f64> {
        ImpulseSchedule::new(2.0 * PI, 1.0, 2.0, vec![1.0, 1.5], vec![2.0, 3.0])
    }

    #[test]
    fn example_schedule_is_valid() {
        assert!(example().validate().is_ok());
    }

    #[test]
    fn coefficient_at_minus_one_rejected() {
        let mut s = example();
        s.coeffs[0] = -1.0;
        let errs = s.validate().unwrap_err();
        assert!(errs.to_string().contains("coefficient must exceed -1"));
    }

    #[test]
    fn time_at_window_end_rejected() {
        let mut s = example();
        s.times[1] = 2.0 * PI - 1.0;
        let errs = s.validate().unwrap_err();
        assert!(errs.to_string().contains("impulse times must precede T-delta"));
    }

    #[test]
    fn all_violations_reported() {
        let s = ImpulseSchedule::new(1.0, 2.0, 3.0, vec![0.0, -1.0], vec![-2.0]);
        let errs = s.validate().unwrap_err();
        assert!(errs.0.len() >= 5, "{errs}");
    }

    #[test]
    fn example_beta_pieces() {
        let beta = example().build_beta();
        assert_eq!(beta.piece_values(), &[1.0, 3.0, 12.0, 1.0]);
        assert_eq!(beta.breakpoints(), &[-2.0, 1.0, 1.5, 2.0 * PI - 1.0, 2.0 * PI]);
        assert_eq!(beta_extrema(&beta), (1.0, 12.0));
        assert_eq!(beta.eval(&1.0), 1.0);
        assert_eq!(beta.eval_side(&1.0, Side::Right), 3.0);
        assert_eq!(beta.eval(&1.2), 3.0);
        assert_eq!(beta.eval(&2.0), 12.0);
        assert_eq!(beta.eval(&6.0), 1.0);
    }

    #[test]
    fn empty_and_neutral_schedules() {
        let s = ImpulseSchedule::new(3.0, 0.5, 1.0, vec![], vec![]);
        let beta = s.validate().unwrap().build_beta();
        assert!(beta.piece_values().iter().all(|&v| v == 1.0));
        assert_eq!(beta.breakpoints().len(), 3);

        let s = ImpulseSchedule::new(3.0, 0.5, 1.0, vec![1.0], vec![0.0]);
        assert_eq!(beta_extrema(&s.build_beta()), (1.0, 1.0));
    }

    #[test]
    fn exact_rational_multiplier() {
        let q = |a: i64, b: i64| Ratio::new(a, b);
        let s = ImpulseSchedule::new(q(6, 1), q(1, 1), q(2, 1), vec![q(1, 1), q(3, 2)], vec![q(2, 1), q(3, 1)]);
        let beta = s.validate().unwrap().build_beta();
        assert_eq!(beta.piece_values(), &[q(1, 1), q(3, 1), q(12, 1), q(1, 1)]);
        assert_eq!(beta_extrema(&beta), (q(1, 1), q(12, 1)));
    }

    #[test]
    fn jump_factor_structure() {
        let s = ImpulseSchedule::new(10.0, 1.0, 2.0, vec![1.0, 2.5, 4.0], vec![0.5, -0.25, 2.0]);
        let beta = s.build_beta();
        for (t, b) in s.times.iter().zip(&s.coeffs) {
            let left = beta.eval_side(t, Side::Left);
            let right = beta.eval_side(t, Side::Right);
            assert_eq!(right, left * (1.0 + b));
        }
        assert_eq!(beta.eval(&-2.0), 1.0);
        assert_eq!(beta.eval(&10.0), 1.0);
    }

    #[test]
    fn shift_preserves_piece_values() {
        let a = ImpulseSchedule::new(10.0, 1.0, 2.0, vec![1.0, 2.5], vec![0.5, 2.0]).build_beta();
        let b = ImpulseSchedule::new(11.0, 1.0, 2.0, vec![2.0, 3.5], vec![0.5, 2.0]).build_beta();
        assert_eq!(a.piece_values(), b.piece_values());
    }
}
