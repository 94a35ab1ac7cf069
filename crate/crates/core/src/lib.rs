//! Periodic solutions of impulsive neutral delay differential equations
//!
//! ```text
//! x′(t) + B·x′(t − δ) = f(t, x_t),   t ≠ t_k
//! x(t_k⁺) = (1 + b_k)·x(t_k)
//! ```
//!
//! The impulsive problem is mapped onto a jump-free neutral equation by the
//! multiplicative change of variables `x = β·u`, solved there as a periodic
//! fixed point, and mapped back.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod hypotheses;
pub mod periodic;
pub mod regulated;
pub mod rhs_dsl;
pub mod scalar;
pub mod schedule;
pub mod solver;
pub mod testkit;
pub mod transform;

pub use hypotheses::{
    apriori_bounds, brouwer_degree_1d, check_h1, check_h2, check_h3, check_h4, estimate_s,
    hypothesis_report, kernel_average, HypothesisOptions, HypothesisReport, Status,
};
pub use periodic::{
    apply_lp_inverse_complement, lambda_sweep_report, solve_at_lambda, solve_periodic, PeriodicError,
    PeriodicSolution, PeriodicSolveConfig, Projector, SolveStatus, SweepRow,
};
pub use regulated::{Grid, RegulatedError, RegulatedGridFn, Side};
pub use rhs_dsl::{parse, RhsExpr};
pub use scalar::{Real, Scalar};
pub use schedule::{beta_extrema, ImpulseSchedule, PiecewiseConstantFn};
pub use solver::{
    derivative_l2_norm, integrate_impulsive, integrate_transformed, InitialData, JumpRecord, Trajectory,
};
pub use transform::{
    apply_a, h_eval, solve_a_inverse, to_impulsive, to_nonimpulsive, verify_equivalence, Candidate,
    EquivalenceReport, NeutralCoefficientFn, ProblemSpec,
};

pub type Grid64 = Grid<f64>;
pub type GridFn64 = RegulatedGridFn<f64>;
pub type Schedule64 = ImpulseSchedule<f64>;
pub type Beta64 = PiecewiseConstantFn<f64>;
pub type Problem64 = ProblemSpec<f64>;
pub type Trajectory64 = Trajectory<f64>;
