//! Regulated functions sampled on breakpoint-aligned grids.
//!
//! A [`RegulatedGridFn`] stores the value at every node, which is the
//! left-continuous value at a jump, plus a sparse table of right limits at
//! nodes flagged as breakpoints. Between nodes the function is linear; the
//! interpolation on a cell starts from the right limit of its left node.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use thiserror::Error;

use crate::scalar::{compensated_sum, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegulatedError {
    #[error("grid needs at least two nodes")]
    TooFewNodes,
    #[error("grid nodes must be strictly increasing (violated at index {0})")]
    NotIncreasing(usize),
    #[error("breakpoint flag count {flags} does not match node count {nodes}")]
    FlagMismatch { nodes: usize, flags: usize },
    #[error("time {t} outside domain [{a}, {b}]")]
    Domain { t: f64, a: f64, b: f64 },
    #[error("no right limit at the right endpoint {0}")]
    RightEndpoint(f64),
    #[error("value count {values} does not match node count {nodes}")]
    LengthMismatch { nodes: usize, values: usize },
    #[error("right limit stored at node {0}, which is not a breakpoint")]
    RightLimitOffBreakpoint(usize),
    #[error("functions live on different grids")]
    GridMismatch,
    #[error("csv error: {0}")]
    Csv(String),
}

/// Which one-sided limit to take when a query lands on a breakpoint node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// Position of a time inside a grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Node(usize),
    /// Strictly inside the cell `(nodes[i], nodes[i + 1])`.
    Cell(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid<S> {
    nodes: Vec<S>,
    breakpoints: Vec<bool>,
}

impl<S: Real> Grid<S> {
    pub fn new(nodes: Vec<S>, breakpoints: Vec<bool>) -> Result<Self, RegulatedError> {
        if nodes.len() < 2 {
            return Err(RegulatedError::TooFewNodes);
        }
        if breakpoints.len() != nodes.len() {
            return Err(RegulatedError::FlagMismatch {
                nodes: nodes.len(),
                flags: breakpoints.len(),
            });
        }
        if let Some(i) = nodes.windows(2).position(|w| !(w[0] < w[1])) {
            return Err(RegulatedError::NotIncreasing(i + 1));
        }
        Ok(Self { nodes, breakpoints })
    }

    pub fn uniform(a: S, b: S, cells: usize) -> Result<Self, RegulatedError> {
        Self::with_breakpoints(a, b, cells, &[], None)
    }

    /// Uniform base grid with `cells` cells merged with mandatory breakpoints.
    ///
    /// Breakpoints are inserted bitwise; base nodes closer than a quarter
    /// cell to a breakpoint are dropped. Earlier entries of `breakpoints`
    /// win when two of them coincide within `1e-10·(b − a)`. When
    /// `max_step` is given the base resolution is raised so no cell exceeds it.
    pub fn with_breakpoints(
        a: S,
        b: S,
        cells: usize,
        breakpoints: &[S],
        max_step: Option<S>,
    ) -> Result<Self, RegulatedError> {
        if !(a < b) {
            return Err(RegulatedError::NotIncreasing(1));
        }
        let len = b - a;
        let mut cells = cells.max(1);
        if let Some(cap) = max_step {
            if cap > S::zero() {
                let needed = (len / (cap * S::lit(0.8))).ceil().to_usize().unwrap_or(cells);
                cells = cells.max(needed);
            }
        }
        let h = len / S::from_usize(cells).unwrap();
        let merge_tol = len * S::lit(1e-10);

        let mut marks: Vec<S> = Vec::with_capacity(breakpoints.len() + 2);
        for &p in [a, b].iter().chain(breakpoints.iter()) {
            if p < a || p > b || !p.is_finite() {
                continue;
            }
            if marks.iter().all(|&q| (q - p).abs() > merge_tol) {
                marks.push(p);
            }
        }
        marks.sort_by(|x, y| x.partial_cmp(y).unwrap());

        let drop_tol = h * S::lit(0.25);
        let mut nodes: Vec<(S, bool)> = marks.iter().map(|&p| (p, true)).collect();
        for i in 1..cells {
            let t = a + len * S::from_usize(i).unwrap() / S::from_usize(cells).unwrap();
            let k = marks.partition_point(|&m| m < t);
            let near_right = k < marks.len() && marks[k] - t < drop_tol;
            let near_left = k > 0 && t - marks[k - 1] < drop_tol;
            if !near_left && !near_right {
                nodes.push((t, false));
            }
        }
        nodes.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
        let (nodes, flags) = nodes.into_iter().unzip();
        Self::new(nodes, flags)
    }

    /// Splits `[a, b]` at the given breakpoints and divides every segment
    /// uniformly, using about `cells·len_seg/(b − a)` cells per segment and at
    /// least one. Breakpoints within `1e-10·(b − a)` of an earlier entry are
    /// merged into it. Every cell is at most `max_step` when given.
    pub fn segmented(
        a: S,
        b: S,
        cells: usize,
        breakpoints: &[S],
        max_step: Option<S>,
    ) -> Result<Self, RegulatedError> {
        if !(a < b) {
            return Err(RegulatedError::NotIncreasing(1));
        }
        let len = b - a;
        let merge_tol = len * S::lit(1e-10);
        let mut marks: Vec<S> = Vec::with_capacity(breakpoints.len() + 2);
        for &p in [a, b].iter().chain(breakpoints.iter()) {
            if p < a || p > b || !p.is_finite() {
                continue;
            }
            if marks.iter().all(|&q| (q - p).abs() > merge_tol) {
                marks.push(p);
            }
        }
        marks.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let mut h = len / S::from_usize(cells.max(1)).unwrap();
        if let Some(cap) = max_step {
            if cap > S::zero() && cap < h {
                h = cap;
            }
        }
        let mut nodes = Vec::new();
        let mut flags = Vec::new();
        for w in marks.windows(2) {
            let seg = w[1] - w[0];
            let n = (seg / h - S::lit(1e-9)).ceil().to_usize().unwrap_or(1).max(1);
            let nf = S::from_usize(n).unwrap();
            nodes.push(w[0]);
            flags.push(true);
            for j in 1..n {
                nodes.push(w[0] + seg * S::from_usize(j).unwrap() / nf);
                flags.push(false);
            }
        }
        nodes.push(b);
        flags.push(true);
        Self::new(nodes, flags)
    }

    /// Halves every cell; existing breakpoint flags are kept.
    pub fn refined(&self) -> Self {
        let n = self.nodes.len();
        let mut nodes = Vec::with_capacity(2 * n - 1);
        let mut flags = Vec::with_capacity(2 * n - 1);
        for i in 0..n - 1 {
            nodes.push(self.nodes[i]);
            flags.push(self.breakpoints[i]);
            nodes.push((self.nodes[i] + self.nodes[i + 1]) * S::lit(0.5));
            flags.push(false);
        }
        nodes.push(self.nodes[n - 1]);
        flags.push(self.breakpoints[n - 1]);
        Self { nodes, breakpoints: flags }
    }

    pub fn a(&self) -> S {
        self.nodes[0]
    }

    pub fn b(&self) -> S {
        *self.nodes.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[S] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> S {
        self.nodes[i]
    }

    pub fn is_breakpoint(&self, i: usize) -> bool {
        self.breakpoints[i]
    }

    pub fn breakpoint_flags(&self) -> &[bool] {
        &self.breakpoints
    }

    pub fn breakpoint_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.breakpoints
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
    }

    pub fn max_step(&self) -> S {
        self.nodes
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(S::zero(), S::max)
    }

    /// Index of a node bitwise equal to `t`.
    pub fn find_node(&self, t: S) -> Option<usize> {
        let k = self.nodes.partition_point(|&n| n < t);
        (k < self.nodes.len() && self.nodes[k] == t).then_some(k)
    }

    pub fn contains(&self, t: S) -> bool {
        t >= self.a() && t <= self.b()
    }

    pub fn locate(&self, t: S) -> Result<Location, RegulatedError> {
        if !self.contains(t) {
            return Err(self.domain_error(t));
        }
        Ok(locate_in(&self.nodes, t))
    }

    fn domain_error(&self, t: S) -> RegulatedError {
        RegulatedError::Domain {
            t: t.to_f64_lossy(),
            a: self.a().to_f64_lossy(),
            b: self.b().to_f64_lossy(),
        }
    }
}

/// Queries within a few ulps of the domain scale from a node are treated as
/// that node, so shifted reads such as `(t_k + δ) − δ` keep their side.
pub(crate) fn locate_in<S: Real>(nodes: &[S], t: S) -> Location {
    let last = nodes.len() - 1;
    let scale = nodes[0].abs().max(nodes[last].abs()).max(nodes[last] - nodes[0]);
    let tol = S::epsilon() * S::lit(64.0) * scale;
    let k = nodes.partition_point(|&n| n < t);
    if k <= last && nodes[k] - t <= tol {
        Location::Node(k)
    } else if k > 0 && t - nodes[k - 1] <= tol {
        Location::Node(k - 1)
    } else {
        Location::Cell(k.saturating_sub(1).min(last - 1))
    }
}

/// One-sided evaluation on raw arrays; `t` must lie in `[nodes[0], nodes[last]]`.
pub(crate) fn interp_side<S: Real>(
    nodes: &[S],
    values: &[S],
    right: impl Fn(usize) -> Option<S>,
    t: S,
    side: Side,
) -> S {
    match locate_in(nodes, t) {
        Location::Node(i) => match side {
            Side::Left => values[i],
            Side::Right => right(i).unwrap_or(values[i]),
        },
        Location::Cell(i) => {
            let left = right(i).unwrap_or(values[i]);
            let theta = (t - nodes[i]) / (nodes[i + 1] - nodes[i]);
            left + theta * (values[i + 1] - left)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegulatedGridFn<S> {
    grid: Arc<Grid<S>>,
    values: Vec<S>,
    right_limits: BTreeMap<usize, S>,
}

impl<S: Real> RegulatedGridFn<S> {
    pub fn new(
        grid: Arc<Grid<S>>,
        values: Vec<S>,
        right_limits: BTreeMap<usize, S>,
    ) -> Result<Self, RegulatedError> {
        if values.len() != grid.len() {
            return Err(RegulatedError::LengthMismatch {
                nodes: grid.len(),
                values: values.len(),
            });
        }
        if let Some(&i) = right_limits.keys().find(|&&i| i >= grid.len() || !grid.is_breakpoint(i)) {
            return Err(RegulatedError::RightLimitOffBreakpoint(i));
        }
        Ok(Self {
            grid,
            values,
            right_limits,
        })
    }

    /// Samples `f(t, side)`: the left value at every node, the right limit at
    /// breakpoint nodes where it differs from the left value.
    pub fn from_fn(grid: Arc<Grid<S>>, mut f: impl FnMut(S, Side) -> S) -> Self {
        let values: Vec<S> = grid.nodes().iter().map(|&t| f(t, Side::Left)).collect();
        let mut right_limits = BTreeMap::new();
        let last = grid.len() - 1;
        for i in grid.breakpoint_indices() {
            if i == last {
                continue;
            }
            let r = f(grid.node(i), Side::Right);
            if r != values[i] {
                right_limits.insert(i, r);
            }
        }
        Self {
            grid,
            values,
            right_limits,
        }
    }

    pub fn constant(grid: Arc<Grid<S>>, c: S) -> Self {
        let values = vec![c; grid.len()];
        Self {
            grid,
            values,
            right_limits: BTreeMap::new(),
        }
    }

    pub fn grid(&self) -> &Arc<Grid<S>> {
        &self.grid
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn right_limits(&self) -> &BTreeMap<usize, S> {
        &self.right_limits
    }

    /// Right limit at node `i` when stored, else the node value.
    pub fn value_right(&self, i: usize) -> S {
        self.right_limits.get(&i).copied().unwrap_or(self.values[i])
    }

    pub fn eval(&self, t: S) -> Result<S, RegulatedError> {
        self.eval_side(t, Side::Left)
    }

    pub fn eval_side(&self, t: S, side: Side) -> Result<S, RegulatedError> {
        if !self.grid.contains(t) {
            return Err(self.grid.domain_error(t));
        }
        Ok(self.eval_unchecked(t, side))
    }

    pub(crate) fn eval_unchecked(&self, t: S, side: Side) -> S {
        interp_side(
            self.grid.nodes(),
            &self.values,
            |i| self.right_limits.get(&i).copied(),
            t,
            side,
        )
    }

    pub fn right_limit(&self, t: S) -> Result<S, RegulatedError> {
        if t == self.grid.b() {
            return Err(RegulatedError::RightEndpoint(t.to_f64_lossy()));
        }
        self.eval_side(t, Side::Right)
    }

    pub fn sup_norm(&self) -> S {
        self.values
            .iter()
            .chain(self.right_limits.values())
            .fold(S::zero(), |m, v| m.max(v.abs()))
    }

    /// Per-cell trapezoid rule; each cell starts from the right limit of its
    /// left node.
    pub fn trapezoid_integral(&self) -> S {
        let nodes = self.grid.nodes();
        compensated_sum((0..nodes.len() - 1).map(|i| {
            (nodes[i + 1] - nodes[i]) * (self.value_right(i) + self.values[i + 1]) * S::lit(0.5)
        }))
    }

    /// Continuous antiderivative `t ↦ ∫_a^t f`, zero at the left endpoint.
    pub fn antiderivative(&self) -> Self {
        let nodes = self.grid.nodes();
        let mut values = Vec::with_capacity(nodes.len());
        let mut acc = S::zero();
        let mut carry = S::zero();
        values.push(acc);
        for i in 0..nodes.len() - 1 {
            let piece =
                (nodes[i + 1] - nodes[i]) * (self.value_right(i) + self.values[i + 1]) * S::lit(0.5);
            let y = piece - carry;
            let t = acc + y;
            carry = (t - acc) - y;
            acc = t;
            values.push(acc);
        }
        Self {
            grid: self.grid.clone(),
            values,
            right_limits: BTreeMap::new(),
        }
    }

    pub fn map(&self, mut f: impl FnMut(S) -> S) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
            right_limits: self.right_limits.iter().map(|(&i, &v)| (i, f(v))).collect(),
        }
    }

    /// Combines two functions on the same grid slot by slot.
    pub fn zip_with(
        &self,
        other: &Self,
        mut f: impl FnMut(S, S) -> S,
    ) -> Result<Self, RegulatedError> {
        if !self.same_grid(other) {
            return Err(RegulatedError::GridMismatch);
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect::<Vec<_>>();
        let mut right_limits = BTreeMap::new();
        for &i in self.right_limits.keys().chain(other.right_limits.keys()) {
            let r = f(self.value_right(i), other.value_right(i));
            if r != values[i] {
                right_limits.insert(i, r);
            }
        }
        Ok(Self {
            grid: self.grid.clone(),
            values,
            right_limits,
        })
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }

    /// The history segment `τ ↦ f(t + τ)` on `[−r, 0]`.
    pub fn history_segment(&self, t: S, r: S) -> Result<Self, RegulatedError> {
        let lo = t - r;
        if !self.grid.contains(lo) || !self.grid.contains(t) {
            return Err(self.grid.domain_error(if self.grid.contains(t) { lo } else { t }));
        }
        let nodes = self.grid.nodes();
        let mut seg_nodes = vec![-r];
        let mut flags = vec![true];
        let mut values = vec![self.eval_unchecked(lo, Side::Left)];
        let mut right = BTreeMap::new();
        let first_right = self.eval_unchecked(lo, Side::Right);
        if first_right != values[0] {
            right.insert(0, first_right);
        }
        let start = nodes.partition_point(|&n| n <= lo);
        for (i, &node) in nodes.iter().enumerate().skip(start) {
            if node >= t {
                break;
            }
            let tau = node - t;
            if tau <= -r || tau >= S::zero() || tau <= *seg_nodes.last().unwrap() {
                continue;
            }
            seg_nodes.push(tau);
            flags.push(self.grid.is_breakpoint(i));
            values.push(self.values[i]);
            if let Some(&rv) = self.right_limits.get(&i) {
                right.insert(seg_nodes.len() - 1, rv);
            }
        }
        seg_nodes.push(S::zero());
        flags.push(true);
        values.push(self.eval_unchecked(t, Side::Left));
        let grid = Arc::new(Grid::new(seg_nodes, flags)?);
        Self::new(grid, values, right)
    }

    /// `(t, value, right_limit?)` per node.
    pub fn samples(&self) -> Vec<(S, S, Option<S>)> {
        self.grid
            .nodes()
            .iter()
            .enumerate()
            .map(|(i, &t)| (t, self.values[i], self.right_limits.get(&i).copied()))
            .collect()
    }

    /// Rebuilds a function from `(value, right_limit?)` samples on `grid`.
    pub fn from_samples(
        grid: Arc<Grid<S>>,
        samples: impl IntoIterator<Item = (S, Option<S>)>,
    ) -> Result<Self, RegulatedError> {
        let mut values = Vec::new();
        let mut right = BTreeMap::new();
        for (i, (v, r)) in samples.into_iter().enumerate() {
            values.push(v);
            if let Some(r) = r {
                right.insert(i, r);
            }
        }
        Self::new(grid, values, right)
    }

    /// Writes `t,value,right_limit` rows; the last field is empty when the
    /// node carries no right limit.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), RegulatedError> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| RegulatedError::Csv(e.to_string());
        w.write_record(["t", "value", "right_limit"]).map_err(err)?;
        for (t, v, r) in self.samples() {
            let r = r.map(|r| r.to_string()).unwrap_or_default();
            w.write_record([t.to_string(), v.to_string(), r]).map_err(err)?;
        }
        w.flush().map_err(|e| RegulatedError::Csv(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid012(bp_at_1: bool) -> Arc<Grid<f64>> {
        Arc::new(Grid::new(vec![0.0, 1.0, 2.0], vec![true, bp_at_1, true]).unwrap())
    }

    fn jump_fn() -> RegulatedGridFn<f64> {
        let mut r = BTreeMap::new();
        r.insert(1, 3.0);
        RegulatedGridFn::new(grid012(true), vec![0.0, 1.0, 3.0], r).unwrap()
    }

    #[test]
    fn linear_interpolation() {
        let f = RegulatedGridFn::new(grid012(false), vec![0.0, 1.0, 2.0], BTreeMap::new()).unwrap();
        assert_eq!(f.eval(0.5).unwrap(), 0.5);
        assert!(matches!(f.eval(2.5), Err(RegulatedError::Domain { .. })));
    }

    #[test]
    fn left_continuous_at_breakpoint() {
        let f = jump_fn();
        assert_eq!(f.eval(1.0).unwrap(), 1.0);
        assert_eq!(f.eval(1.5).unwrap(), 3.0);
        assert_eq!(f.right_limit(1.0).unwrap(), 3.0);
        assert_eq!(f.eval(0.5).unwrap(), 0.5);
    }

    #[test]
    fn right_limit_semantics() {
        let f = jump_fn();
        assert_eq!(f.right_limit(0.0).unwrap(), 0.0);
        assert!(matches!(f.right_limit(2.0), Err(RegulatedError::RightEndpoint(_))));
        let c = RegulatedGridFn::constant(grid012(true), 4.0);
        for t in [0.0, 0.3, 1.0, 1.7] {
            assert_eq!(c.right_limit(t).unwrap(), 4.0);
        }
    }

    #[test]
    fn right_limit_off_breakpoint_rejected() {
        let mut r = BTreeMap::new();
        r.insert(1, 3.0);
        let err = RegulatedGridFn::new(grid012(false), vec![0.0, 1.0, 3.0], r).unwrap_err();
        assert_eq!(err, RegulatedError::RightLimitOffBreakpoint(1));
    }

    #[test]
    fn sup_norm_includes_right_limits() {
        let mut r = BTreeMap::new();
        r.insert(1, -7.0);
        let f = RegulatedGridFn::new(grid012(true), vec![0.0, 1.0, 3.0], r).unwrap();
        assert_eq!(f.sup_norm(), 7.0);
    }

    #[test]
    fn trapezoid_constant_and_linear() {
        let two_pi = 2.0 * std::f64::consts::PI;
        let g = Arc::new(Grid::uniform(0.0, two_pi, 37).unwrap());
        let one = RegulatedGridFn::constant(g, 1.0);
        assert!((one.trapezoid_integral() - two_pi).abs() < 1e-14);

        let g = Arc::new(Grid::uniform(0.0, 1.0, 63).unwrap());
        let lin = RegulatedGridFn::from_fn(g, |t: f64, _| t);
        assert!((lin.trapezoid_integral() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn trapezoid_uses_right_limit_on_jump_piece() {
        // 0..1 linear 0→1, then constant 3 on (1, 2]
        let f = jump_fn();
        assert!((f.trapezoid_integral() - 3.5).abs() < 1e-15);
    }

    #[test]
    fn merge_keeps_breakpoints_bitwise() {
        let bps = [1.0f64, 1.5, 2.0 * std::f64::consts::PI - 1.0];
        let g = Grid::with_breakpoints(-2.0, 2.0 * std::f64::consts::PI, 100, &bps, None).unwrap();
        for p in bps {
            let i = g.find_node(p).expect("breakpoint is a node");
            assert!(g.is_breakpoint(i));
        }
        assert!(g.is_breakpoint(0) && g.is_breakpoint(g.len() - 1));
        let g = Grid::with_breakpoints(0.0, 10.0, 4, &[], Some(0.5)).unwrap();
        assert!(g.max_step() <= 0.5);
    }

    #[test]
    fn history_segment_identity_and_shift() {
        let g = Arc::new(Grid::with_breakpoints(-1.0, 2.0, 30, &[0.0], None).unwrap());
        let f = RegulatedGridFn::from_fn(g, |s: f64, _| s);
        let phi = f.history_segment(1.0, 1.0).unwrap();
        for tau in [-1.0, -0.75, -0.3, 0.0] {
            assert!((phi.eval(tau).unwrap() - (1.0 + tau)).abs() < 1e-14);
        }
        let at0 = f.history_segment(0.0, 1.0).unwrap();
        assert!((at0.eval(-0.5).unwrap() + 0.5).abs() < 1e-15);
        assert!(f.history_segment(0.5, 2.0).is_err());
    }

    #[test]
    fn history_segment_preserves_jump() {
        let f = jump_fn();
        let phi = f.history_segment(1.5, 1.0).unwrap();
        let k = phi.grid().find_node(-0.5).unwrap();
        assert_eq!(phi.values()[k], 1.0);
        assert_eq!(phi.value_right(k), 3.0);
    }

    #[test]
    fn csv_rows() {
        let f = jump_fn();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "t,value,right_limit\n0,0,\n1,1,3\n2,3,\n");
    }

    fn pl_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
        (3usize..40).prop_flat_map(|n| {
            (
                proptest::collection::vec(0.01f64..1.0, n),
                proptest::collection::vec(-10.0f64..10.0, n + 1),
                proptest::collection::vec(-10.0f64..10.0, n + 1),
            )
        })
    }

    fn build(steps: &[f64]) -> Arc<Grid<f64>> {
        let mut nodes = vec![0.0];
        for s in steps {
            nodes.push(nodes.last().unwrap() + s);
        }
        let flags = vec![false; nodes.len()];
        Arc::new(Grid::new(nodes, flags).unwrap())
    }

    proptest! {
        #[test]
        fn sup_norm_submultiplicative((steps, a, b) in pl_pair()) {
            let g = build(&steps);
            let f = RegulatedGridFn::new(g.clone(), a, BTreeMap::new()).unwrap();
            let h = RegulatedGridFn::new(g, b, BTreeMap::new()).unwrap();
            let prod = f.zip_with(&h, |x, y| x * y).unwrap();
            prop_assert!(prod.sup_norm() <= f.sup_norm() * h.sup_norm() * (1.0 + 1e-15));
        }

        #[test]
        fn trapezoid_is_linear((steps, a, b) in pl_pair(), al in -3.0f64..3.0, be in -3.0f64..3.0) {
            let g = build(&steps);
            let f = RegulatedGridFn::new(g.clone(), a, BTreeMap::new()).unwrap();
            let h = RegulatedGridFn::new(g, b, BTreeMap::new()).unwrap();
            let comb = f.zip_with(&h, |x, y| al * x + be * y).unwrap();
            let lhs = comb.trapezoid_integral();
            let rhs = al * f.trapezoid_integral() + be * h.trapezoid_integral();
            let scale = 1.0 + f.sup_norm() + h.sup_norm();
            prop_assert!((lhs - rhs).abs() <= 1e-13 * scale * steps.len() as f64);
        }

        #[test]
        fn history_segment_endpoint_matches_eval((steps, a, _b) in pl_pair(), pick in 0usize..1000) {
            let g = build(&steps);
            let f = RegulatedGridFn::new(g.clone(), a, BTreeMap::new()).unwrap();
            let r = g.node(1) - g.node(0);
            let i = 1 + pick % (g.len() - 1);
            let t = g.node(i);
            let phi = f.history_segment(t, r).unwrap();
            prop_assert_eq!(phi.eval(0.0).unwrap(), f.eval(t).unwrap());
        }

        #[test]
        fn sample_round_trip_bitwise((steps, a, b) in pl_pair()) {
            let mut nodes = vec![0.0];
            for s in &steps { nodes.push(nodes.last().unwrap() + s); }
            let n = nodes.len();
            let flags: Vec<bool> = (0..n).map(|i| i % 3 == 0).collect();
            let g = Arc::new(Grid::new(nodes, flags).unwrap());
            let mut right = BTreeMap::new();
            for i in (0..n - 1).step_by(3) { right.insert(i, b[i]); }
            let f = RegulatedGridFn::new(g.clone(), a, right).unwrap();
            let back = RegulatedGridFn::from_samples(g, f.samples().into_iter().map(|(_, v, r)| (v, r))).unwrap();
            prop_assert_eq!(back, f);
        }
    }
}
