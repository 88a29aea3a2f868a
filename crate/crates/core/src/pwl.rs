//! Continuous piecewise-linear functions.
//!
//! Two representations are used throughout the crate:
//!
//! * [`GridFn`] stores nodal values on a uniform [`Grid`] and is extended by
//!   its boundary values outside the domain. Full-model solutions, snapshots
//!   and the local basis live here.
//! * [`Polyline`] stores arbitrary strictly increasing breakpoints and is
//!   extended linearly with explicit end slopes. Transport maps, transport
//!   modes and monotone profiles live here.
//!
//! Everything is evaluated exactly (up to rounding); inner products are
//! integrated in closed form on the merged breakpoint partition.

use serde::{Deserialize, Serialize};

use crate::error::{MatsError, Result};

/// Relative distance (in cell units) under which a point is treated as a node.
const NODE_SNAP: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    x_left: f64,
    x_right: f64,
    n_nodes: usize,
    spacing: f64,
}

impl Grid {
    pub fn new(x_left: f64, x_right: f64, n_nodes: usize) -> Result<Self> {
        if !(x_left.is_finite() && x_right.is_finite()) || x_left >= x_right {
            return Err(MatsError::InvalidGrid(format!(
                "need finite x_left < x_right, got [{x_left}, {x_right}]"
            )));
        }
        if n_nodes < 2 {
            return Err(MatsError::InvalidGrid(format!("need at least 2 nodes, got {n_nodes}")));
        }
        Ok(Self { x_left, x_right, n_nodes, spacing: (x_right - x_left) / (n_nodes - 1) as f64 })
    }

    pub fn x_left(&self) -> f64 {
        self.x_left
    }

    pub fn x_right(&self) -> f64 {
        self.x_right
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    /// Uniform node spacing (the full-model grid width).
    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn length(&self) -> f64 {
        self.x_right - self.x_left
    }

    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.n_nodes {
            self.x_right
        } else {
            self.x_left + i as f64 * self.spacing
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_nodes).map(|i| self.node(i)).collect()
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.x_left && x <= self.x_right
    }

    /// Index of the node closest to `x`, clamped to the grid.
    pub fn nearest_node(&self, x: f64) -> usize {
        let s = ((x - self.x_left) / self.spacing).round();
        s.clamp(0.0, (self.n_nodes - 1) as f64) as usize
    }

    /// Returns `Position::Node(i)` if `x` sits on node `i` (within a snapping
    /// tolerance), `Position::Cell(i, t)` for `x` strictly inside cell `i`
    /// with local coordinate `t` in (0, 1), and `None` outside the domain.
    pub fn locate(&self, x: f64) -> Option<Position> {
        if x < self.x_left || x > self.x_right {
            return None;
        }
        let s = (x - self.x_left) / self.spacing;
        let r = s.round();
        if (s - r).abs() <= NODE_SNAP {
            let i = (r as usize).min(self.n_nodes - 1);
            return Some(Position::Node(i));
        }
        let i = (s.floor() as usize).min(self.n_nodes - 2);
        Some(Position::Cell(i, s - i as f64))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Position {
    Node(usize),
    Cell(usize, f64),
}

/// Continuous piecewise-linear function given by nodal values on a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFn {
    grid: Grid,
    values: Vec<f64>,
}

impl GridFn {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_nodes() {
            return Err(MatsError::DimensionMismatch { expected: grid.n_nodes(), found: values.len() });
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.nodes().into_iter().map(f).collect();
        Self { grid, values }
    }

    pub fn zeros(grid: Grid) -> Self {
        Self { grid, values: vec![0.0; grid.n_nodes()] }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Value at `x`; constant extension by the boundary values outside the domain.
    pub fn eval(&self, x: f64) -> f64 {
        if x <= self.grid.x_left {
            return self.values[0];
        }
        if x >= self.grid.x_right {
            return self.values[self.values.len() - 1];
        }
        match self.grid.locate(x) {
            Some(Position::Node(i)) => self.values[i],
            Some(Position::Cell(i, t)) => self.values[i] + t * (self.values[i + 1] - self.values[i]),
            None => unreachable!("x inside the domain"),
        }
    }

    fn cell_slope(&self, i: usize) -> f64 {
        (self.values[i + 1] - self.values[i]) / self.grid.spacing
    }

    /// Left one-sided derivative (zero left of the domain).
    pub fn slope_left(&self, x: f64) -> f64 {
        if x <= self.grid.x_left || x > self.grid.x_right {
            return 0.0;
        }
        match self.grid.locate(x) {
            Some(Position::Node(0)) => 0.0,
            Some(Position::Node(i)) => self.cell_slope(i - 1),
            Some(Position::Cell(i, _)) => self.cell_slope(i),
            None => 0.0,
        }
    }

    /// Right one-sided derivative (zero right of the domain).
    pub fn slope_right(&self, x: f64) -> f64 {
        if x < self.grid.x_left || x >= self.grid.x_right {
            return 0.0;
        }
        match self.grid.locate(x) {
            Some(Position::Node(i)) if i + 1 == self.values.len() => 0.0,
            Some(Position::Node(i)) => self.cell_slope(i),
            Some(Position::Cell(i, _)) => self.cell_slope(i),
            None => 0.0,
        }
    }

    /// Exact L² inner product with another function on the same grid.
    pub fn inner(&self, other: &GridFn) -> f64 {
        debug_assert_eq!(self.grid, other.grid);
        let (a, b) = (&self.values, &other.values);
        let mut acc = 0.0;
        for i in 0..a.len() - 1 {
            acc += (2.0 * a[i] * b[i] + a[i] * b[i + 1] + a[i + 1] * b[i] + 2.0 * a[i + 1] * b[i + 1]) / 6.0;
        }
        acc * self.grid.spacing
    }

    pub fn norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    /// Exact L¹ norm over the domain.
    pub fn l1_norm(&self) -> f64 {
        let h = self.grid.spacing;
        self.values.windows(2).map(|w| segment_abs_integral(w[0], w[1], h)).sum()
    }

    /// Exact L¹ distance to another function on the same grid.
    pub fn l1_distance(&self, other: &GridFn) -> f64 {
        debug_assert_eq!(self.grid, other.grid);
        let h = self.grid.spacing;
        let mut acc = 0.0;
        for i in 0..self.values.len() - 1 {
            let d0 = self.values[i] - other.values[i];
            let d1 = self.values[i + 1] - other.values[i + 1];
            acc += segment_abs_integral(d0, d1, h);
        }
        acc
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, s: f64) -> GridFn {
        GridFn { grid: self.grid, values: self.values.iter().map(|v| v * s).collect() }
    }

    pub fn total_variation(&self) -> f64 {
        self.values.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
    }
}

/// ∫₀ʰ |f| for f linear from `f0` to `f1`.
pub(crate) fn segment_abs_integral(f0: f64, f1: f64, h: f64) -> f64 {
    if f0 * f1 >= 0.0 {
        0.5 * h * (f0.abs() + f1.abs())
    } else {
        0.5 * h * (f0 * f0 + f1 * f1) / (f0.abs() + f1.abs())
    }
}

/// Continuous piecewise-linear map ℝ → ℝ with linear extension past its ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polyline {
    breakpoints: Vec<f64>,
    ordinates: Vec<f64>,
    left_slope: f64,
    right_slope: f64,
}

impl Polyline {
    pub fn new(breakpoints: Vec<f64>, ordinates: Vec<f64>, left_slope: f64, right_slope: f64) -> Result<Self> {
        if breakpoints.len() < 2 {
            return Err(MatsError::InvalidPolyline(format!(
                "need at least 2 breakpoints, got {}",
                breakpoints.len()
            )));
        }
        if ordinates.len() != breakpoints.len() {
            return Err(MatsError::DimensionMismatch { expected: breakpoints.len(), found: ordinates.len() });
        }
        if breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(MatsError::InvalidPolyline("breakpoints must be strictly increasing".into()));
        }
        if ordinates.iter().chain([&left_slope, &right_slope]).any(|v| !v.is_finite()) {
            return Err(MatsError::InvalidPolyline("non-finite ordinate or slope".into()));
        }
        Ok(Self { breakpoints, ordinates, left_slope, right_slope })
    }

    /// The identity map, stored on `[a, b]`.
    pub fn identity(a: f64, b: f64) -> Self {
        Self { breakpoints: vec![a, b], ordinates: vec![a, b], left_slope: 1.0, right_slope: 1.0 }
    }

    /// Constant function, stored on `[a, b]`.
    pub fn constant(c: f64, a: f64, b: f64) -> Self {
        Self { breakpoints: vec![a, b], ordinates: vec![c, c], left_slope: 0.0, right_slope: 0.0 }
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn ordinates(&self) -> &[f64] {
        &self.ordinates
    }

    pub fn left_slope(&self) -> f64 {
        self.left_slope
    }

    pub fn right_slope(&self) -> f64 {
        self.right_slope
    }

    pub fn len(&self) -> usize {
        self.breakpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.breakpoints.is_empty()
    }

    fn last(&self) -> usize {
        self.breakpoints.len() - 1
    }

    pub fn segment_slope(&self, k: usize) -> f64 {
        (self.ordinates[k + 1] - self.ordinates[k]) / (self.breakpoints[k + 1] - self.breakpoints[k])
    }

    pub fn eval(&self, x: f64) -> f64 {
        let (b, o) = (&self.breakpoints, &self.ordinates);
        let n = self.last();
        if x <= b[0] {
            return o[0] + self.left_slope * (x - b[0]);
        }
        if x >= b[n] {
            return o[n] + self.right_slope * (x - b[n]);
        }
        let k = b.partition_point(|&p| p <= x) - 1;
        if b[k] == x {
            return o[k];
        }
        o[k] + (o[k + 1] - o[k]) * ((x - b[k]) / (b[k + 1] - b[k]))
    }

    /// Evaluate at sorted abscissae with a single forward sweep.
    pub fn eval_sorted(&self, xs: &[f64]) -> Vec<f64> {
        let (b, o) = (&self.breakpoints, &self.ordinates);
        let n = self.last();
        let mut k = 0;
        xs.iter()
            .map(|&x| {
                if x <= b[0] {
                    return o[0] + self.left_slope * (x - b[0]);
                }
                if x >= b[n] {
                    return o[n] + self.right_slope * (x - b[n]);
                }
                while b[k + 1] <= x {
                    k += 1;
                }
                if b[k] == x {
                    o[k]
                } else {
                    o[k] + (o[k + 1] - o[k]) * ((x - b[k]) / (b[k + 1] - b[k]))
                }
            })
            .collect()
    }

    /// Left one-sided derivative.
    pub fn slope_left(&self, x: f64) -> f64 {
        let b = &self.breakpoints;
        if x <= b[0] {
            return self.left_slope;
        }
        if x > b[self.last()] {
            return self.right_slope;
        }
        // first breakpoint >= x closes the segment on the left of x
        let k = b.partition_point(|&p| p < x);
        self.segment_slope(k - 1)
    }

    /// Right one-sided derivative.
    pub fn slope_right(&self, x: f64) -> f64 {
        let b = &self.breakpoints;
        if x < b[0] {
            return self.left_slope;
        }
        if x >= b[self.last()] {
            return self.right_slope;
        }
        let k = b.partition_point(|&p| p <= x) - 1;
        self.segment_slope(k)
    }

    /// Strictly increasing ordinates and positive extension slopes.
    pub fn is_monotone(&self) -> bool {
        self.left_slope > 0.0 && self.right_slope > 0.0 && self.ordinates.windows(2).all(|w| w[0] < w[1])
    }

    pub fn is_nondecreasing(&self) -> bool {
        self.left_slope >= 0.0 && self.right_slope >= 0.0 && self.ordinates.windows(2).all(|w| w[0] <= w[1])
    }

    /// Smallest slope over all segments and both extensions.
    pub fn min_slope(&self) -> f64 {
        (0..self.last())
            .map(|k| self.segment_slope(k))
            .fold(self.left_slope.min(self.right_slope), f64::min)
    }

    /// Inverse of a strictly increasing map.
    pub fn invert(&self, y: f64) -> Result<f64> {
        if !self.is_monotone() {
            return Err(MatsError::NotMonotone);
        }
        Ok(self.invert_unchecked(y))
    }

    /// Inverse without re-validating monotonicity; the caller guarantees it.
    pub(crate) fn invert_unchecked(&self, y: f64) -> f64 {
        let (b, o) = (&self.breakpoints, &self.ordinates);
        let n = self.last();
        if y <= o[0] {
            return b[0] + (y - o[0]) / self.left_slope;
        }
        if y >= o[n] {
            return b[n] + (y - o[n]) / self.right_slope;
        }
        let k = o.partition_point(|&p| p <= y) - 1;
        if o[k] == y {
            return b[k];
        }
        b[k] + (b[k + 1] - b[k]) * ((y - o[k]) / (o[k + 1] - o[k]))
    }

    /// Generalized inverse of a non-decreasing map, restricted to the stored
    /// range `[ordinates[0], ordinates[last]]`. Level sets that are whole
    /// intervals resolve to their midpoint.
    pub fn generalized_inverse(&self, y: f64) -> Result<f64> {
        if !self.ordinates.windows(2).all(|w| w[0] <= w[1]) {
            return Err(MatsError::NotMonotone);
        }
        let (b, o) = (&self.breakpoints, &self.ordinates);
        let n = self.last();
        if y < o[0] || y > o[n] {
            return Err(MatsError::InvalidPolyline(format!(
                "level {y} outside stored range [{}, {}]",
                o[0], o[n]
            )));
        }
        let lo = o.partition_point(|&p| p < y);
        let hi = o.partition_point(|&p| p <= y);
        if hi > lo {
            // y attained on breakpoints lo..hi-1
            return Ok(0.5 * (b[lo] + b[hi - 1]));
        }
        let k = lo - 1;
        Ok(b[k] + (b[k + 1] - b[k]) * ((y - o[k]) / (o[k + 1] - o[k])))
    }

    pub fn scaled(&self, s: f64) -> Polyline {
        Polyline {
            breakpoints: self.breakpoints.clone(),
            ordinates: self.ordinates.iter().map(|v| v * s).collect(),
            left_slope: self.left_slope * s,
            right_slope: self.right_slope * s,
        }
    }

    /// `self - other` on the union of both breakpoint sets.
    pub fn sub(&self, other: &Polyline) -> Polyline {
        let bp = merge_breakpoints([self.breakpoints(), other.breakpoints()]);
        let a = self.eval_sorted(&bp);
        let b = other.eval_sorted(&bp);
        Polyline {
            ordinates: a.iter().zip(&b).map(|(x, y)| x - y).collect(),
            breakpoints: bp,
            left_slope: self.left_slope - other.left_slope,
            right_slope: self.right_slope - other.right_slope,
        }
    }

    /// Composition `xi ∘ self⁻¹`, i.e. the pullback T♭ξ, evaluated at `x`.
    pub fn pullback(&self, xi: &GridFn, x: f64) -> Result<f64> {
        Ok(xi.eval(self.invert(x)?))
    }

    /// Inverse at sorted levels with a single sweep; the map must be monotone.
    pub fn invert_sorted(&self, ys: &[f64]) -> Result<Vec<f64>> {
        if !self.is_monotone() {
            return Err(MatsError::NotMonotone);
        }
        let (b, o) = (&self.breakpoints, &self.ordinates);
        let n = self.last();
        let mut k = 0;
        Ok(ys
            .iter()
            .map(|&y| {
                if y <= o[0] {
                    return b[0] + (y - o[0]) / self.left_slope;
                }
                if y >= o[n] {
                    return b[n] + (y - o[n]) / self.right_slope;
                }
                while o[k + 1] <= y {
                    k += 1;
                }
                if o[k] == y {
                    b[k]
                } else {
                    b[k] + (b[k + 1] - b[k]) * ((y - o[k]) / (o[k + 1] - o[k]))
                }
            })
            .collect())
    }

    /// `inf{x : T(x) ≥ y}` for sorted `ys`, the inverse of the running maximum
    /// of the map. Agrees with [`Polyline::invert_sorted`] on monotone maps and
    /// never fails; extensions that do not rise clamp to the end breakpoints.
    pub fn lower_inverse_sorted(&self, ys: &[f64]) -> Vec<f64> {
        let (b, o) = (&self.breakpoints, &self.ordinates);
        let n = self.last();
        let mut env = Vec::with_capacity(o.len());
        let mut top = f64::NEG_INFINITY;
        for &v in o {
            top = top.max(v);
            env.push(top);
        }
        let mut k = 0;
        ys.iter()
            .map(|&y| {
                if y <= env[0] {
                    return if self.left_slope > 0.0 { b[0] + (y - o[0]) / self.left_slope } else { b[0] };
                }
                if y > env[n] {
                    return if self.right_slope > 0.0 && env[n] == o[n] { b[n] + (y - o[n]) / self.right_slope } else { b[n] };
                }
                while env[k + 1] < y {
                    k += 1;
                }
                // env[k] < y <= env[k + 1], so segment k rises through y
                b[k] + (b[k + 1] - b[k]) * ((y - o[k]) / (o[k + 1] - o[k]))
            })
            .collect()
    }

    /// Exact ∫ₐᵇ self · other dx using a merged sweep over both breakpoint lists.
    pub fn inner_on(&self, other: &Polyline, a: f64, b: f64) -> f64 {
        let mut pts = Vec::with_capacity(self.len() + other.len() + 2);
        pts.push(a);
        let (p, q) = (&self.breakpoints, &other.breakpoints);
        let (mut i, mut j) = (p.partition_point(|&x| x <= a), q.partition_point(|&x| x <= a));
        loop {
            let next = match (p.get(i), q.get(j)) {
                (Some(&x), Some(&y)) if x < y => {
                    i += 1;
                    x
                }
                (Some(&x), Some(&y)) if y < x => {
                    j += 1;
                    y
                }
                (Some(&x), Some(_)) => {
                    i += 1;
                    j += 1;
                    x
                }
                (Some(&x), None) => {
                    i += 1;
                    x
                }
                (None, Some(&y)) => {
                    j += 1;
                    y
                }
                (None, None) => break,
            };
            if next >= b {
                break;
            }
            pts.push(next);
        }
        pts.push(b);
        let fv = self.eval_sorted(&pts);
        let gv = other.eval_sorted(&pts);
        let mut acc = 0.0;
        for k in 0..pts.len() - 1 {
            let h = pts[k + 1] - pts[k];
            acc += h * (2.0 * fv[k] * gv[k] + fv[k] * gv[k + 1] + fv[k + 1] * gv[k] + 2.0 * fv[k + 1] * gv[k + 1]) / 6.0;
        }
        acc
    }
}

/// Sorted union of several sorted breakpoint lists, exact duplicates removed.
pub fn merge_breakpoints<'a>(lists: impl IntoIterator<Item = &'a [f64]>) -> Vec<f64> {
    let mut all: Vec<f64> = lists.into_iter().flat_map(|l| l.iter().copied()).collect();
    all.sort_by(f64::total_cmp);
    all.dedup();
    all
}

/// Anything that is continuous and piecewise linear with known kinks.
pub trait PiecewiseLinear {
    fn value(&self, x: f64) -> f64;
    /// Kinks strictly inside `(a, b)`, sorted.
    fn kinks_within(&self, a: f64, b: f64) -> Vec<f64>;
}

impl PiecewiseLinear for GridFn {
    fn value(&self, x: f64) -> f64 {
        self.eval(x)
    }

    fn kinks_within(&self, a: f64, b: f64) -> Vec<f64> {
        (0..self.grid.n_nodes()).map(|i| self.grid.node(i)).filter(|&x| x > a && x < b).collect()
    }
}

impl PiecewiseLinear for Polyline {
    fn value(&self, x: f64) -> f64 {
        self.eval(x)
    }

    fn kinks_within(&self, a: f64, b: f64) -> Vec<f64> {
        self.breakpoints.iter().copied().filter(|&x| x > a && x < b).collect()
    }
}

/// Exact ∫ₐᵇ f g dx for piecewise-linear `f`, `g`.
pub fn inner_product(f: &dyn PiecewiseLinear, g: &dyn PiecewiseLinear, a: f64, b: f64) -> f64 {
    let kf = f.kinks_within(a, b);
    let kg = g.kinks_within(a, b);
    let mut pts = Vec::with_capacity(kf.len() + kg.len() + 2);
    pts.push(a);
    pts.extend(merge_breakpoints([kf.as_slice(), kg.as_slice()]));
    pts.push(b);
    let fv: Vec<f64> = pts.iter().map(|&x| f.value(x)).collect();
    let gv: Vec<f64> = pts.iter().map(|&x| g.value(x)).collect();
    let mut acc = 0.0;
    for k in 0..pts.len() - 1 {
        let h = pts[k + 1] - pts[k];
        acc += h * (2.0 * fv[k] * gv[k] + fv[k] * gv[k + 1] + fv[k + 1] * gv[k] + 2.0 * fv[k + 1] * gv[k + 1]) / 6.0;
    }
    acc
}

/// The polyline Σ αₘ vₘ on the union of all mode breakpoints.
pub fn compose_linear_combo(modes: &[Polyline], alpha: &[f64]) -> Result<Polyline> {
    if modes.is_empty() {
        return Err(MatsError::DimensionMismatch { expected: 1, found: 0 });
    }
    if modes.len() != alpha.len() {
        return Err(MatsError::DimensionMismatch { expected: modes.len(), found: alpha.len() });
    }
    let bp = merge_breakpoints(modes.iter().map(|m| m.breakpoints()));
    let mut ord = vec![0.0; bp.len()];
    let (mut ls, mut rs) = (0.0, 0.0);
    for (m, &a) in modes.iter().zip(alpha) {
        for (o, v) in ord.iter_mut().zip(m.eval_sorted(&bp)) {
            *o += a * v;
        }
        ls += a * m.left_slope;
        rs += a * m.right_slope;
    }
    Polyline::new(bp, ord, ls, rs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn unit_grid(n: usize) -> Grid {
        Grid::new(0.0, 1.0, n).unwrap()
    }

    #[test]
    fn grid_rejects_bad_input() {
        assert!(Grid::new(1.0, 0.0, 5).is_err());
        assert!(Grid::new(0.0, 1.0, 1).is_err());
        let g = Grid::new(-5.0, 5.0, 2048).unwrap();
        assert!((g.x_left() + 2047.0 * g.spacing() - g.x_right()).abs() < 1e-12);
        assert_eq!(g.node(2047), 5.0);
    }

    #[test]
    fn gridfn_eval_interpolates_and_clamps() {
        let f = GridFn::new(unit_grid(2), vec![0.0, 1.0]).unwrap();
        assert_eq!(f.eval(0.5), 0.5);
        assert_eq!(f.eval(2.0), 1.0);
        assert_eq!(f.eval(-3.0), 0.0);
    }

    #[test]
    fn gridfn_nodes_are_exact() {
        let g = Grid::new(-5.0, 5.0, 101).unwrap();
        let f = GridFn::from_fn(g, |x| (3.0 * x).sin());
        for i in 0..g.n_nodes() {
            assert_eq!(f.eval(g.node(i)), f.values()[i]);
        }
    }

    #[test]
    fn gridfn_one_sided_slopes() {
        let f = GridFn::new(unit_grid(3), vec![0.0, 1.0, 0.0]).unwrap();
        assert_abs_diff_eq!(f.slope_left(0.5), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.slope_right(0.5), -2.0, epsilon = 1e-12);
        assert_eq!(f.slope_left(0.0), 0.0);
        assert_abs_diff_eq!(f.slope_right(0.0), 2.0, epsilon = 1e-12);
        assert_eq!(f.slope_right(1.0), 0.0);
    }

    #[test]
    fn polyline_linear_extension() {
        let p = Polyline::new(vec![0.0, 1.0], vec![0.0, 2.0], 2.0, 2.0).unwrap();
        assert_eq!(p.eval(-1.0), -2.0);
        assert_eq!(p.eval(3.0), 6.0);
        assert!(Polyline::new(vec![0.0, 0.0], vec![0.0, 1.0], 1.0, 1.0).is_err());
    }

    #[test]
    fn invert_examples() {
        let id = Polyline::identity(0.0, 1.0);
        assert_eq!(id.invert(0.3).unwrap(), 0.3);
        let p = Polyline::new(vec![0.0, 1.0], vec![0.0, 2.0], 2.0, 2.0).unwrap();
        assert_eq!(p.invert(1.0).unwrap(), 0.5);
        let bad = Polyline::new(vec![0.0, 1.0, 2.0], vec![0.0, 1.0, 0.5], 1.0, 1.0).unwrap();
        assert!(matches!(bad.invert(0.2), Err(MatsError::NotMonotone)));
    }

    #[test]
    fn lower_inverse_of_a_dipping_map() {
        // rises to 2, dips to 1, rises to 3
        let p = Polyline::new(vec![0.0, 1.0, 2.0, 3.0], vec![0.0, 2.0, 1.0, 3.0], 1.0, 0.0).unwrap();
        let ys = [-1.0, 0.5, 1.5, 2.0, 2.5, 3.0, 4.0];
        let xs = p.lower_inverse_sorted(&ys);
        assert_eq!(xs, vec![-1.0, 0.25, 0.75, 1.0, 2.75, 3.0, 3.0]);
        for (&x, &y) in xs.iter().zip(&ys).filter(|(_, &y)| (0.0..=3.0).contains(&y)) {
            assert_eq!(p.eval(x), y);
        }
    }

    #[test]
    fn generalized_inverse_takes_plateau_midpoint() {
        let p = Polyline::new(vec![0.0, 1.0, 2.0, 3.0], vec![0.0, 0.5, 0.5, 1.0], 0.0, 0.0).unwrap();
        assert_eq!(p.generalized_inverse(0.5).unwrap(), 1.5);
        assert_eq!(p.generalized_inverse(0.25).unwrap(), 0.5);
        assert_eq!(p.generalized_inverse(1.0).unwrap(), 3.0);
        assert!(p.generalized_inverse(1.5).is_err());
    }

    #[test]
    fn pullback_examples() {
        let g = unit_grid(3);
        let hat = GridFn::new(g, vec![0.0, 1.0, 0.0]).unwrap();
        let id = Polyline::identity(0.0, 1.0);
        for x in [-0.2, 0.1, 0.5, 0.77, 1.3] {
            assert_eq!(id.pullback(&hat, x).unwrap(), hat.eval(x));
        }
        let shift = Polyline::new(vec![0.0, 1.0], vec![1.0, 2.0], 1.0, 1.0).unwrap();
        assert_eq!(shift.pullback(&hat, 1.5).unwrap(), 1.0);
    }

    #[test]
    fn inner_product_examples() {
        let one = Polyline::constant(1.0, 0.0, 1.0);
        let x = Polyline::identity(0.0, 1.0);
        assert_abs_diff_eq!(inner_product(&one, &one, 0.0, 1.0), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(inner_product(&x, &x, 0.0, 1.0), 1.0 / 3.0, epsilon = 1e-15);
        let g = unit_grid(11);
        let f = GridFn::from_fn(g, |x| x);
        assert_abs_diff_eq!(f.inner(&f), 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(inner_product(&f, &x, 0.0, 1.0), 1.0 / 3.0, epsilon = 1e-15);
    }

    /// Composite trapezoid on `m` subintervals per cell, Richardson-extrapolated
    /// from `m` and `2m`; exact for the piecewise-quadratic integrand.
    fn trapezoid_oracle(f: &GridFn, g: &GridFn, m: usize) -> f64 {
        let grid = f.grid();
        let trap = |m: usize| {
            let mut acc = 0.0;
            for i in 0..grid.n_nodes() - 1 {
                let (a, h) = (grid.node(i), grid.spacing() / m as f64);
                for k in 0..m {
                    let (x0, x1) = (a + k as f64 * h, a + (k + 1) as f64 * h);
                    acc += 0.5 * h * (f.eval(x0) * g.eval(x0) + f.eval(x1) * g.eval(x1));
                }
            }
            acc
        };
        let (t1, t2) = (trap(m), trap(2 * m));
        t2 + (t2 - t1) / 3.0
    }

    #[test]
    fn inner_product_matches_refined_quadrature() {
        let g = Grid::new(-1.0, 2.0, 37).unwrap();
        let f = GridFn::from_fn(g, |x| (2.3 * x).sin() + 0.2 * x * x);
        let h = GridFn::from_fn(g, |x| (1.1 * x).cos() - x);
        let exact = f.inner(&h);
        let generic = inner_product(&f, &h, -1.0, 2.0);
        let oracle = trapezoid_oracle(&f, &h, 8);
        assert!(((exact - oracle) / oracle).abs() < 1e-10);
        assert!(((generic - oracle) / oracle).abs() < 1e-10);
    }

    #[test]
    fn l1_norm_handles_sign_changes() {
        let f = GridFn::new(unit_grid(2), vec![-1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(f.l1_norm(), 0.5, epsilon = 1e-15);
        let z = GridFn::zeros(unit_grid(2));
        assert_abs_diff_eq!(f.l1_distance(&z), 0.5, epsilon = 1e-15);
        assert_eq!(f.l1_distance(&f), 0.0);
    }

    #[test]
    fn compose_examples() {
        let id = Polyline::identity(0.0, 1.0);
        let t = compose_linear_combo(std::slice::from_ref(&id), &[1.0]).unwrap();
        assert!(t.is_monotone());
        for x in [-1.0, 0.3, 2.0] {
            assert_eq!(t.eval(x), x);
        }
        let one = Polyline::constant(1.0, 0.0, 1.0);
        let t = compose_linear_combo(&[id.clone(), one], &[1.0, 0.2]).unwrap();
        assert!(t.is_monotone());
        assert_abs_diff_eq!(t.eval(0.5), 0.7, epsilon = 1e-15);
        // -2·Id on [0.4, 0.6], flat outside: slope 1 - 2 < 0 there
        let bump = Polyline::new(vec![0.4, 0.6], vec![-0.8, -1.2], 0.0, 0.0).unwrap();
        let t = compose_linear_combo(&[id, bump], &[1.0, 1.0]).unwrap();
        assert!(!t.is_monotone());
        assert!(t.min_slope() < 0.0);
        assert!(compose_linear_combo(&[], &[]).is_err());
        assert!(compose_linear_combo(&[Polyline::identity(0.0, 1.0)], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn one_sided_polyline_slopes_at_kinks() {
        let p = Polyline::new(vec![0.0, 1.0, 2.0], vec![0.0, 1.0, 3.0], 0.5, 4.0).unwrap();
        assert_eq!(p.slope_left(1.0), 1.0);
        assert_eq!(p.slope_right(1.0), 2.0);
        assert_eq!(p.slope_left(0.0), 0.5);
        assert_eq!(p.slope_right(2.0), 4.0);
        assert_eq!(p.slope_left(2.0), 2.0);
    }

    fn monotone_polyline() -> impl Strategy<Value = Polyline> {
        (2usize..20, -3.0f64..3.0, 0.05f64..4.0, 0.05f64..4.0)
            .prop_flat_map(|(n, x0, ls, rs)| {
                (
                    prop::collection::vec(0.01f64..1.0, n - 1),
                    prop::collection::vec(0.01f64..2.0, n - 1),
                    Just((x0, ls, rs)),
                )
            })
            .prop_map(|(dx, dy, (x0, ls, rs))| {
                let mut b = vec![x0];
                let mut o = vec![x0 * 0.5];
                for (a, c) in dx.iter().zip(&dy) {
                    b.push(b.last().unwrap() + a);
                    o.push(o.last().unwrap() + c);
                }
                Polyline::new(b, o, ls, rs).unwrap()
            })
    }

    /// Bisection preimage, independent of the segment search in `invert`.
    fn bisect_preimage(t: &Polyline, y: f64) -> f64 {
        let (mut lo, mut hi) = (-1e3, 1e3);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if t.eval(mid) < y {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    proptest! {
        #[test]
        fn invert_round_trips(t in monotone_polyline(), ys in prop::collection::vec(-10.0f64..10.0, 100)) {
            for y in ys {
                let x = t.invert(y).unwrap();
                let back = t.eval(x);
                prop_assert!((back - y).abs() <= 1e-12 * y.abs().max(1.0));
                let x2 = t.invert(t.eval(y)).unwrap();
                prop_assert!((x2 - y).abs() <= 1e-12 * y.abs().max(1.0));
            }
        }

        #[test]
        fn pullback_matches_dense_oracle(
            t in monotone_polyline(),
            vals in prop::collection::vec(-2.0f64..2.0, 30),
            xs in prop::collection::vec(-6.0f64..6.0, 50),
        ) {
            let xi = GridFn::new(Grid::new(-2.0, 3.0, 30).unwrap(), vals).unwrap();
            for x in xs {
                let got = t.pullback(&xi, x).unwrap();
                let oracle = xi.eval(bisect_preimage(&t, x));
                prop_assert!((got - oracle).abs() < 1e-9, "{got} vs {oracle}");
            }
        }

        #[test]
        fn inner_product_symmetric_positive(
            a in prop::collection::vec(-2.0f64..2.0, 12),
            b in prop::collection::vec(-2.0f64..2.0, 12),
        ) {
            let g = Grid::new(0.0, 3.0, 12).unwrap();
            let f = GridFn::new(g, a).unwrap();
            let h = GridFn::new(g, b).unwrap();
            prop_assert!((f.inner(&h) - h.inner(&f)).abs() < 1e-14);
            if f.max_abs() > 1e-6 {
                prop_assert!(f.inner(&f) > 0.0);
            }
        }

        #[test]
        fn sweep_variants_match_pointwise(t in monotone_polyline(), u in monotone_polyline(), a in -4.0f64..0.0, w in 0.1f64..6.0) {
            let generic = inner_product(&t, &u, a, a + w);
            prop_assert!((t.inner_on(&u, a, a + w) - generic).abs() <= 1e-12 * generic.abs().max(1.0));
            let mut ys: Vec<f64> = (0..40).map(|k| -5.0 + 0.25 * k as f64).collect();
            ys.sort_by(f64::total_cmp);
            for ((y, x), lx) in ys.iter().zip(t.invert_sorted(&ys).unwrap()).zip(t.lower_inverse_sorted(&ys)) {
                prop_assert_eq!(x, t.invert(*y).unwrap());
                prop_assert!((lx - x).abs() <= 1e-12 * x.abs().max(1.0));
            }
        }

        #[test]
        fn breakpoint_pullback_is_exact(t in monotone_polyline(), vals in prop::collection::vec(-2.0f64..2.0, 30)) {
            // x on a breakpoint of T maps back onto the same breakpoint
            let xi = GridFn::new(Grid::new(-2.0, 3.0, 30).unwrap(), vals).unwrap();
            for (&b, &o) in t.breakpoints().iter().zip(t.ordinates()) {
                prop_assert_eq!(t.pullback(&xi, o).unwrap(), xi.eval(b));
            }
        }
    }
}
