//! Offline stage: snapshots, transport modes, local basis, interpolation
//! points and the precomputed point tables the online stage runs on.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::decompose::{check_decompositions, monotone_decompose, Signature};
use crate::dip::build_dip_map;
use crate::error::{MatsError, Result};
use crate::fullmodel::{derivative_snapshots, solve_full, ProblemKind, ProblemSpec};
use crate::linalg::{condition_number, sym_eigen_desc, Factored};
use crate::pwl::{merge_breakpoints, Grid, GridFn, Polyline};

/// Parameter samples and, per sample, the local and additional global times.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingPlan {
    pub specs: Vec<ProblemSpec>,
    pub local_times: Vec<Vec<f64>>,
    pub global_times: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub mu_index: usize,
    pub t_requested: f64,
    /// Time of the full-model step actually used.
    pub t: f64,
    pub u: GridFn,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalSnapshot {
    pub snapshot: Snapshot,
    pub du: GridFn,
    pub dflux: GridFn,
    pub psi: GridFn,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSet {
    pub grid: Grid,
    pub local: Vec<LocalSnapshot>,
    /// Local times first, then the additional global times, for each µ in turn.
    pub global: Vec<Snapshot>,
}

/// Runs the full model once per parameter sample and collects the snapshots.
pub fn collect_snapshots(plan: &SamplingPlan, n_nodes: usize) -> Result<SnapshotSet> {
    if plan.local_times.len() != plan.specs.len() || plan.global_times.len() != plan.specs.len() {
        return Err(MatsError::DimensionMismatch { expected: plan.specs.len(), found: plan.local_times.len() });
    }
    let first = plan.specs.first().ok_or_else(|| MatsError::Config("empty sampling plan".into()))?;
    let grid = first.grid(n_nodes)?;
    let mut local = Vec::new();
    let mut global = Vec::new();
    for (mi, spec) in plan.specs.iter().enumerate() {
        let mut times: Vec<f64> = plan.local_times[mi].iter().chain(&plan.global_times[mi]).copied().collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        let snaps = solve_full(spec, grid, &times)?;
        let find = |t: f64| snaps.iter().find(|s| s.t_requested == t).expect("time was requested");
        for &t in &plan.local_times[mi] {
            let s = find(t);
            let (du, dflux, psi) = derivative_snapshots(&s.u, spec);
            let snapshot = Snapshot { mu_index: mi, t_requested: t, t: s.t_actual, u: s.u.clone() };
            global.push(snapshot.clone());
            local.push(LocalSnapshot { snapshot, du, dflux, psi });
        }
        for &t in &plan.global_times[mi] {
            if plan.local_times[mi].contains(&t) {
                continue;
            }
            let s = find(t);
            global.push(Snapshot { mu_index: mi, t_requested: t, t: s.t_actual, u: s.u.clone() });
        }
    }
    Ok(SnapshotSet { grid, local, global })
}

/// Transport modes `v_1 = Id, v_2, …` stored on one shared breakpoint set.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportBasis {
    pub modes: Vec<Polyline>,
    /// Eigenvalues of the identity-perturbation Gram matrix, descending.
    pub eigenvalues: Vec<f64>,
}

impl TransportBasis {
    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn breakpoints(&self) -> &[f64] {
        self.modes[0].breakpoints()
    }

    /// `T̂ = Σ α_m v_m`.
    pub fn compose(&self, alpha: &[f64]) -> Result<Polyline> {
        if alpha.len() != self.modes.len() {
            return Err(MatsError::DimensionMismatch { expected: self.modes.len(), found: alpha.len() });
        }
        let bp = self.breakpoints().to_vec();
        let mut ord = vec![0.0; bp.len()];
        let (mut ls, mut rs) = (0.0, 0.0);
        for (m, &a) in self.modes.iter().zip(alpha) {
            for (o, v) in ord.iter_mut().zip(m.ordinates()) {
                *o += a * v;
            }
            ls += a * m.left_slope();
            rs += a * m.right_slope();
        }
        Polyline::new(bp, ord, ls, rs)
    }

    /// `T̂(b_j)` at breakpoint `j`.
    fn value_at(&self, alpha: &[f64], j: usize) -> f64 {
        self.modes.iter().zip(alpha).map(|(m, a)| a * m.ordinates()[j]).sum()
    }

    /// A preimage of `y` under `T̂ = Σ α_m v_m`, found by galloping outward
    /// from `x0` and bisecting; reads `O(M log B)` ordinates.
    pub fn local_preimage(&self, alpha: &[f64], x0: f64, y: f64) -> Result<f64> {
        let bp = self.breakpoints();
        let n = bp.len();
        let (first, last) = (self.value_at(alpha, 0), self.value_at(alpha, n - 1));
        let slope = |f: fn(&Polyline) -> f64| self.modes.iter().zip(alpha).map(|(m, a)| a * f(m)).sum::<f64>();
        if y <= first || y >= last {
            let (b, v, s) = if y <= first {
                (bp[0], first, slope(Polyline::left_slope))
            } else {
                (bp[n - 1], last, slope(Polyline::right_slope))
            };
            if !(s > 0.0) {
                return Err(MatsError::NotMonotone);
            }
            return Ok(b + (y - v) / s);
        }
        // invariant once bracketed: value(lo) <= y < value(hi)
        let start = bp.partition_point(|&b| b <= x0).saturating_sub(1).min(n - 2);
        let (mut lo, mut hi);
        let mut step = 1;
        if self.value_at(alpha, start) <= y {
            lo = start;
            hi = (start + 1).min(n - 1);
            while self.value_at(alpha, hi) <= y {
                lo = hi;
                step *= 2;
                hi = (start + step).min(n - 1);
            }
        } else {
            hi = start;
            lo = start.saturating_sub(1);
            while self.value_at(alpha, lo) > y {
                hi = lo;
                step *= 2;
                lo = start.saturating_sub(step);
            }
        }
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if self.value_at(alpha, mid) <= y {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (a, b) = (self.value_at(alpha, lo), self.value_at(alpha, hi));
        Ok(bp[lo] + (bp[hi] - bp[lo]) * ((y - a) / (b - a)))
    }
}

/// Gram matrix `(T_{ℓ+1} - Id, T_{ℓ'+1} - Id)` over `[a, b]`.
pub fn perturbation_gram(maps: &[Polyline], domain: (f64, f64)) -> DMatrix<f64> {
    let id = Polyline::identity(domain.0, domain.1);
    let perts: Vec<Polyline> = maps.iter().skip(1).map(|t| t.sub(&id)).collect();
    gram_of(&perts, domain)
}

fn gram_of(perts: &[Polyline], (a, b): (f64, f64)) -> DMatrix<f64> {
    let l = perts.len();
    let mut c = DMatrix::zeros(l, l);
    for i in 0..l {
        for j in 0..=i {
            let v = perts[i].inner_on(&perts[j], a, b);
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    c
}

/// Transport modes from DIP maps whose first entry is the identity.
pub fn transport_modes(maps: &[Polyline], m: usize, domain: (f64, f64)) -> Result<TransportBasis> {
    if m == 0 {
        return Err(MatsError::Config("need at least one transport mode".into()));
    }
    let (a, b) = domain;
    let id = Polyline::identity(a, b);
    let perts: Vec<Polyline> = maps.iter().skip(1).map(|t| t.sub(&id)).collect();
    let c = gram_of(&perts, domain);
    let trace = c.trace();
    let (vals, vecs) = sym_eigen_desc(c);
    let rank = vals.iter().filter(|&&v| trace > 0.0 && v > 1e-12 * trace).count();
    if m - 1 > rank {
        return Err(MatsError::RankDeficient { requested: m - 1, rank });
    }
    let mut lists: Vec<&[f64]> = perts.iter().map(|p| p.breakpoints()).collect();
    let ends = [a, b];
    lists.push(&ends);
    // breakpoints of different maps that nearly coincide would leave sliver
    // segments whose slopes are pure rounding error
    let min_gap = 1e-9 * (b - a);
    let mut bp: Vec<f64> = Vec::new();
    for x in merge_breakpoints(lists).into_iter().filter(|&x| x >= a && x <= b) {
        match bp.last() {
            Some(&p) if x - p < min_gap && x != b => {}
            Some(&p) if x - p < min_gap && bp.len() > 1 => *bp.last_mut().expect("non-empty") = x,
            _ => bp.push(x),
        }
    }
    let k = m - 1;
    let mut ords = vec![vec![0.0; bp.len()]; k];
    let mut slopes = vec![(0.0, 0.0); k];
    for (l, p) in perts.iter().enumerate() {
        let vals_l = p.eval_sorted(&bp);
        for j in 0..k {
            let w = vecs[(l, j)];
            if w == 0.0 {
                continue;
            }
            for (o, v) in ords[j].iter_mut().zip(&vals_l) {
                *o += w * v;
            }
            slopes[j].0 += w * p.left_slope();
            slopes[j].1 += w * p.right_slope();
        }
    }
    let mut modes = vec![Polyline::new(bp.clone(), bp.clone(), 1.0, 1.0)?];
    for j in 0..k {
        let raw = Polyline::new(bp.clone(), std::mem::take(&mut ords[j]), slopes[j].0, slopes[j].1)?;
        let norm = raw.inner_on(&raw, a, b).sqrt();
        if !(norm > 0.0) {
            return Err(MatsError::RankDeficient { requested: m - 1, rank: j });
        }
        modes.push(raw.scaled(1.0 / norm));
    }
    Ok(TransportBasis { modes, eigenvalues: vals.into_iter().map(|v| v.max(0.0)).collect() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalBasis {
    pub basis: Vec<GridFn>,
    pub singular_values: Vec<f64>,
}

impl LocalBasis {
    pub fn len(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }
}

/// Lumped-free mass matrix product `M v` for the exact L² inner product.
fn mass_apply(v: &[f64], h: f64) -> Vec<f64> {
    let n = v.len();
    let mut out = vec![0.0; n];
    for i in 0..n {
        let mut s = 0.0;
        if i > 0 {
            s += v[i - 1] + 2.0 * v[i];
        }
        if i + 1 < n {
            s += 2.0 * v[i] + v[i + 1];
        }
        out[i] = s * h / 6.0;
    }
    out
}

/// First `n` POD modes by the method of snapshots in the L² inner product.
pub fn local_basis(snapshots: &[GridFn], n: usize) -> Result<LocalBasis> {
    let first = snapshots.first().ok_or_else(|| MatsError::Config("no local snapshots".into()))?;
    let grid = *first.grid();
    let (nd, ns) = (grid.n_nodes(), snapshots.len());
    if n == 0 || n > ns || n > nd {
        return Err(MatsError::RankDeficient { requested: n, rank: ns.min(nd) });
    }
    let s = DMatrix::from_fn(nd, ns, |i, j| snapshots[j].values()[i]);
    let mut ms = DMatrix::zeros(nd, ns);
    for (j, snap) in snapshots.iter().enumerate() {
        let col = mass_apply(snap.values(), grid.spacing());
        ms.column_mut(j).copy_from_slice(&col);
    }
    let g = s.transpose() * &ms;
    let g = (&g + g.transpose()) * 0.5;
    let trace = g.trace();
    let (vals, vecs) = sym_eigen_desc(g);
    let rank = vals.iter().filter(|&&v| trace > 0.0 && v > 1e-12 * trace).count();
    if n > rank {
        return Err(MatsError::RankDeficient { requested: n, rank });
    }
    let mut basis: Vec<GridFn> = Vec::with_capacity(n);
    for (k, v) in vals.iter().enumerate().take(n) {
        let coef = vecs.column(k) / v.sqrt();
        let mut z = GridFn::new(grid, (&s * coef).as_slice().to_vec())?;
        // one Gram-Schmidt pass against rounding in the small eigenvalues
        for prev in &basis {
            let p = z.inner(prev);
            for (zv, pv) in z.values_mut().iter_mut().zip(prev.values()) {
                *zv -= p * pv;
            }
        }
        let nz = z.norm();
        basis.push(z.scaled(1.0 / nz));
    }
    let singular_values = vals.iter().map(|v| v.max(0.0).sqrt()).collect();
    Ok(LocalBasis { basis, singular_values })
}

/// Greedy empirical interpolation over a finite candidate set.
/// `values[n][c]` is basis function `n` at candidate `c`; ties pick the lowest candidate index.
pub fn eim_greedy(values: &[Vec<f64>]) -> Result<Vec<usize>> {
    let n = values.len();
    let mut chosen: Vec<usize> = Vec::with_capacity(n);
    let argmax = |r: &[f64]| {
        let mut best = 0;
        for (c, v) in r.iter().enumerate() {
            if v.abs() > r[best].abs() {
                best = c;
            }
        }
        best
    };
    for i in 0..n {
        let residual: Vec<f64> = if i == 0 {
            values[0].clone()
        } else {
            let a = DMatrix::from_fn(i, i, |r, c| values[c][chosen[r]]);
            let rhs: Vec<f64> = chosen.iter().map(|&c| values[i][c]).collect();
            let theta = Factored::new(&a, "EIM system")
                .and_then(|f| f.solve(&rhs))
                .map_err(|e| MatsError::DegenerateBasis(e.to_string()))?;
            (0..values[i].len())
                .map(|c| values[i][c] - (0..i).map(|k| theta[k] * values[k][c]).sum::<f64>())
                .collect()
        };
        let best = argmax(&residual);
        if residual[best] == 0.0 || chosen.contains(&best) {
            return Err(MatsError::DegenerateBasis(format!("residual vanishes at step {}", i + 1)));
        }
        chosen.push(best);
    }
    Ok(chosen)
}

/// EIM interpolation nodes (grid indices) for the local basis.
pub fn eim_points(basis: &LocalBasis) -> Result<Vec<usize>> {
    if basis.is_empty() {
        return Err(MatsError::DegenerateBasis("empty basis".into()));
    }
    let values: Vec<Vec<f64>> = basis.basis.iter().map(|z| z.values().to_vec()).collect();
    eim_greedy(&values)
}

/// `∂ₓ` of `Σ β_n T̂♭ζ_n` at particle `i`: mean of the two one-sided chain-rule
/// slopes, or the single defined side at a domain end.
#[allow(clippy::too_many_arguments)]
pub(crate) fn particle_slope(
    i: usize,
    beta: &[f64],
    zdl: &DMatrix<f64>,
    zdr: &DMatrix<f64>,
    tdl: f64,
    tdr: f64,
    at_left: bool,
    at_right: bool,
) -> f64 {
    let l: f64 = beta.iter().enumerate().map(|(n, b)| b * zdl[(i, n)]).sum::<f64>() / tdl;
    let r: f64 = beta.iter().enumerate().map(|(n, b)| b * zdr[(i, n)]).sum::<f64>() / tdr;
    match (at_left, at_right) {
        (true, false) => r,
        (false, true) => l,
        _ => 0.5 * (l + r),
    }
}

fn zeta_tables(local: &LocalBasis, grid: &Grid, nodes: &[usize]) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let n = local.len();
    let xs: Vec<f64> = nodes.iter().map(|&i| grid.node(i)).collect();
    let z = DMatrix::from_fn(nodes.len(), n, |i, k| local.basis[k].values()[nodes[i]]);
    let dl = DMatrix::from_fn(nodes.len(), n, |i, k| local.basis[k].slope_left(xs[i]));
    let dr = DMatrix::from_fn(nodes.len(), n, |i, k| local.basis[k].slope_right(xs[i]));
    (z, dl, dr)
}

/// Picks `m` of the interpolation points greedily by `|∂ₓû₀|`; ties go to the lowest index.
pub fn select_q(local: &LocalBasis, grid: &Grid, eim_nodes: &[usize], beta0: &[f64], m: usize) -> Result<Vec<usize>> {
    let n = eim_nodes.len();
    if n <= m {
        return Err(MatsError::AssumptionViolated(format!("need N > M, got N = {n}, M = {m}")));
    }
    let (_, dl, dr) = zeta_tables(local, grid, eim_nodes);
    let amp: Vec<f64> = (0..n)
        .map(|i| {
            let node = eim_nodes[i];
            particle_slope(i, beta0, &dl, &dr, 1.0, 1.0, node == 0, node + 1 == grid.n_nodes()).abs()
        })
        .collect();
    // amplitudes within a relative 1e-12 count as tied
    let mut taken = vec![false; n];
    let mut q = Vec::with_capacity(m);
    for _ in 0..m {
        let mut best: Option<usize> = None;
        for i in (0..n).filter(|&i| !taken[i]) {
            if best.is_none_or(|b| amp[i] > amp[b] * (1.0 + 1e-12) + f64::MIN_POSITIVE) {
                best = Some(i);
            }
        }
        let b = best.expect("n > m candidates");
        taken[b] = true;
        q.push(b);
    }
    Ok(q)
}

/// Values and one-sided derivatives of the bases at the interpolation
/// points, plus the monotonicity monitor; everything the online step reads.
#[derive(Debug, Clone, PartialEq)]
pub struct OnlineTables {
    /// `(i, n) = ζ_n(x_i)`.
    pub z: DMatrix<f64>,
    pub zeta_dx_left: DMatrix<f64>,
    pub zeta_dx_right: DMatrix<f64>,
    /// `(i, m) = v_m(x_i)`.
    pub v_at_x: DMatrix<f64>,
    /// `(i, m)` = chord slope of `v_m` over the grid cell left (right) of `x_i`.
    pub vdx_left: DMatrix<f64>,
    pub vdx_right: DMatrix<f64>,
    /// `(j, m) = v_m(x_{i_j})`.
    pub vq: DMatrix<f64>,
    /// Centres of the grid cells where each `|v_m'|` peaks.
    pub monitor_points: Vec<f64>,
    /// `(p, m)` = chord slope of `v_m` over the grid cell centred at monitor point `p`.
    pub monitor_slopes: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub case: String,
    pub kind: ProblemKind,
    pub lambda: f64,
    pub seed: u64,
    pub rng: String,
    pub flat_tol_rel: f64,
    pub n_local_snapshots: usize,
    pub n_global_snapshots: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineBundle {
    pub meta: BundleMeta,
    pub grid: Grid,
    pub transport: TransportBasis,
    pub local: LocalBasis,
    pub eim_nodes: Vec<usize>,
    pub q_indices: Vec<usize>,
    pub tables: OnlineTables,
}

/// Grid-cell secant slopes of a mode: the chord over `[x - δ, x]` and `[x, x + δ]`.
fn cell_slopes(mode: &Polyline, grid: &Grid, x: f64) -> (f64, f64) {
    let h = grid.spacing();
    let v = mode.eval(x);
    ((v - mode.eval(x - h)) / h, (mode.eval(x + h) - v) / h)
}

/// For every non-identity mode, the grid cell with the steepest chord.
fn monitor(transport: &TransportBasis, grid: &Grid) -> (Vec<f64>, DMatrix<f64>) {
    let nodes = grid.nodes();
    let mut pts: Vec<f64> = Vec::new();
    for mode in transport.modes.iter().skip(1) {
        let vals = mode.eval_sorted(&nodes);
        let best = vals
            .windows(2)
            .enumerate()
            .max_by(|(_, a), (_, b)| (a[1] - a[0]).abs().total_cmp(&(b[1] - b[0]).abs()))
            .map(|(k, _)| k)
            .unwrap_or(0);
        let mid = 0.5 * (nodes[best] + nodes[best + 1]);
        if !pts.contains(&mid) {
            pts.push(mid);
        }
    }
    let h = grid.spacing();
    let slopes = DMatrix::from_fn(pts.len(), transport.n_modes(), |p, m| {
        let mode = &transport.modes[m];
        (mode.eval(pts[p] + 0.5 * h) - mode.eval(pts[p] - 0.5 * h)) / h
    });
    (pts, slopes)
}

impl OfflineBundle {
    pub fn build(
        meta: BundleMeta,
        grid: Grid,
        transport: TransportBasis,
        local: LocalBasis,
        eim_nodes: Vec<usize>,
        q_indices: Vec<usize>,
    ) -> Result<Self> {
        let n = local.len();
        if eim_nodes.len() != n {
            return Err(MatsError::DimensionMismatch { expected: n, found: eim_nodes.len() });
        }
        if local.basis.iter().any(|z| z.grid() != &grid) {
            return Err(MatsError::InvalidGrid("local basis lives on a different grid".into()));
        }
        let m = transport.n_modes();
        if q_indices.len() != m || q_indices.iter().any(|&q| q >= n) {
            return Err(MatsError::DimensionMismatch { expected: m, found: q_indices.len() });
        }
        let xs: Vec<f64> = eim_nodes.iter().map(|&i| grid.node(i)).collect();
        let (z, zeta_dx_left, zeta_dx_right) = zeta_tables(&local, &grid, &eim_nodes);
        let modes = &transport.modes;
        let v_at_x = DMatrix::from_fn(n, m, |i, k| modes[k].eval(xs[i]));
        let chords: Vec<Vec<(f64, f64)>> = modes.iter().map(|v| xs.iter().map(|&x| cell_slopes(v, &grid, x)).collect()).collect();
        let vdx_left = DMatrix::from_fn(n, m, |i, k| chords[k][i].0);
        let vdx_right = DMatrix::from_fn(n, m, |i, k| chords[k][i].1);
        let vq = DMatrix::from_fn(m, m, |j, k| v_at_x[(q_indices[j], k)]);
        let (monitor_points, monitor_slopes) = monitor(&transport, &grid);
        let tables =
            OnlineTables { z, zeta_dx_left, zeta_dx_right, v_at_x, vdx_left, vdx_right, vq, monitor_points, monitor_slopes };
        Ok(Self { meta, grid, transport, local, eim_nodes, q_indices, tables })
    }

    pub fn n_local(&self) -> usize {
        self.local.len()
    }

    pub fn n_modes(&self) -> usize {
        self.transport.n_modes()
    }

    pub fn eim_points(&self) -> Vec<f64> {
        self.eim_nodes.iter().map(|&i| self.grid.node(i)).collect()
    }

    pub fn z_condition(&self) -> f64 {
        condition_number(&self.tables.z)
    }

    pub fn vq_condition(&self) -> f64 {
        condition_number(&self.tables.vq)
    }

    /// `β_n = (u₀, ζ_n) / (ζ_n, ζ_n)`.
    pub fn project(&self, u: &GridFn) -> Vec<f64> {
        self.local.basis.iter().map(|z| u.inner(z) / z.inner(z)).collect()
    }
}

pub const BUNDLE_FORMAT: &str = "mats-bundle";
pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Section {
    name: String,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct BundleHeader {
    format: String,
    version: u32,
    endianness: String,
    float: String,
    meta: BundleMeta,
    grid: Grid,
    n_local: usize,
    n_modes: usize,
    n_breakpoints: usize,
    n_monitor: usize,
    eim_nodes: Vec<usize>,
    q_indices: Vec<usize>,
    sections: Vec<Section>,
}

fn matrix_data(m: &DMatrix<f64>) -> Vec<f64> {
    m.as_slice().to_vec()
}

impl OfflineBundle {
    fn sections(&self) -> Vec<(&'static str, Vec<f64>)> {
        let t = &self.tables;
        let mut ords = Vec::new();
        let mut slopes = Vec::new();
        for mode in &self.transport.modes {
            ords.extend_from_slice(mode.ordinates());
            slopes.push(mode.left_slope());
            slopes.push(mode.right_slope());
        }
        let basis: Vec<f64> = self.local.basis.iter().flat_map(|z| z.values().iter().copied()).collect();
        vec![
            ("mode_breakpoints", self.transport.breakpoints().to_vec()),
            ("mode_ordinates", ords),
            ("mode_end_slopes", slopes),
            ("transport_eigenvalues", self.transport.eigenvalues.clone()),
            ("local_basis", basis),
            ("singular_values", self.local.singular_values.clone()),
            ("z", matrix_data(&t.z)),
            ("zeta_dx_left", matrix_data(&t.zeta_dx_left)),
            ("zeta_dx_right", matrix_data(&t.zeta_dx_right)),
            ("v_at_x", matrix_data(&t.v_at_x)),
            ("vdx_left", matrix_data(&t.vdx_left)),
            ("vdx_right", matrix_data(&t.vdx_right)),
            ("vq", matrix_data(&t.vq)),
            ("monitor_points", t.monitor_points.clone()),
            ("monitor_slopes", matrix_data(&t.monitor_slopes)),
        ]
    }

    /// JSON header line followed by little-endian f64 sections.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let sections = self.sections();
        let header = BundleHeader {
            format: BUNDLE_FORMAT.into(),
            version: BUNDLE_VERSION,
            endianness: "little".into(),
            float: "f64".into(),
            meta: self.meta.clone(),
            grid: self.grid,
            n_local: self.n_local(),
            n_modes: self.n_modes(),
            n_breakpoints: self.transport.breakpoints().len(),
            n_monitor: self.tables.monitor_points.len(),
            eim_nodes: self.eim_nodes.clone(),
            q_indices: self.q_indices.clone(),
            sections: sections.iter().map(|(n, d)| Section { name: (*n).into(), len: d.len() }).collect(),
        };
        let line = serde_json::to_string(&header).map_err(|e| MatsError::Parse(e.to_string()))?;
        w.write_all(line.as_bytes())?;
        w.write_all(b"\n")?;
        for (_, data) in &sections {
            let mut buf = Vec::with_capacity(data.len() * 8);
            for v in data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| MatsError::SchemaMismatch("missing header line".into()))?;
        let header: BundleHeader = serde_json::from_slice(&bytes[..nl])
            .map_err(|e| MatsError::SchemaMismatch(format!("unreadable header: {e}")))?;
        if header.format != BUNDLE_FORMAT || header.version != BUNDLE_VERSION {
            return Err(MatsError::SchemaMismatch(format!(
                "expected {BUNDLE_FORMAT} v{BUNDLE_VERSION}, found {} v{}",
                header.format, header.version
            )));
        }
        if header.endianness != "little" || header.float != "f64" {
            return Err(MatsError::SchemaMismatch(format!("unsupported encoding {} {}", header.endianness, header.float)));
        }
        let (n, m, b, p) = (header.n_local, header.n_modes, header.n_breakpoints, header.n_monitor);
        let nd = header.grid.n_nodes();
        let expected: [(&str, usize); 15] = [
            ("mode_breakpoints", b),
            ("mode_ordinates", m * b),
            ("mode_end_slopes", 2 * m),
            ("transport_eigenvalues", usize::MAX),
            ("local_basis", n * nd),
            ("singular_values", usize::MAX),
            ("z", n * n),
            ("zeta_dx_left", n * n),
            ("zeta_dx_right", n * n),
            ("v_at_x", n * m),
            ("vdx_left", n * m),
            ("vdx_right", n * m),
            ("vq", m * m),
            ("monitor_points", p),
            ("monitor_slopes", p * m),
        ];
        if header.sections.len() != expected.len() {
            return Err(MatsError::SchemaMismatch("unexpected section count".into()));
        }
        let mut data: Vec<Vec<f64>> = Vec::new();
        let mut off = nl + 1;
        for (sec, (name, len)) in header.sections.iter().zip(expected) {
            if sec.name != name || (len != usize::MAX && sec.len != len) {
                return Err(MatsError::SchemaMismatch(format!("section {} (len {}) where {name} expected", sec.name, sec.len)));
            }
            let end = off + 8 * sec.len;
            if end > bytes.len() {
                return Err(MatsError::SchemaMismatch(format!("section {name} truncated")));
            }
            data.push(bytes[off..end].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect());
            off = end;
        }
        if off != bytes.len() {
            return Err(MatsError::SchemaMismatch("trailing bytes after last section".into()));
        }
        let mut it = data.into_iter();
        let mut next = || it.next().expect("section count checked");
        let bp = next();
        let ords = next();
        let slopes = next();
        let eigenvalues = next();
        let modes = (0..m)
            .map(|k| Polyline::new(bp.clone(), ords[k * b..(k + 1) * b].to_vec(), slopes[2 * k], slopes[2 * k + 1]))
            .collect::<Result<Vec<_>>>()?;
        let basis_data = next();
        let grid = Grid::new(header.grid.x_left(), header.grid.x_right(), nd)?;
        let basis = (0..n).map(|k| GridFn::new(grid, basis_data[k * nd..(k + 1) * nd].to_vec())).collect::<Result<Vec<_>>>()?;
        let singular_values = next();
        let mat = |r: usize, c: usize, d: Vec<f64>| DMatrix::from_vec(r, c, d);
        let z = mat(n, n, next());
        let zeta_dx_left = mat(n, n, next());
        let zeta_dx_right = mat(n, n, next());
        let v_at_x = mat(n, m, next());
        let vdx_left = mat(n, m, next());
        let vdx_right = mat(n, m, next());
        let vq = mat(m, m, next());
        let monitor_points = next();
        let monitor_slopes = mat(p, m, next());
        Ok(Self {
            meta: header.meta,
            grid,
            transport: TransportBasis { modes, eigenvalues },
            local: LocalBasis { basis, singular_values },
            eim_nodes: header.eim_nodes,
            q_indices: header.q_indices,
            tables: OnlineTables { z, zeta_dx_left, zeta_dx_right, v_at_x, vdx_left, vdx_right, vq, monitor_points, monitor_slopes },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub n_local: usize,
    pub n_modes: usize,
    /// Flat tolerance relative to each snapshot's max |u|.
    pub flat_tol_rel: f64,
    /// Weights for the u, ∂ₓu, ∂ₓf and ψ local snapshot types.
    pub snapshot_weights: [f64; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineReport {
    pub signature: Signature,
    pub n_local_snapshots: usize,
    pub n_global_snapshots: usize,
    pub transport_eigenvalues: Vec<f64>,
    pub singular_values: Vec<f64>,
    pub z_condition: f64,
    pub vq_condition: f64,
}

/// DIP maps from the reference snapshot `global[0]` to every global snapshot.
pub fn global_dip_maps(set: &SnapshotSet, flat_tol_rel: f64) -> Result<(Vec<Polyline>, Signature)> {
    let decs = set
        .global
        .iter()
        .map(|s| monotone_decompose(&s.u, flat_tol_rel * s.u.max_abs()))
        .collect::<Result<Vec<_>>>()?;
    let check = check_decompositions(&decs);
    if !check.holds {
        return Err(MatsError::SignatureViolation { indices: check.violations.iter().map(|v| v.0).collect() });
    }
    let maps = decs.iter().map(|d| build_dip_map(&decs[0], d)).collect::<Result<Vec<_>>>()?;
    Ok((maps, check.reference))
}

/// The weighted `u, ∂ₓu, ∂ₓf, ψ` functions the local basis is compressed from.
pub fn local_snapshot_functions(set: &SnapshotSet, weights: [f64; 4]) -> Vec<GridFn> {
    let mut out = Vec::with_capacity(4 * set.local.len());
    for l in &set.local {
        for (k, f) in [&l.snapshot.u, &l.du, &l.dflux, &l.psi].into_iter().enumerate() {
            if weights[k] != 0.0 {
                out.push(if weights[k] == 1.0 { f.clone() } else { f.scaled(weights[k]) });
            }
        }
    }
    out
}

/// Interpolation points, `q` selection and table precomputation.
pub fn assemble(set: &SnapshotSet, transport: TransportBasis, local: LocalBasis, meta: BundleMeta) -> Result<OfflineBundle> {
    let eim_nodes = eim_points(&local)?;
    let u0 = &set.global[0].u;
    let beta0: Vec<f64> = local.basis.iter().map(|z| u0.inner(z) / z.inner(z)).collect();
    let q = select_q(&local, &set.grid, &eim_nodes, &beta0, transport.n_modes())?;
    OfflineBundle::build(meta, set.grid, transport, local, eim_nodes, q)
}

fn report(bundle: &OfflineBundle, signature: Signature) -> OfflineReport {
    OfflineReport {
        signature,
        n_local_snapshots: bundle.meta.n_local_snapshots,
        n_global_snapshots: bundle.meta.n_global_snapshots,
        transport_eigenvalues: bundle.transport.eigenvalues.clone(),
        singular_values: bundle.local.singular_values.clone(),
        z_condition: bundle.z_condition(),
        vq_condition: bundle.vq_condition(),
    }
}

/// The whole offline pipeline on an already collected snapshot set.
/// The reference snapshot is `global[0]`.
pub fn train(set: &SnapshotSet, opts: &TrainOptions, meta: BundleMeta) -> Result<(OfflineBundle, OfflineReport)> {
    let grid = set.grid;
    let (maps, signature) = global_dip_maps(set, opts.flat_tol_rel)?;
    let transport = transport_modes(&maps, opts.n_modes, (grid.x_left(), grid.x_right()))?;
    let local_snaps = local_snapshot_functions(set, opts.snapshot_weights);
    let local = local_basis(&local_snaps, opts.n_local)?;
    let meta = BundleMeta { n_local_snapshots: local_snaps.len(), n_global_snapshots: set.global.len(), ..meta };
    let bundle = assemble(set, transport, local, meta)?;
    let report = report(&bundle, signature);
    Ok((bundle, report))
}

/// Trains one bundle per `(N, M)` pair, sharing the DIP maps and the local
/// compression across pairs. Entries with `N ≤ M` or a failed build hold the error.
pub fn train_grid(
    set: &SnapshotSet,
    pairs: &[(usize, usize)],
    opts: &TrainOptions,
    meta: BundleMeta,
) -> Result<Vec<Result<(OfflineBundle, OfflineReport)>>> {
    let grid = set.grid;
    let (maps, signature) = global_dip_maps(set, opts.flat_tol_rel)?;
    let local_snaps = local_snapshot_functions(set, opts.snapshot_weights);
    let n_max = pairs.iter().map(|p| p.0).max().unwrap_or(0);
    let full_local = local_basis(&local_snaps, n_max);
    let meta = BundleMeta { n_local_snapshots: local_snaps.len(), n_global_snapshots: set.global.len(), ..meta };
    Ok(pairs
        .iter()
        .map(|&(n, m)| {
            let local = match &full_local {
                Ok(b) => LocalBasis { basis: b.basis[..n].to_vec(), singular_values: b.singular_values.clone() },
                Err(_) => local_basis(&local_snaps, n)?,
            };
            let transport = transport_modes(&maps, m, (grid.x_left(), grid.x_right()))?;
            let bundle = assemble(set, transport, local, meta.clone())?;
            let r = report(&bundle, signature.clone());
            Ok((bundle, r))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fullmodel::InitialCondition;
    use proptest::prelude::*;

    fn hat(grid: Grid, k: usize) -> GridFn {
        let mut v = vec![0.0; grid.n_nodes()];
        v[k] = 1.0;
        GridFn::new(grid, v).unwrap()
    }

    #[test]
    fn local_basis_of_dependent_pair() {
        let grid = Grid::new(0.0, 1.0, 21).unwrap();
        let phi = GridFn::from_fn(grid, |x| (3.0 * x).sin());
        let err = local_basis(&[phi.clone(), phi.scaled(2.0)], 2).unwrap_err();
        assert!(matches!(err, MatsError::RankDeficient { requested: 2, rank: 1 }));
        let b = local_basis(&[phi.clone(), phi.scaled(2.0)], 1).unwrap();
        let expect = phi.scaled(1.0 / phi.norm());
        for (a, e) in b.basis[0].values().iter().zip(expect.values()) {
            assert!((a.abs() - e.abs()).abs() < 1e-12);
        }
        assert!(b.singular_values[1] < 1e-6 * b.singular_values[0]);
    }

    #[test]
    fn local_basis_is_orthonormal_and_tail_bounded() {
        let grid = Grid::new(0.0, 2.0, 101).unwrap();
        let snaps: Vec<GridFn> = (0..15)
            .map(|k| GridFn::from_fn(grid, |x| (-(x - 0.3 - 0.08 * k as f64).powi(2) * 40.0).exp()))
            .collect();
        let n = 6;
        let b = local_basis(&snaps, n).unwrap();
        for i in 0..n {
            for j in 0..n {
                let g = b.basis[i].inner(&b.basis[j]);
                assert!((g - if i == j { 1.0 } else { 0.0 }).abs() < 1e-10);
            }
        }
        let tail: f64 = b.singular_values[n..].iter().map(|s| s * s).sum::<f64>().sqrt();
        for s in &snaps {
            let mut r = s.clone();
            for z in &b.basis {
                let c = s.inner(z);
                for (rv, zv) in r.values_mut().iter_mut().zip(z.values()) {
                    *rv -= c * zv;
                }
            }
            assert!(r.norm() <= tail * (1.0 + 1e-8));
        }
    }

    #[test]
    fn eim_picks_hat_peaks() {
        let grid = Grid::new(0.0, 1.0, 11).unwrap();
        let lb = LocalBasis { basis: vec![hat(grid, 3)], singular_values: vec![1.0] };
        assert_eq!(eim_points(&lb).unwrap(), vec![3]);
        let lb = LocalBasis { basis: vec![hat(grid, 3), hat(grid, 8)], singular_values: vec![1.0, 1.0] };
        assert_eq!(eim_points(&lb).unwrap(), vec![3, 8]);
        let lb = LocalBasis { basis: vec![hat(grid, 3), hat(grid, 3).scaled(2.0)], singular_values: vec![1.0, 1.0] };
        assert!(matches!(eim_points(&lb), Err(MatsError::DegenerateBasis(_))));
    }

    #[test]
    fn select_q_examples() {
        let grid = Grid::new(0.0, 1.0, 11).unwrap();
        let ramp = GridFn::from_fn(grid, |x| if x <= 0.5 { x } else { 0.5 + 3.0 * (x - 0.5) });
        let lb = LocalBasis { basis: vec![ramp, hat(grid, 1)], singular_values: vec![1.0, 1.0] };
        // slopes at nodes 2 (x=0.2) and 8 (x=0.8): 1 and 3
        let q = select_q(&lb, &grid, &[2, 8], &[1.0, 0.0], 1).unwrap();
        assert_eq!(q, vec![1]);
        let flat = GridFn::from_fn(grid, |x| x);
        let lb = LocalBasis { basis: vec![flat, hat(grid, 9)], singular_values: vec![1.0, 1.0] };
        assert_eq!(select_q(&lb, &grid, &[2, 4, 6], &[1.0, 0.0], 2).unwrap(), vec![0, 1]);
        assert!(matches!(select_q(&lb, &grid, &[2, 4], &[1.0, 0.0], 2), Err(MatsError::AssumptionViolated(_))));
    }

    #[test]
    fn rank_one_perturbations_give_one_mode() {
        let bump = Polyline::new(vec![0.0, 0.3, 0.6, 1.0], vec![0.0, 0.1, 0.1, 0.0], 0.0, 0.0).unwrap();
        let maps: Vec<Polyline> = [0.0, 0.2, -0.5, 1.0]
            .iter()
            .map(|&s| Polyline::identity(0.0, 1.0).sub(&bump.scaled(-s)))
            .collect();
        let tb = transport_modes(&maps, 2, (0.0, 1.0)).unwrap();
        assert!(tb.eigenvalues[1] < 1e-12 * tb.eigenvalues[0]);
        let v2 = &tb.modes[1];
        let nb = bump.inner_on(&bump, 0.0, 1.0).sqrt();
        for x in [0.1, 0.3, 0.45, 0.8] {
            assert!((v2.eval(x).abs() - bump.eval(x) / nb).abs() < 1e-12);
        }
        assert!(matches!(transport_modes(&maps, 3, (0.0, 1.0)), Err(MatsError::RankDeficient { requested: 2, rank: 1 })));
        let one = transport_modes(&maps, 1, (0.0, 1.0)).unwrap();
        assert_eq!(one.n_modes(), 1);
        assert_eq!(one.modes[0].eval(0.37), 0.37);
    }

    proptest! {
        #[test]
        fn local_preimage_matches_full_inverse(
            bumps in prop::collection::vec(prop::collection::vec(-0.2f64..0.2, 9), 2),
            alpha in prop::collection::vec(-1.0f64..1.0, 2),
            x0 in -0.5f64..1.5,
            y in -0.5f64..1.5,
        ) {
            let bp: Vec<f64> = (0..9).map(|k| k as f64 / 8.0).collect();
            let mut modes = vec![Polyline::new(bp.clone(), bp.clone(), 1.0, 1.0).unwrap()];
            for o in &bumps {
                modes.push(Polyline::new(bp.clone(), o.clone(), 0.0, 0.0).unwrap());
            }
            let tb = TransportBasis { modes, eigenvalues: vec![1.0; 3] };
            let a = [1.0, alpha[0], alpha[1]];
            let t = tb.compose(&a).unwrap();
            prop_assume!(t.is_monotone());
            let want = t.invert(y).unwrap();
            let got = tb.local_preimage(&a, x0, y).unwrap();
            prop_assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    fn small_advection_bundle() -> OfflineBundle {
        let spec = ProblemSpec::advection(1.0, 0.0, 2.0, InitialCondition::CosineHump { center: 0.5, half_width: 0.25 }, 1.0);
        let plan = SamplingPlan {
            specs: vec![spec],
            local_times: vec![vec![0.0, 0.02, 0.04]],
            global_times: vec![vec![0.1, 0.2, 0.3]],
        };
        let set = collect_snapshots(&plan, 201).unwrap();
        assert_eq!(set.local.len(), 3);
        assert_eq!(set.global.len(), 6);
        let opts = TrainOptions { n_local: 4, n_modes: 2, flat_tol_rel: 1e-12, snapshot_weights: [1.0; 4] };
        let meta = BundleMeta {
            case: "test".into(),
            kind: ProblemKind::LinearAdvection,
            lambda: 0.5,
            seed: 0,
            rng: "none".into(),
            flat_tol_rel: 1e-12,
            n_local_snapshots: 0,
            n_global_snapshots: 0,
        };
        train(&set, &opts, meta).unwrap().0
    }

    #[test]
    fn bundle_tables_match_definitions_and_round_trip() {
        let b = small_advection_bundle();
        let xs = b.eim_points();
        for (i, &x) in xs.iter().enumerate() {
            for n in 0..b.n_local() {
                assert_eq!(b.tables.z[(i, n)], b.local.basis[n].eval(x));
            }
            for m in 0..b.n_modes() {
                assert_eq!(b.tables.v_at_x[(i, m)], b.transport.modes[m].eval(xs[i]));
            }
        }
        assert!(b.z_condition().is_finite());
        assert!(b.vq_condition().is_finite());
        let mut buf = Vec::new();
        b.write_to(&mut buf).unwrap();
        let back = OfflineBundle::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, b);
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn bundle_version_drift_is_rejected() {
        let b = small_advection_bundle();
        let mut buf = Vec::new();
        b.write_to(&mut buf).unwrap();
        let text = String::from_utf8_lossy(&buf).replacen("\"version\":1", "\"version\":99", 1);
        let err = OfflineBundle::read_from(&mut text.as_bytes()).unwrap_err();
        assert!(matches!(err, MatsError::SchemaMismatch(_)));
    }
}
