//! Online reduced model.
//!
//! A reduced state is `û = Σ β_n T̂♭ζ_n` with `T̂ = Σ α_m v_m`. Every step
//! reads only the point tables of the [`OfflineBundle`], so its cost is
//! `O(N² + NM + M²)` regardless of the full-model grid size. Materializing
//! `T̂` or `û` on the grid happens only in [`reconstruct`].

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{MatsError, Result, StopReason};
use crate::fullmodel::ProblemSpec;
use crate::linalg::Factored;
use crate::offline::{particle_slope, OfflineBundle};
use crate::pwl::{GridFn, Polyline};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineOptions {
    /// Δt / Δx.
    pub lambda: f64,
    /// Apply the transport update as `α += Δt η` with `η` solved from the
    /// displacement quotient, instead of `α += η`.
    pub literal_s2: bool,
    /// Minimum particle gap, in units of the grid spacing.
    pub gap_floor_rel: f64,
    /// Gradient floor factor; the floor is `grad_floor_rel · max|β| · max|ζ'|`.
    pub grad_floor_rel: f64,
}

impl Default for OnlineOptions {
    fn default() -> Self {
        Self { lambda: 0.5, literal_s2: false, gap_floor_rel: 0.1, grad_floor_rel: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedState {
    pub step: usize,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// `T̂(x_i)` for each interpolation point.
    pub particles: Vec<f64>,
}

impl ReducedState {
    /// `T̂ = Σ α_m v_m` as a polyline; `O(#breakpoints)`.
    pub fn t_hat(&self, bundle: &OfflineBundle) -> Result<Polyline> {
        bundle.transport.compose(&self.alpha)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    Advanced(ReducedState),
    Stopped(StopReason),
}

fn mat_vec(a: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    (0..a.nrows()).map(|i| (0..a.ncols()).map(|j| a[(i, j)] * x[j]).sum()).collect()
}

/// The reduced model for one parameter: bundle tables, factored systems and the PDE.
#[derive(Debug, Clone)]
pub struct ReducedModel<'a> {
    bundle: &'a OfflineBundle,
    spec: ProblemSpec,
    opts: OnlineOptions,
    z: Factored,
    vq: Factored,
    dx: f64,
    dt: f64,
    at_left: Vec<bool>,
    at_right: Vec<bool>,
    /// Interpolation point indices sorted by position.
    order: Vec<usize>,
    max_zeta_dx: f64,
}

impl<'a> ReducedModel<'a> {
    pub fn new(bundle: &'a OfflineBundle, spec: &ProblemSpec, opts: OnlineOptions) -> Result<Self> {
        let t = &bundle.tables;
        let z = Factored::new(&t.z, "interpolation matrix Z")?;
        let vq = Factored::new(&t.vq, "transport interpolation matrix Vq")?;
        let dx = bundle.grid.spacing();
        let n_nodes = bundle.grid.n_nodes();
        let xs = bundle.eim_points();
        let mut order: Vec<usize> = (0..xs.len()).collect();
        order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
        let max_zeta_dx = t.zeta_dx_left.iter().chain(t.zeta_dx_right.iter()).fold(0.0_f64, |m, v| m.max(v.abs()));
        Ok(Self {
            bundle,
            spec: spec.clone(),
            dt: opts.lambda * dx,
            opts,
            z,
            vq,
            dx,
            at_left: bundle.eim_nodes.iter().map(|&i| i == 0).collect(),
            at_right: bundle.eim_nodes.iter().map(|&i| i + 1 == n_nodes).collect(),
            order,
            max_zeta_dx,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn bundle(&self) -> &OfflineBundle {
        self.bundle
    }

    /// `α = e₁`, `β_n = (u₀, ζ_n)/(ζ_n, ζ_n)`, particles at the interpolation points.
    pub fn initialize(&self, u0: &GridFn) -> ReducedState {
        let m = self.bundle.n_modes();
        let mut alpha = vec![0.0; m];
        alpha[0] = 1.0;
        let particles = mat_vec(&self.bundle.tables.v_at_x, &alpha);
        ReducedState { step: 0, alpha, beta: self.bundle.project(u0), particles }
    }

    /// `T̂'(x_i^-)`, `T̂'(x_i^+)` at every interpolation point.
    fn map_slopes(&self, alpha: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let t = &self.bundle.tables;
        (mat_vec(&t.vdx_left, alpha), mat_vec(&t.vdx_right, alpha))
    }

    /// Flux coefficients `θ` with `Zθ = -(f_r - f_l)`.
    pub fn flux_coefficients(&self, state: &ReducedState) -> Result<Vec<f64>> {
        let t = &self.bundle.tables;
        let (tdl, _) = self.map_slopes(&state.alpha);
        let u_r = mat_vec(&t.z, &state.beta);
        let du_l = mat_vec(&t.zeta_dx_left, &state.beta);
        let rhs: Vec<f64> = (0..u_r.len())
            .map(|i| {
                let x = state.particles[i];
                let u_l = u_r[i] - du_l[i] / tdl[i] * self.dx;
                -(self.spec.flux(u_r[i], x) - self.spec.flux(u_l, x - self.dx))
            })
            .collect();
        self.z.solve(&rhs)
    }

    /// Source coefficients `ω` with `Zω = ψ(u_*(x_i^k), x_i^k)`.
    pub fn source_coefficients(&self, beta_star: &[f64], particles: &[f64]) -> Result<Vec<f64>> {
        let u = mat_vec(&self.bundle.tables.z, beta_star);
        let rhs: Vec<f64> = u.iter().zip(particles).map(|(&v, &x)| self.spec.source(v, x)).collect();
        self.z.solve(&rhs)
    }

    /// Flux then source update with the transported subspace held fixed.
    pub fn evolve_pde(&self, state: &ReducedState) -> Result<Vec<f64>> {
        let theta = self.flux_coefficients(state)?;
        let lambda = self.opts.lambda;
        let beta_star: Vec<f64> = state.beta.iter().zip(&theta).map(|(b, t)| b + lambda * t).collect();
        if !self.spec.has_source() {
            return Ok(beta_star);
        }
        let omega = self.source_coefficients(&beta_star, &state.particles)?;
        Ok(beta_star.iter().zip(&omega).map(|(b, w)| b + self.dt * w).collect())
    }

    /// New transport coefficients from the evolved coefficients `beta_bar`.
    pub fn update_transport(&self, state: &ReducedState, beta_bar: &[f64]) -> Result<Vec<f64>> {
        let t = &self.bundle.tables;
        let (tdl, tdr) = self.map_slopes(&state.alpha);
        let max_beta = state.beta.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let floor = self.opts.grad_floor_rel * max_beta * self.max_zeta_dx;
        let n = state.beta.len();
        let mut rhs = Vec::with_capacity(self.bundle.q_indices.len());
        for &i in &self.bundle.q_indices {
            let num: f64 = (0..n).map(|k| (beta_bar[k] - state.beta[k]) * t.z[(i, k)]).sum();
            let den = particle_slope(
                i,
                &state.beta,
                &t.zeta_dx_left,
                &t.zeta_dx_right,
                tdl[i],
                tdr[i],
                self.at_left[i],
                self.at_right[i],
            );
            if !(den.abs() >= floor) || den == 0.0 {
                return Err(MatsError::SmallGradient { index: i, value: den, floor });
            }
            rhs.push(-num / den);
        }
        let eta = self.vq.solve(&rhs)?;
        let scale = if self.opts.literal_s2 { self.dt } else { 1.0 };
        Ok(state.alpha.iter().zip(&eta).map(|(a, e)| a + scale * e).collect())
    }

    /// Coefficients in the new transported subspace that match the evolved
    /// solution at the new particles.
    pub fn change_of_basis(&self, state: &ReducedState, beta_bar: &[f64], alpha_next: &[f64]) -> Result<Vec<f64>> {
        let t = &self.bundle.tables;
        let n = beta_bar.len();
        let new_particles = mat_vec(&t.v_at_x, alpha_next);
        let (tdl, tdr) = self.map_slopes(&state.alpha);
        let mut delta = vec![0.0; n];
        for i in 0..n {
            let jump = new_particles[i] - state.particles[i];
            if jump == 0.0 {
                continue;
            }
            let (slope, zd) = if jump > 0.0 { (tdr[i], &t.zeta_dx_right) } else { (tdl[i], &t.zeta_dx_left) };
            let s = jump / slope;
            if slope > 0.0 && s.abs() < self.dx {
                delta[i] = (0..n).map(|k| beta_bar[k] * zd[(i, k)]).sum::<f64>() * s;
            } else {
                // far jump: exact preimage under the old map
                let x_i = self.bundle.grid.node(self.bundle.eim_nodes[i]);
                let xi = self.bundle.transport.local_preimage(&state.alpha, x_i, new_particles[i])?;
                delta[i] = (0..n).map(|k| beta_bar[k] * (self.bundle.local.basis[k].eval(xi) - t.z[(i, k)])).sum();
            }
        }
        let corr = self.z.solve(&delta)?;
        Ok(beta_bar.iter().zip(&corr).map(|(b, c)| b + c).collect())
    }

    /// The stopping checks on a candidate state.
    pub fn check(&self, alpha: &[f64], particles: &[f64]) -> Option<StopReason> {
        let t = &self.bundle.tables;
        let (tdl, tdr) = self.map_slopes(alpha);
        let monitor = mat_vec(&t.monitor_slopes, alpha);
        let all_finite = alpha.iter().chain(particles).all(|v| v.is_finite());
        if !all_finite || tdl.iter().chain(&tdr).chain(&monitor).any(|&s| !(s > 0.0)) {
            return Some(StopReason::NonMonotoneMap);
        }
        let gap_floor = self.opts.gap_floor_rel * self.dx;
        let mut min_gap = f64::INFINITY;
        for w in self.order.windows(2) {
            let gap = particles[w[1]] - particles[w[0]];
            if gap <= 0.0 {
                return Some(StopReason::OrderingViolation);
            }
            min_gap = min_gap.min(gap);
        }
        if min_gap <= gap_floor {
            return Some(StopReason::ParticleCollision);
        }
        None
    }

    /// One full time step: evolve, move the transport, change basis, check.
    pub fn step(&self, state: &ReducedState) -> Result<StepOutcome> {
        let beta_bar = self.evolve_pde(state)?;
        let alpha = match self.update_transport(state, &beta_bar) {
            Ok(a) => a,
            Err(MatsError::SmallGradient { .. }) => return Ok(StepOutcome::Stopped(StopReason::SmallGradient)),
            Err(e) => return Err(e),
        };
        let particles = mat_vec(&self.bundle.tables.v_at_x, &alpha);
        if let Some(reason) = self.check(&alpha, &particles) {
            return Ok(StepOutcome::Stopped(reason));
        }
        let beta = match self.change_of_basis(state, &beta_bar, &alpha) {
            Ok(b) => b,
            Err(MatsError::NotMonotone) => return Ok(StepOutcome::Stopped(StopReason::NonMonotoneMap)),
            Err(e) => return Err(e),
        };
        if beta.iter().any(|b| !b.is_finite()) {
            return Ok(StepOutcome::Stopped(StopReason::NonMonotoneMap));
        }
        Ok(StepOutcome::Advanced(ReducedState { step: state.step + 1, alpha, beta, particles }))
    }

    /// Up to `k` steps from `initial`; `observe` sees every state including the first.
    pub fn run(
        &self,
        initial: ReducedState,
        k: usize,
        mut observe: impl FnMut(&ReducedState),
    ) -> Result<(ReducedState, Option<(usize, StopReason)>)> {
        let mut state = initial;
        observe(&state);
        while state.step < k {
            match self.step(&state)? {
                StepOutcome::Advanced(next) => {
                    state = next;
                    observe(&state);
                }
                StepOutcome::Stopped(reason) => return Ok((state.clone(), Some((state.step, reason)))),
            }
        }
        Ok((state, None))
    }
}

/// `û(x) = Σ β_n ζ_n(T̂⁻¹(x))` at every grid node. Where `T̂` dips away
/// from the particles, the inverse of its running maximum is used.
pub fn reconstruct(state: &ReducedState, bundle: &OfflineBundle) -> Result<GridFn> {
    let t = state.t_hat(bundle)?;
    let grid = bundle.grid;
    let pre = t.lower_inverse_sorted(&grid.nodes());
    let values = pre
        .iter()
        .map(|&xi| bundle.local.basis.iter().zip(&state.beta).map(|(z, b)| b * z.eval(xi)).sum())
        .collect();
    GridFn::new(grid, values)
}
