//! Browser bindings for a few core operations: full-model snapshots,
//! monotone decompositions and displacement interpolation between two
//! snapshots.

use mats::decompose::monotone_decompose;
use mats::dip::build_dip_map;
use mats::experiments::Case;
use mats::{Grid, GridFn, Polyline};
use wasm_bindgen::prelude::*;

/// Full-model reconstruction at one time on a uniform grid.
#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct Snapshot {
    x_left: f64,
    x_right: f64,
    t_final: f64,
    values: Vec<f64>,
}

#[wasm_bindgen]
impl Snapshot {
    #[wasm_bindgen(getter)]
    pub fn x_left(&self) -> f64 {
        self.x_left
    }

    #[wasm_bindgen(getter)]
    pub fn x_right(&self) -> f64 {
        self.x_right
    }

    /// Final time of the problem, so callers can scale a time slider.
    #[wasm_bindgen(getter)]
    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    #[wasm_bindgen(getter)]
    pub fn values(&self) -> Vec<f64> {
        self.values.clone()
    }
}

/// Signed monotone pieces of a grid function, each evaluated on the grid.
#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct Pieces {
    n_nodes: usize,
    base_value: f64,
    signs: Vec<i8>,
    rows: Vec<f64>,
}

#[wasm_bindgen]
impl Pieces {
    #[wasm_bindgen(getter)]
    pub fn count(&self) -> usize {
        self.signs.len()
    }

    #[wasm_bindgen(getter)]
    pub fn base_value(&self) -> f64 {
        self.base_value
    }

    #[wasm_bindgen(getter)]
    pub fn signs(&self) -> Vec<i8> {
        self.signs.clone()
    }

    /// `γ_j σ_j` at the grid nodes.
    pub fn piece(&self, j: usize) -> Vec<f64> {
        self.rows.get(j * self.n_nodes..(j + 1) * self.n_nodes).map(<[f64]>::to_vec).unwrap_or_default()
    }
}

/// Full-model snapshot of `case` with parameters `mu` at time `t` on `n_nodes` nodes.
#[wasm_bindgen]
pub fn solve(case: &str, mu: Vec<f64>, n_nodes: usize, t: f64) -> Result<Snapshot, JsError> {
    solve_impl(case, &mu, n_nodes, t).map_err(|e| JsError::new(&e))
}

/// Monotone decomposition with flat tolerance `flat_tol_rel · max|u|`.
#[wasm_bindgen]
pub fn decompose(values: Vec<f64>, x_left: f64, x_right: f64, flat_tol_rel: f64) -> Result<Pieces, JsError> {
    decompose_impl(values, x_left, x_right, flat_tol_rel).map_err(|e| JsError::new(&e))
}

/// `u_a ∘ T_s⁻¹` with `T_s = (1 - s) Id + s T`, where `T` is the piecewise
/// transport map from `u_a` to `u_b`. Both snapshots must share a signature.
#[wasm_bindgen]
pub fn interpolate(
    u_a: Vec<f64>,
    u_b: Vec<f64>,
    x_left: f64,
    x_right: f64,
    s: f64,
    flat_tol_rel: f64,
) -> Result<Vec<f64>, JsError> {
    interpolate_impl(u_a, u_b, x_left, x_right, s, flat_tol_rel).map_err(|e| JsError::new(&e))
}

fn solve_impl(case: &str, mu: &[f64], n_nodes: usize, t: f64) -> Result<Snapshot, String> {
    let case = Case::parse(case).ok_or_else(|| format!("unknown case {case}"))?;
    let spec = case.spec(mu).map_err(|e| e.to_string())?;
    let grid = spec.grid(n_nodes).map_err(|e| e.to_string())?;
    let t = t.clamp(0.0, spec.t_final);
    let snaps = mats::fullmodel::solve_full(&spec, grid, &[t]).map_err(|e| e.to_string())?;
    let values = snaps.into_iter().next().map(|s| s.u.into_values()).unwrap_or_default();
    Ok(Snapshot { x_left: spec.x_left, x_right: spec.x_right, t_final: spec.t_final, values })
}

fn grid_fn(values: Vec<f64>, x_left: f64, x_right: f64) -> Result<GridFn, String> {
    let grid = Grid::new(x_left, x_right, values.len()).map_err(|e| e.to_string())?;
    GridFn::new(grid, values).map_err(|e| e.to_string())
}

fn decompose_impl(values: Vec<f64>, x_left: f64, x_right: f64, flat_tol_rel: f64) -> Result<Pieces, String> {
    let u = grid_fn(values, x_left, x_right)?;
    let d = monotone_decompose(&u, flat_tol_rel * u.max_abs()).map_err(|e| e.to_string())?;
    let nodes = u.grid().nodes();
    let rows = d.pieces.iter().flat_map(|p| p.sigma.eval_sorted(&nodes).into_iter().map(move |v| p.gamma * v)).collect();
    Ok(Pieces { n_nodes: nodes.len(), base_value: d.base_value, signs: d.signature().signs, rows })
}

fn interpolate_impl(
    u_a: Vec<f64>,
    u_b: Vec<f64>,
    x_left: f64,
    x_right: f64,
    s: f64,
    flat_tol_rel: f64,
) -> Result<Vec<f64>, String> {
    if u_a.len() != u_b.len() {
        return Err(format!("snapshot lengths differ: {} and {}", u_a.len(), u_b.len()));
    }
    let a = grid_fn(u_a, x_left, x_right)?;
    let b = grid_fn(u_b, x_left, x_right)?;
    let da = monotone_decompose(&a, flat_tol_rel * a.max_abs()).map_err(|e| e.to_string())?;
    let db = monotone_decompose(&b, flat_tol_rel * b.max_abs()).map_err(|e| e.to_string())?;
    let t = build_dip_map(&da, &db).map_err(|e| e.to_string())?;
    let id = Polyline::identity(x_left, x_right);
    let ts = id.scaled(1.0 - s).sub(&t.scaled(-s));
    let nodes = a.grid().nodes();
    let pre = ts.lower_inverse_sorted(&nodes);
    Ok(pre.into_iter().map(|x| a.eval(x)).collect())
}

#[cfg(test)]
mod tests {
    // error paths construct JS values, so they are exercised through the inner functions
    use super::*;

    #[test]
    fn interpolation_endpoints_reproduce_snapshots() {
        let a = solve_impl("burgers_fast", &[120.0, 0.5], 401, 0.0).unwrap();
        let b = solve_impl("burgers_fast", &[120.0, 0.5], 401, 0.2).unwrap();
        let at = |s| interpolate_impl(a.values.clone(), b.values.clone(), a.x_left, a.x_right, s, 1e-3).unwrap();
        let (u0, u1) = (at(0.0), at(1.0));
        let scale = b.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(u0.iter().zip(&a.values).all(|(x, y)| (x - y).abs() < 1e-9));
        let err: f64 = u1.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).sum::<f64>() / u1.len() as f64;
        assert!(err < 1e-2 * scale, "mean error {err}");
    }

    #[test]
    fn pieces_sum_to_the_input() {
        let a = solve_impl("color", &[0.3, 15.0, 3.2], 301, 0.5).unwrap();
        let p = decompose_impl(a.values.clone(), a.x_left, a.x_right, 1e-4).unwrap();
        assert!(p.count() >= 1);
        for (i, v) in a.values.iter().enumerate() {
            let sum: f64 = p.base_value + (0..p.count()).map(|j| p.piece(j)[i]).sum::<f64>();
            assert!((sum - v).abs() < 1e-3 * a.values.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        }
    }

    #[test]
    fn unknown_case_is_rejected() {
        assert!(solve_impl("heat", &[1.0], 10, 0.0).unwrap_err().contains("unknown case"));
    }
}
