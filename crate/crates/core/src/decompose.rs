//! Monotone decompositions of continuous piecewise-linear functions.
//!
//! A nodal function `u` is split into maximal runs of nodal increments that
//! share a sign. Each run `j` becomes a piece `γ_j σ_j` where `σ_j` rises
//! from 0 to 1 across the run's support and is clamped outside it, so that
//! `u(x) = u(x_left) + Σ γ_j σ_j(x)`.
//!
//! Increments within `flat_tol` of zero are flat. Flat runs at either end
//! of the domain are pieces of sign 0 whose `σ_j` is the linear ramp across
//! the run; `γ_j` keeps the run's (tiny) total increment. Interior flat runs
//! are absorbed into the preceding monotone piece, whose profile is clamped
//! to stay monotone, so the identity holds to within `flat_tol` per node and
//! exactly when `flat_tol = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{MatsError, Result};
use crate::pwl::{GridFn, Polyline};

#[derive(Debug, Clone, PartialEq)]
pub struct Piece {
    pub gamma: f64,
    pub sign: i8,
    /// Profile rising from 0 at `support.0` to 1 at `support.1`, constant outside.
    pub sigma: Polyline,
    pub support: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneDecomposition {
    pub base_point: f64,
    pub base_value: f64,
    pub pieces: Vec<Piece>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signature {
    pub base_point: f64,
    pub signs: Vec<i8>,
}

impl std::fmt::Display for Signature {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s: Vec<String> = self.signs.iter().map(|v| format!("{v:+}").replace("+0", "0")).collect();
        write!(f, "({})", s.join(", "))
    }
}

/// Default flat tolerance: `1e-12 · max|u|`.
pub fn default_flat_tol(u: &GridFn) -> f64 {
    1e-12 * u.max_abs()
}

fn increment_sign(d: f64, flat_tol: f64) -> i8 {
    if d.abs() <= flat_tol {
        0
    } else if d > 0.0 {
        1
    } else {
        -1
    }
}

/// Maximal runs `(first_node, last_node, sign)` of equal increment sign,
/// before interior flat runs are absorbed.
pub fn sign_runs(values: &[f64], flat_tol: f64) -> Vec<(usize, usize, i8)> {
    let mut runs = Vec::new();
    let mut start = 0;
    let mut cur = None;
    for i in 0..values.len().saturating_sub(1) {
        let s = increment_sign(values[i + 1] - values[i], flat_tol);
        match cur {
            Some(c) if c == s => {}
            Some(c) => {
                runs.push((start, i, c));
                start = i;
                cur = Some(s);
            }
            None => cur = Some(s),
        }
    }
    if let Some(c) = cur {
        runs.push((start, values.len() - 1, c));
    }
    runs
}

/// Runs of [`sign_runs`] with interior flat runs merged into their
/// predecessor, and same-sign neighbours joined.
pub fn piece_runs(values: &[f64], flat_tol: f64) -> Vec<(usize, usize, i8)> {
    let raw = sign_runs(values, flat_tol);
    let last = raw.len().saturating_sub(1);
    let mut out: Vec<(usize, usize, i8)> = Vec::with_capacity(raw.len());
    for (k, &(s, e, sign)) in raw.iter().enumerate() {
        match out.last_mut() {
            Some(prev) if (sign == 0 && k != last) || prev.2 == sign => prev.1 = e,
            _ => out.push((s, e, sign)),
        }
    }
    out
}

pub fn monotone_decompose(u: &GridFn, flat_tol: f64) -> Result<MonotoneDecomposition> {
    let grid = u.grid();
    let b = u.values();
    if b.len() < 2 {
        return Err(MatsError::EmptyFunction);
    }
    let mut pieces = Vec::new();
    for (s, e, sign) in piece_runs(b, flat_tol) {
        let xs: Vec<f64> = (s..=e).map(|i| grid.node(i)).collect();
        let gamma = b[e] - b[s];
        let ords: Vec<f64> = if sign == 0 {
            let (a, w) = (xs[0], xs[xs.len() - 1] - xs[0]);
            xs.iter().map(|&x| (x - a) / w).collect()
        } else {
            let mut acc = 0.0_f64;
            (s..=e)
                .map(|i| {
                    acc = acc.max((b[i] - b[s]) / gamma).min(1.0);
                    acc
                })
                .collect()
        };
        let mut ords = ords;
        let last = ords.len() - 1;
        ords[0] = 0.0;
        ords[last] = 1.0;
        let support = (xs[0], xs[last]);
        let sigma = Polyline::new(xs, ords, 0.0, 0.0)?;
        pieces.push(Piece { gamma, sign, sigma, support });
    }
    Ok(MonotoneDecomposition { base_point: grid.x_left(), base_value: b[0], pieces })
}

impl MonotoneDecomposition {
    pub fn n_pieces(&self) -> usize {
        self.pieces.len()
    }

    pub fn signature(&self) -> Signature {
        Signature { base_point: self.base_point, signs: self.pieces.iter().map(|p| p.sign).collect() }
    }

    /// `base_value + Σ γ_j σ_j(x)`.
    pub fn eval(&self, x: f64) -> f64 {
        self.base_value + self.pieces.iter().map(|p| p.gamma * p.sigma.eval(x)).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignatureCheck {
    pub holds: bool,
    pub reference: Signature,
    pub violations: Vec<(usize, Signature)>,
}

pub fn check_signature_condition(snapshots: &[GridFn], flat_tol: f64) -> Result<SignatureCheck> {
    let decs = snapshots.iter().map(|u| monotone_decompose(u, flat_tol)).collect::<Result<Vec<_>>>()?;
    Ok(check_decompositions(&decs))
}

/// Signature check over already-computed decompositions.
pub fn check_decompositions(decs: &[MonotoneDecomposition]) -> SignatureCheck {
    let reference = decs.first().map(|d| d.signature()).unwrap_or(Signature { base_point: 0.0, signs: vec![] });
    let violations: Vec<(usize, Signature)> = decs
        .iter()
        .enumerate()
        .map(|(i, d)| (i, d.signature()))
        .filter(|(_, s)| *s != reference)
        .collect();
    SignatureCheck { holds: violations.is_empty(), reference, violations }
}
