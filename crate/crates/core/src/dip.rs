//! Displacement interpolation by pieces (DIP): transport maps between two
//! snapshots that share a signature, assembled from per-piece monotone
//! rearrangements `R_j = σ_j,target⁻¹ ∘ σ_j,ref`.

use crate::decompose::MonotoneDecomposition;
use crate::error::{MatsError, Result};
use crate::pwl::{merge_breakpoints, Polyline};

#[derive(Debug, Clone, PartialEq)]
pub struct DipMap {
    pub map: Polyline,
    pub source_index: usize,
    pub target_index: usize,
}

/// Minimum separation of the profile levels used to sample a rearrangement.
const LEVEL_GAP: f64 = 1e-11;

fn check_profile(sigma: &Polyline, which: &str) -> Result<()> {
    let o = sigma.ordinates();
    if o[0] != 0.0 || o[o.len() - 1] != 1.0 {
        return Err(MatsError::PieceMismatch(format!(
            "{which} profile spans [{}, {}] instead of [0, 1]",
            o[0],
            o[o.len() - 1]
        )));
    }
    Ok(())
}

/// Points `(x, R(x))` of the rearrangement on the merged level set, filtered
/// so both coordinates are strictly increasing.
fn rearrangement_points(sigma_ref: &Polyline, sigma_tgt: &Polyline) -> Result<(Vec<f64>, Vec<f64>)> {
    check_profile(sigma_ref, "reference")?;
    check_profile(sigma_tgt, "target")?;
    let merged = merge_breakpoints([sigma_ref.ordinates(), sigma_tgt.ordinates()]);
    // near-coincident levels would leave rounding-sized segments with meaningless slopes
    let mut levels: Vec<f64> = Vec::with_capacity(merged.len());
    for &y in &merged {
        match levels.last() {
            Some(&p) if y - p < LEVEL_GAP && y != 1.0 => {}
            Some(&p) if y - p < LEVEL_GAP && levels.len() > 1 => *levels.last_mut().expect("non-empty") = y,
            _ => levels.push(y),
        }
    }
    let mut xs = Vec::with_capacity(levels.len());
    let mut ys = Vec::with_capacity(levels.len());
    let n = levels.len();
    let (br, bt) = (sigma_ref.breakpoints(), sigma_tgt.breakpoints());
    for (k, &y) in levels.iter().enumerate() {
        // levels 0 and 1 map to the support ends even if a profile plateaus there
        let (x, r) = if k == 0 {
            (br[0], bt[0])
        } else if k + 1 == n {
            (br[br.len() - 1], bt[bt.len() - 1])
        } else {
            (sigma_ref.generalized_inverse(y)?, sigma_tgt.generalized_inverse(y)?)
        };
        if let (Some(&px), Some(&pr)) = (xs.last(), ys.last()) {
            if !(x > px && r > pr) {
                if k + 1 == n {
                    // keep the exact end point, drop the near-duplicate before it
                    xs.pop();
                    ys.pop();
                } else {
                    continue;
                }
            }
        }
        xs.push(x);
        ys.push(r);
    }
    if xs.len() < 2 {
        return Err(MatsError::PieceMismatch("rearrangement collapsed to a point".into()));
    }
    Ok((xs, ys))
}

/// `x ↦ σ_target⁻¹(σ_ref(x))` on the reference support, extended linearly
/// with its end-segment slopes.
pub fn rearrangement(sigma_ref: &Polyline, sigma_target: &Polyline, support_ref: (f64, f64)) -> Result<Polyline> {
    let (xs, ys) = rearrangement_points(sigma_ref, sigma_target)?;
    if xs[0] != support_ref.0 || xs[xs.len() - 1] != support_ref.1 {
        return Err(MatsError::PieceMismatch(format!(
            "reference profile covers [{}, {}], expected [{}, {}]",
            xs[0],
            xs[xs.len() - 1],
            support_ref.0,
            support_ref.1
        )));
    }
    polyline_with_end_slopes(xs, ys)
}

fn polyline_with_end_slopes(xs: Vec<f64>, ys: Vec<f64>) -> Result<Polyline> {
    let n = xs.len() - 1;
    let ls = (ys[1] - ys[0]) / (xs[1] - xs[0]);
    let rs = (ys[n] - ys[n - 1]) / (xs[n] - xs[n - 1]);
    Polyline::new(xs, ys, ls, rs)
}

/// DIP map from `reference` to `target`.
pub fn build_dip_map(reference: &MonotoneDecomposition, target: &MonotoneDecomposition) -> Result<Polyline> {
    let (sr, st) = (reference.signature(), target.signature());
    if sr != st {
        return Err(MatsError::SignatureMismatch { reference: sr.signs, target: st.signs });
    }
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for (pr, pt) in reference.pieces.iter().zip(&target.pieces) {
        let (px, py) = rearrangement_points(&pr.sigma, &pt.sigma)?;
        let skip = match (xs.last(), ys.last()) {
            (Some(&lx), Some(&ly)) => {
                // adjacent supports share their junction node
                if px[0] != lx || py[0] != ly {
                    return Err(MatsError::PieceMismatch(format!("pieces do not tile at x = {lx}")));
                }
                1
            }
            _ => 0,
        };
        xs.extend_from_slice(&px[skip..]);
        ys.extend_from_slice(&py[skip..]);
    }
    let map = polyline_with_end_slopes(xs, ys)?;
    if !map.is_monotone() {
        return Err(MatsError::NonMonotoneResult);
    }
    Ok(map)
}

/// DIP maps from `decs[reference]` to every entry of `decs`.
pub fn build_dip_maps(decs: &[MonotoneDecomposition], reference: usize) -> Result<Vec<DipMap>> {
    decs.iter()
        .enumerate()
        .map(|(l, d)| {
            Ok(DipMap { map: build_dip_map(&decs[reference], d)?, source_index: reference, target_index: l })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decompose::monotone_decompose;
    use crate::fullmodel::ProblemSpec;
    use crate::pwl::{Grid, GridFn};
    use proptest::prelude::*;

    fn profile(bp: Vec<f64>, increments: &[f64]) -> Polyline {
        let total: f64 = increments.iter().sum();
        let mut o = vec![0.0];
        let mut acc = 0.0;
        for d in increments {
            acc += d;
            o.push(acc / total);
        }
        *o.last_mut().unwrap() = 1.0;
        Polyline::new(bp, o, 0.0, 0.0).unwrap()
    }

    #[test]
    fn self_rearrangement_is_identity() {
        let s = profile(vec![0.0, 0.3, 0.5, 1.0], &[1.0, 3.0, 0.5]);
        let r = rearrangement(&s, &s, (0.0, 1.0)).unwrap();
        assert_eq!(r.breakpoints(), r.ordinates());
        assert_eq!(r.eval(0.77), 0.77);
    }

    #[test]
    fn shifted_profile_gives_shift() {
        let s = profile(vec![0.0, 0.3, 0.5, 1.0], &[1.0, 3.0, 0.5]);
        let t = profile(vec![0.25, 0.55, 0.75, 1.25], &[1.0, 3.0, 0.5]);
        let r = rearrangement(&s, &t, (0.0, 1.0)).unwrap();
        for x in [0.0, 0.1, 0.3, 0.42, 1.0, 1.5, -0.5] {
            assert!((r.eval(x) - (x + 0.25)).abs() < 1e-14);
        }
    }

    #[test]
    fn profile_range_is_checked() {
        let s = profile(vec![0.0, 0.5, 1.0], &[1.0, 1.0]);
        let bad = Polyline::new(vec![0.0, 1.0], vec![0.0, 0.5], 0.0, 0.0).unwrap();
        assert!(matches!(rearrangement(&s, &bad, (0.0, 1.0)), Err(MatsError::PieceMismatch(_))));
    }

    #[test]
    fn self_map_is_identity_and_translation_is_recovered() {
        let spec = ProblemSpec::advection_hump();
        let grid = spec.grid(1001).unwrap();
        let u0 = GridFn::from_fn(grid, |x| spec.u0(x));
        let d0 = monotone_decompose(&u0, 1e-14).unwrap();
        let id = build_dip_map(&d0, &d0).unwrap();
        for &x in &grid.nodes() {
            assert!((id.eval(x) - x).abs() < 1e-12);
        }
        // shift by a whole number of cells keeps the snapshot exactly grid-aligned
        let s = 100.0 * grid.spacing();
        let u1 = GridFn::from_fn(grid, |x| spec.u0(x - s));
        let d1 = monotone_decompose(&u1, 1e-14).unwrap();
        let t = build_dip_map(&d0, &d1).unwrap();
        for &x in grid.nodes().iter().filter(|&&x| (x - 1.0).abs() < 0.5) {
            assert!((t.eval(x) - (x + s)).abs() < 1e-12, "x = {x}");
        }
        assert_eq!(t.eval(0.0), 0.0);
        assert_eq!(t.eval(5.0), 5.0);
        let neg = u0.scaled(-1.0);
        let dn = monotone_decompose(&neg, 1e-14).unwrap();
        assert!(matches!(build_dip_map(&d0, &dn), Err(MatsError::SignatureMismatch { .. })));
    }

    #[test]
    fn translations_compose() {
        let spec = ProblemSpec::advection_hump();
        let grid = spec.grid(801).unwrap();
        let d = grid.spacing();
        let decs: Vec<_> = [0.0, 37.0 * d, 90.0 * d]
            .iter()
            .map(|&s| monotone_decompose(&GridFn::from_fn(grid, |x| spec.u0(x - s)), 1e-14).unwrap())
            .collect();
        let t12 = build_dip_map(&decs[0], &decs[1]).unwrap();
        let t13 = build_dip_map(&decs[0], &decs[2]).unwrap();
        for &x in grid.nodes().iter().filter(|&&x| (x - 1.0).abs() < 0.45) {
            assert!((t13.eval(x) - (t12.eval(x) + 53.0 * d)).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn rearrangement_satisfies_defining_identity(
            a in prop::collection::vec(0.01f64..1.0, 1..20),
            b in prop::collection::vec(0.01f64..1.0, 1..20),
            shift in -0.5f64..0.5,
        ) {
            let ga = Grid::new(0.0, 1.0, a.len() + 1).unwrap();
            let gb = Grid::new(shift, shift + 0.7, b.len() + 1).unwrap();
            let sa = profile(ga.nodes(), &a);
            let sb = profile(gb.nodes(), &b);
            let r = rearrangement(&sa, &sb, (0.0, 1.0)).unwrap();
            prop_assert!(r.is_monotone());
            for k in 0..200 {
                let x = k as f64 / 199.0;
                prop_assert!((sb.eval(r.eval(x)) - sa.eval(x)).abs() < 1e-10);
            }
        }
    }
}
