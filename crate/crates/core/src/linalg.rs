//! Small dense linear algebra on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{MatsError, Result};

/// Eigenpairs of a symmetric matrix, eigenvalues descending. Each eigenvector
/// is sign-normalized so that its largest-magnitude entry is positive.
pub fn sym_eigen_desc(a: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    if n == 0 {
        return (Vec::new(), DMatrix::zeros(0, 0));
    }
    let eig = a.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        let v = eig.eigenvectors.column(i);
        let pivot = v.iter().copied().fold(0.0_f64, |m, x| if x.abs() > m.abs() { x } else { m });
        let s = if pivot < 0.0 { -1.0 } else { 1.0 };
        for r in 0..n {
            vectors[(r, col)] = s * v[r];
        }
    }
    (values, vectors)
}

/// Condition number in the 2-norm.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let sv = a.clone().singular_values();
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// A factored square system reused across many right-hand sides.
#[derive(Debug, Clone)]
pub struct Factored {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    n: usize,
}

impl Factored {
    pub fn new(a: &DMatrix<f64>, what: &str) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(MatsError::DimensionMismatch { expected: a.nrows(), found: a.ncols() });
        }
        let scale = a.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let lu = a.clone().lu();
        let u = lu.u();
        let min_pivot = (0..a.nrows()).map(|i| u[(i, i)].abs()).fold(f64::INFINITY, f64::min);
        if !(min_pivot > 1e-14 * scale) {
            return Err(MatsError::SingularSystem(format!("{what}: pivot {min_pivot:e} vs scale {scale:e}")));
        }
        Ok(Self { lu, n: a.nrows() })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        if rhs.len() != self.n {
            return Err(MatsError::DimensionMismatch { expected: self.n, found: rhs.len() });
        }
        let b = DVector::from_column_slice(rhs);
        self.lu
            .solve(&b)
            .map(|x| x.as_slice().to_vec())
            .ok_or_else(|| MatsError::SingularSystem("LU solve failed".into()))
    }
}

/// One-shot solve of a small square system.
pub fn solve(a: &DMatrix<f64>, rhs: &[f64]) -> Result<Vec<f64>> {
    Factored::new(a, "solve")?.solve(rhs)
}
