//! Small dense linear-algebra helpers shared by the fitters.

use nalgebra::{DMatrix, DVector};

use crate::error::StatsError;

/// Columns that are (numerically) linear combinations of earlier columns.
pub fn collinear_columns(x: &DMatrix<f64>, names: &[String]) -> Vec<String> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut bad = Vec::new();
    for (j, name) in names.iter().enumerate().take(x.ncols()) {
        let col = x.column(j).into_owned();
        let norm = col.norm();
        let mut r = col.clone();
        // Two passes of modified Gram-Schmidt for stability.
        for _ in 0..2 {
            for q in &basis {
                let c = q.dot(&r);
                r -= q * c;
            }
        }
        let rn = r.norm();
        if norm == 0.0 || rn <= 1e-9 * norm {
            bad.push(name.clone());
        } else {
            basis.push(r / rn);
        }
    }
    bad
}

pub fn check_full_rank(x: &DMatrix<f64>, names: &[String]) -> Result<(), StatsError> {
    let bad = collinear_columns(x, names);
    if bad.is_empty() {
        Ok(())
    } else {
        Err(StatsError::Collinear { terms: bad })
    }
}

/// Inverse of a symmetric positive-definite matrix.
pub fn spd_inverse(a: &DMatrix<f64>, names: &[String]) -> Result<DMatrix<f64>, StatsError> {
    a.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| StatsError::Collinear {
            terms: names.to_vec(),
        })
}

/// Solves `a z = b` for symmetric positive-definite `a`.
pub fn spd_solve(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    names: &[String],
) -> Result<DVector<f64>, StatsError> {
    a.clone()
        .cholesky()
        .map(|c| c.solve(b))
        .ok_or_else(|| StatsError::Collinear {
            terms: names.to_vec(),
        })
}

/// Sandwich covariance `bread · meat · bread` from per-cluster score sums.
pub fn cluster_sandwich(bread: &DMatrix<f64>, cluster_scores: &[DVector<f64>]) -> DMatrix<f64> {
    let p = bread.nrows();
    let mut meat = DMatrix::zeros(p, p);
    for u in cluster_scores {
        meat += u * u.transpose();
    }
    let g = cluster_scores.len() as f64;
    let adj = if g > 1.0 { g / (g - 1.0) } else { 1.0 };
    bread * meat * bread * adj
}
