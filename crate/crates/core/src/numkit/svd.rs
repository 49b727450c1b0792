//! Singular values by one-sided (Hestenes) Jacobi rotations.

use super::{NumError, Tensor};

const MAX_SWEEPS: usize = 100;

/// Singular values of `a`, sorted descending.
///
/// Columns are orthogonalized pairwise by plane rotations until every pair
/// is orthogonal to working precision; the singular values are then the
/// column norms. Wide matrices are transposed first so the working matrix
/// has at least as many rows as columns.
pub fn svd_values(a: &Tensor) -> Result<Vec<f64>, NumError> {
    let (m, n) = a.dims2("svd_values")?;
    if !a.all_finite() {
        return Err(NumError::NonFinite("svd_values"));
    }
    if m == 0 || n == 0 {
        return Ok(Vec::new());
    }
    // Work on columns stored contiguously: cols[j] is column j.
    let (rows, ncols, mut cols) = if m >= n {
        let t = a.transpose()?;
        (m, n, t.into_data())
    } else {
        (n, m, a.data().to_vec())
    };
    let col = |j: usize| j * rows..(j + 1) * rows;

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..ncols {
            for q in (p + 1)..ncols {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for (x, y) in cols[col(p)].iter().zip(&cols[col(q)]) {
                    alpha += x * x;
                    beta += y * y;
                    gamma += x * y;
                }
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..rows {
                    let x = cols[p * rows + i];
                    let y = cols[q * rows + i];
                    cols[p * rows + i] = c * x - s * y;
                    cols[q * rows + i] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut sigma: Vec<f64> = (0..ncols)
        .map(|j| cols[col(j)].iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    sigma.sort_by(|a, b| b.total_cmp(a));
    Ok(sigma)
}
