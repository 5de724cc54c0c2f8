//! Least-squares helpers shared by Cook's distance and the linear learners.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative pivot size below which a column counts as dependent on the
/// columns before it.
const RANK_TOL: f64 = 1e-9;

pub struct LstsqFit {
    pub coefficients: DVector<f64>,
    /// Thin Q factor of the (row-scaled) design.
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

/// Solves `min sum w_i (y_i - x_i b)^2` by Householder QR of `sqrt(W) X`.
/// `names` labels the design columns for rank-deficiency diagnostics.
pub fn weighted_lstsq(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    weights: Option<&[f64]>,
    names: &[String],
) -> Result<LstsqFit> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::LengthMismatch { left: n, right: y.len() });
    }
    if n < p {
        return Err(Error::InsufficientData(format!("{n} observations for {p} coefficients")));
    }
    let mut xs = x.clone();
    let mut ys = y.clone();
    if let Some(w) = weights {
        if w.len() != n {
            return Err(Error::LengthMismatch { left: n, right: w.len() });
        }
        for (i, &wi) in w.iter().enumerate() {
            if !(wi > 0.0 && wi.is_finite()) {
                return Err(Error::Parameter(format!("weight {wi} at row {i} is not positive")));
            }
            let s = wi.sqrt();
            xs.row_mut(i).scale_mut(s);
            ys[i] *= s;
        }
    }

    let qr = xs.clone().qr();
    let r = qr.r();
    let q = qr.q();
    let dependent: Vec<String> = (0..p)
        .filter(|&j| {
            let norm = xs.column(j).norm();
            norm == 0.0 || r[(j, j)].abs() <= RANK_TOL * norm
        })
        .map(|j| names.get(j).cloned().unwrap_or_else(|| format!("column {j}")))
        .collect();
    if !dependent.is_empty() {
        return Err(Error::RankDeficient { columns: dependent });
    }
    let qty = q.transpose() * &ys;
    let coefficients = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::RankDeficient { columns: names.to_vec() })?;
    Ok(LstsqFit { coefficients, q, r })
}

/// Solves a symmetric positive (semi)definite system, falling back to LU
/// when Cholesky fails.
pub fn solve_spd(a: DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        return Some(ch.solve(b));
    }
    a.lu().solve(b)
}
