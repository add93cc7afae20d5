//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Singular values below `RANK_RTOL * sigma_max` count as zero.
pub const RANK_RTOL: f64 = 1e-8;

/// Numerical rank via SVD.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().singular_values();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_RTOL * smax).count()
}

/// Solves a symmetric positive (semi)definite system, falling back to a
/// tiny diagonal shift when Cholesky fails.
pub fn solve_psd(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        return Ok(ch.solve(b));
    }
    let scale = a.diagonal().amax().max(1.0);
    let mut shift = 1e-12 * scale;
    for _ in 0..8 {
        let mut shifted = a.clone();
        for i in 0..a.nrows() {
            shifted[(i, i)] += shift;
        }
        if let Some(ch) = shifted.cholesky() {
            return Ok(ch.solve(b));
        }
        shift *= 100.0;
    }
    a.clone().lu().solve(b).ok_or(Error::Singular("psd solve"))
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc: f64, v| acc.max(v.abs()))
}

/// Writes a matrix as CSV rows.
pub fn write_matrix_csv<W: std::io::Write>(w: W, m: &DMatrix<f64>) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for i in 0..m.nrows() {
        out.write_record(m.row(i).iter().map(|v| format!("{v:.17e}")))?;
    }
    out.flush()?;
    Ok(())
}
