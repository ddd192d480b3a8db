//! Small shared helpers for rank-checked least squares.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative tolerance on the column-pivoted R diagonal for rank decisions.
const RANK_TOL: f64 = 1e-10;

/// Errors with a singular-design message unless `a` has full column rank.
pub(crate) fn check_full_column_rank(a: &DMatrix<f64>, what: &str) -> Result<()> {
    if a.nrows() < a.ncols() {
        return Err(Error::SingularDesign(format!(
            "{what}: fewer rows ({}) than columns ({})",
            a.nrows(),
            a.ncols()
        )));
    }
    let r = nalgebra::linalg::ColPivQR::new(a.clone()).unpack_r();
    let lead = r[(0, 0)].abs();
    if lead == 0.0 {
        return Err(Error::SingularDesign(format!("{what}: zero design matrix")));
    }
    for i in 0..a.ncols() {
        if r[(i, i)].abs() <= RANK_TOL * lead {
            return Err(Error::SingularDesign(format!(
                "{what}: column rank {} < {}",
                i,
                a.ncols()
            )));
        }
    }
    Ok(())
}

/// Least-squares solution of `a c ~ b` by thin QR, after a column-rank check.
pub(crate) fn qr_least_squares(a: &DMatrix<f64>, b: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    check_full_column_rank(a, what)?;
    let qr = a.clone().qr();
    let qtb = qr.q().tr_mul(b);
    qr.r()
        .solve_upper_triangular(&qtb)
        .ok_or_else(|| Error::SingularDesign(format!("{what}: triangular solve failed")))
}
