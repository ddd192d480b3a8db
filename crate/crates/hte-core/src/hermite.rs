//! Orthonormal Hermite basis for the sieve approximation of the link.
//!
//! The family `h_m` is orthonormal in `L^2(R, v)` with weight
//! `v(x) = exp(-x^2/2)`. Values come from the probabilists' three-term
//! recurrence in normalized form,
//!
//! `h_{m+1}(x) = (x h_m(x) - sqrt(m) h_{m-1}(x)) / sqrt(m+1)`,
//!
//! with `h_0 = (2 pi)^{-1/4}`, which is stable and O(k) per point. First and
//! second derivatives follow from the ladder identities
//! `h_m' = sqrt(m) h_{m-1}` and `h_m'' = sqrt(m (m-1)) h_{m-2}`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Inactive-by-default bound on the Euclidean norm of sieve coefficients.
pub const DEFAULT_COEFF_CAP: f64 = 1e6;

/// Basis values and derivatives at a single point.
#[derive(Debug, Clone)]
pub struct BasisValues {
    /// Truncation parameter; `h`, `dh`, `ddh` all have this length.
    pub k: usize,
    /// `h_0(u), ..., h_{k-1}(u)`.
    pub h: Vec<f64>,
    /// First derivatives.
    pub dh: Vec<f64>,
    /// Second derivatives.
    pub ddh: Vec<f64>,
}

/// Evaluates the first `k` orthonormal basis functions and their first two
/// derivatives at `u`.
pub fn eval_basis(u: f64, k: usize) -> Result<BasisValues> {
    if k == 0 {
        return Err(Error::InvalidInput("truncation k must be >= 1".into()));
    }
    if !u.is_finite() {
        return Err(Error::InvalidInput(format!("basis point must be finite, got {u}")));
    }
    let mut h = vec![0.0; k];
    fill_values(u, &mut h);
    let mut dh = vec![0.0; k];
    let mut ddh = vec![0.0; k];
    for m in 1..k {
        dh[m] = (m as f64).sqrt() * h[m - 1];
    }
    for m in 2..k {
        ddh[m] = ((m * (m - 1)) as f64).sqrt() * h[m - 2];
    }
    Ok(BasisValues { k, h, dh, ddh })
}

/// Fills `buf` with `h_0(u), ..., h_{k-1}(u)` where `k = buf.len()`.
pub(crate) fn fill_values(u: f64, buf: &mut [f64]) {
    let h0 = (2.0 * std::f64::consts::PI).powf(-0.25);
    buf[0] = h0;
    if buf.len() == 1 {
        return;
    }
    buf[1] = u * h0;
    for m in 1..buf.len() - 1 {
        let mf = m as f64;
        buf[m + 1] = (u * buf[m] - mf.sqrt() * buf[m - 1]) / (mf + 1.0).sqrt();
    }
}

/// Sieve coefficients constrained to the ball of radius `cap`.
#[derive(Debug, Clone)]
pub struct LinkCoefficients {
    values: DVector<f64>,
    cap: f64,
}

impl LinkCoefficients {
    /// Wraps a coefficient vector, rejecting it when the norm exceeds `cap`.
    pub fn new(values: DVector<f64>, cap: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("coefficient vector must be non-empty".into()));
        }
        if cap <= 0.0 || cap.is_nan() {
            return Err(Error::InvalidInput(format!("coefficient cap must be positive, got {cap}")));
        }
        if values.iter().any(|c| !c.is_finite()) {
            return Err(Error::Numeric("non-finite sieve coefficient".into()));
        }
        if values.norm() > cap {
            return Err(Error::InvalidInput(format!(
                "coefficient norm {} exceeds cap {}",
                values.norm(),
                cap
            )));
        }
        Ok(Self { values, cap })
    }

    /// Wraps a coefficient vector, rescaling onto the boundary of the ball
    /// when the norm exceeds `cap`.
    pub fn projected(mut values: DVector<f64>, cap: f64) -> Result<Self> {
        if cap <= 0.0 || cap.is_nan() {
            return Err(Error::InvalidInput(format!("coefficient cap must be positive, got {cap}")));
        }
        let norm = values.norm();
        if norm > cap {
            values *= cap / norm;
        }
        Self::new(values, cap)
    }

    pub fn k(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn cap(&self) -> f64 {
        self.cap
    }

    /// Reflects the coefficients through `c_m -> (-1)^m c_m`, the image of
    /// the link under `u -> -u` since `h_m(-u) = (-1)^m h_m(u)`.
    pub fn reflected(&self) -> Self {
        let mut values = self.values.clone();
        for m in (1..values.len()).step_by(2) {
            values[m] = -values[m];
        }
        Self { values, cap: self.cap }
    }
}

/// Evaluates the truncated link `g_k(u) = H(u)^T c`.
pub fn truncated_link_eval(u: f64, coeffs: &LinkCoefficients) -> Result<f64> {
    let basis = eval_basis(u, coeffs.k())?;
    Ok(basis.h.iter().zip(coeffs.values().iter()).map(|(h, c)| h * c).sum())
}

/// Link value and slope `(g_k(u), g_k'(u))` in one recurrence pass.
pub(crate) fn link_and_slope(u: f64, coeffs: &LinkCoefficients, buf: &mut [f64]) -> (f64, f64) {
    debug_assert_eq!(buf.len(), coeffs.k());
    fill_values(u, buf);
    let c = coeffs.values();
    let mut g = 0.0;
    let mut dg = 0.0;
    for m in 0..buf.len() {
        g += c[m] * buf[m];
        if m >= 1 {
            dg += c[m] * (m as f64).sqrt() * buf[m - 1];
        }
    }
    (g, dg)
}

/// Basis design matrix with rows `H(u_i)` for the given index values.
pub fn hermite_design(index_values: &DVector<f64>, k: usize) -> Result<DMatrix<f64>> {
    if k == 0 {
        return Err(Error::InvalidInput("truncation k must be >= 1".into()));
    }
    let n = index_values.len();
    let mut design = DMatrix::zeros(n, k);
    let mut buf = vec![0.0; k];
    for i in 0..n {
        let u = index_values[i];
        if !u.is_finite() {
            return Err(Error::Numeric(format!("non-finite index value at row {i}")));
        }
        fill_values(u, &mut buf);
        for m in 0..k {
            design[(i, m)] = buf[m];
        }
    }
    Ok(design)
}
