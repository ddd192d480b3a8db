//! Observed-data container and propensity clipping bounds.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// The observed sample: outcomes, binary treatment indicators, and covariates.
#[derive(Debug, Clone)]
pub struct ObservationFrame {
    y: DVector<f64>,
    d: DVector<f64>,
    x: DMatrix<f64>,
}

impl ObservationFrame {
    /// Validates and wraps raw observed data.
    ///
    /// Requires matching lengths, `n > p + 1`, finite entries, treatment
    /// indicators exactly 0 or 1, and at least one row in each arm.
    pub fn new(y: DVector<f64>, d: DVector<f64>, x: DMatrix<f64>) -> Result<Self> {
        let n = y.len();
        if d.len() != n || x.nrows() != n {
            return Err(Error::InvalidInput(format!(
                "length mismatch: y has {n} rows, d has {}, x has {}",
                d.len(),
                x.nrows()
            )));
        }
        let p = x.ncols();
        if p == 0 {
            return Err(Error::InvalidInput("covariate matrix must have at least one column".into()));
        }
        if n <= p + 1 {
            return Err(Error::InvalidInput(format!(
                "need n > p + 1 observations, got n={n}, p={p}"
            )));
        }
        if y.iter().any(|v| !v.is_finite()) || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("outcomes and covariates must be finite".into()));
        }
        if d.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidInput("treatment indicators must be exactly 0 or 1".into()));
        }
        let treated = d.iter().filter(|&&v| v == 1.0).count();
        if treated == 0 || treated == n {
            return Err(Error::InvalidInput(format!(
                "both arms must be non-empty, got {treated} treated of {n}"
            )));
        }
        Ok(Self { y, d, x })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn d(&self) -> &DVector<f64> {
        &self.d
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn treated_count(&self) -> usize {
        self.d.iter().filter(|&&v| v == 1.0).count()
    }

    /// Row indices belonging to the given arm.
    pub fn arm_indices(&self, arm: u8) -> Vec<usize> {
        let target = f64::from(arm);
        (0..self.n()).filter(|&i| self.d[i] == target).collect()
    }

    /// A covariate row as a slice-backed vector.
    pub fn x_row(&self, i: usize) -> DVector<f64> {
        self.x.row(i).transpose()
    }

    /// Resamples whole observations by index, revalidating the result (a
    /// resample that empties an arm is rejected).
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidInput("subset index list must be non-empty".into()));
        }
        let p = self.p();
        let mut y = DVector::zeros(indices.len());
        let mut d = DVector::zeros(indices.len());
        let mut x = DMatrix::zeros(indices.len(), p);
        for (row, &i) in indices.iter().enumerate() {
            if i >= self.n() {
                return Err(Error::InvalidInput(format!("subset index {i} out of range")));
            }
            y[row] = self.y[i];
            d[row] = self.d[i];
            for j in 0..p {
                x[(row, j)] = self.x[(i, j)];
            }
        }
        Self::new(y, d, x)
    }
}

/// Symmetric clipping bounds for estimated propensity scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Clip {
    lo: f64,
    hi: f64,
}

impl Clip {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo > 0.0 && lo <= hi && hi < 1.0) {
            return Err(Error::InvalidInput(format!(
                "clip bounds must satisfy 0 < lo <= hi < 1, got ({lo}, {hi})"
            )));
        }
        Ok(Self { lo, hi })
    }

    /// Bounds `(lo, 1 - lo)` for `lo` in (0, 0.5).
    pub fn symmetric(lo: f64) -> Result<Self> {
        if !(lo > 0.0 && lo < 0.5) {
            return Err(Error::InvalidInput(format!(
                "symmetric clip lower bound must lie in (0, 0.5), got {lo}"
            )));
        }
        Self::new(lo, 1.0 - lo)
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn apply(&self, p: f64) -> f64 {
        p.clamp(self.lo, self.hi)
    }
}

impl Default for Clip {
    /// `(0.025, 0.975)`; overlap is assumed in theory but finite samples
    /// need an explicit bound.
    fn default() -> Self {
        Self { lo: 0.025, hi: 0.975 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_frame() -> ObservationFrame {
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let d = DVector::from_vec(vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        let x = DMatrix::from_row_slice(6, 2, &[
            0.1, -0.3, 0.5, 0.2, -0.8, 0.9, 1.1, -1.0, 0.0, 0.4, -0.2, 0.6,
        ]);
        ObservationFrame::new(y, d, x).unwrap()
    }

    #[test]
    fn validation_catches_bad_frames() {
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let x = DMatrix::from_element(4, 1, 0.5);
        // treatment value 2
        let d_bad = DVector::from_vec(vec![0.0, 1.0, 2.0, 0.0]);
        assert!(ObservationFrame::new(y.clone(), d_bad, x.clone()).is_err());
        // all treated
        let d_one = DVector::from_vec(vec![1.0; 4]);
        assert!(ObservationFrame::new(y.clone(), d_one, x.clone()).is_err());
        // non-finite outcome
        let y_nan = DVector::from_vec(vec![1.0, f64::NAN, 3.0, 4.0]);
        let d_ok = DVector::from_vec(vec![0.0, 1.0, 0.0, 1.0]);
        assert!(ObservationFrame::new(y_nan, d_ok.clone(), x.clone()).is_err());
        // n too small relative to p
        let y2 = DVector::from_vec(vec![1.0, 2.0]);
        let d2 = DVector::from_vec(vec![0.0, 1.0]);
        let x2 = DMatrix::from_element(2, 1, 0.5);
        assert!(ObservationFrame::new(y2, d2, x2).is_err());
        assert!(ObservationFrame::new(
            DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]),
            d_ok,
            x
        )
        .is_ok());
    }

    #[test]
    fn subset_resamples_rows() {
        let frame = small_frame();
        let sub = frame.subset(&[1, 1, 2, 3, 4, 5]).unwrap();
        assert_eq!(sub.n(), 6);
        assert_eq!(sub.y()[0], 2.0);
        assert_eq!(sub.y()[1], 2.0);
        assert_eq!(sub.d()[2], 0.0);
        // single-arm resample rejected
        assert!(frame.subset(&[0, 2, 4, 0, 2, 4]).is_err());
        assert!(frame.subset(&[0, 2, 9, 0, 2, 4]).is_err());
    }

    #[test]
    fn clip_bounds() {
        let c = Clip::default();
        assert_eq!(c.apply(0.5), 0.5);
        assert_eq!(c.apply(0.0), 0.025);
        assert_eq!(c.apply(1.0), 0.975);
        assert!(Clip::symmetric(0.6).is_err());
        assert!(Clip::symmetric(0.0).is_err());
        let s = Clip::symmetric(0.01).unwrap();
        assert_eq!(s.hi(), 0.99);
    }
}
