//! AIPW pseudo-outcome construction.
//!
//! The transformed response
//!
//! `Yhat_i = D_i (Y_i - mu1_i) / pi_i - (1 - D_i)(Y_i - mu0_i) / (1 - pi_i) + mu1_i - mu0_i`
//!
//! has conditional mean equal to the CATE whenever either the propensity
//! model or the outcome models are correctly specified, and is the response
//! the sieve regression is fit to.

use nalgebra::DVector;

use crate::data::{Clip, ObservationFrame};
use crate::error::{Error, Result};
use crate::nuisance::{predict_outcome, predict_propensity_raw, OutcomeFit, PropensityFit};

/// Pseudo-outcome vector plus a record of how much clipping intervened.
#[derive(Debug, Clone)]
pub struct PseudoOutcome {
    pub values: DVector<f64>,
    /// Bounds applied to the fitted propensities, when enabled.
    pub clip_used: Option<(f64, f64)>,
    /// Number of rows whose fitted propensity was clamped.
    pub n_clipped: usize,
}

impl PseudoOutcome {
    /// Wraps an externally constructed pseudo-outcome vector (simulation
    /// oracles build these from true nuisance values).
    pub fn from_values(values: DVector<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("pseudo-outcome vector must be non-empty".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite pseudo-outcome at row {i}")));
        }
        Ok(Self { values, clip_used: None, n_clipped: 0 })
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }
}

/// Evaluates the AIPW transform row by row.
///
/// Clipping is applied here, not at prediction call sites, so the number of
/// clamped propensities is auditable on the result.
pub fn aipw_pseudo_outcome(
    frame: &ObservationFrame,
    pfit: &PropensityFit,
    ofit0: &OutcomeFit,
    ofit1: &OutcomeFit,
    clip: Option<Clip>,
) -> Result<PseudoOutcome> {
    if ofit0.arm != 0 || ofit1.arm != 1 {
        return Err(Error::InvalidInput(format!(
            "outcome fits must be (arm 0, arm 1), got ({}, {})",
            ofit0.arm, ofit1.arm
        )));
    }
    let n = frame.n();
    let mut values = DVector::zeros(n);
    let mut n_clipped = 0usize;
    let mut row = vec![0.0; frame.p()];
    for i in 0..n {
        for (j, slot) in row.iter_mut().enumerate() {
            *slot = frame.x()[(i, j)];
        }
        let raw = predict_propensity_raw(pfit, &row);
        let pi = match clip {
            Some(c) => {
                let clamped = c.apply(raw);
                if clamped != raw {
                    n_clipped += 1;
                }
                clamped
            }
            None => raw,
        };
        let mu0 = predict_outcome(ofit0, &row);
        let mu1 = predict_outcome(ofit1, &row);
        let d = frame.d()[i];
        let y = frame.y()[i];
        let value = d * (y - mu1) / pi - (1.0 - d) * (y - mu0) / (1.0 - pi) + mu1 - mu0;
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite pseudo-outcome at row {i} (propensity {pi})"
            )));
        }
        values[i] = value;
    }
    Ok(PseudoOutcome {
        values,
        clip_used: clip.map(|c| (c.lo(), c.hi())),
        n_clipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nuisance::{FeatureMap, PropensityFamily};
    use nalgebra::DMatrix;

    fn constant_fits(mu0: f64, mu1: f64) -> (PropensityFit, OutcomeFit, OutcomeFit) {
        let pfit = PropensityFit {
            family: PropensityFamily::Logistic,
            beta: DVector::zeros(2),
            converged: true,
            iterations: 0,
            log_likelihood: 0.0,
        };
        let o0 = OutcomeFit {
            arm: 0,
            alpha: DVector::from_vec(vec![mu0, 0.0]),
            feature_map: FeatureMap::Linear,
        };
        let o1 = OutcomeFit {
            arm: 1,
            alpha: DVector::from_vec(vec![mu1, 0.0]),
            feature_map: FeatureMap::Linear,
        };
        (pfit, o0, o1)
    }

    fn tiny_frame(y: Vec<f64>, d: Vec<f64>) -> ObservationFrame {
        let n = y.len();
        let x = DMatrix::from_fn(n, 1, |i, _| (i as f64 - 1.5) / 3.0);
        ObservationFrame::new(DVector::from_vec(y), DVector::from_vec(d), x).unwrap()
    }

    #[test]
    fn treated_row_formula() {
        // D=1, Y=2, pi=0.5, mu1=1, mu0=0 -> (2-1)/0.5 + 1 - 0 = 3
        let frame = tiny_frame(vec![2.0, 0.0, 0.0, 0.0], vec![1.0, 0.0, 1.0, 0.0]);
        let (pfit, o0, o1) = constant_fits(0.0, 1.0);
        let ps = aipw_pseudo_outcome(&frame, &pfit, &o0, &o1, Some(Clip::default())).unwrap();
        assert!((ps.values[0] - 3.0).abs() < 1e-15);
        // control row: D=0, Y=0 -> -0/0.5 + 1 - 0 = 1
        assert!((ps.values[1] - 1.0).abs() < 1e-15);
        assert_eq!(ps.n_clipped, 0);
        assert_eq!(ps.clip_used, Some((0.025, 0.975)));
    }

    #[test]
    fn exact_outcome_models_make_propensity_irrelevant() {
        // y identical to the arm mean: both residual terms vanish, so the
        // pseudo-outcome equals mu1 - mu0 at any propensity.
        let frame = tiny_frame(vec![4.0, 1.0, 4.0, 1.0, 4.0, 1.0], vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        let (_, o0, o1) = constant_fits(1.0, 4.0);
        for beta0 in [-2.0, 0.0, 1.5] {
            let pfit = PropensityFit {
                family: PropensityFamily::Logistic,
                beta: DVector::from_vec(vec![beta0, 0.0]),
                converged: true,
                iterations: 0,
                log_likelihood: 0.0,
            };
            let ps = aipw_pseudo_outcome(&frame, &pfit, &o0, &o1, Some(Clip::default())).unwrap();
            for i in 0..frame.n() {
                assert!((ps.values[i] - 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn clipping_is_counted() {
        let frame = tiny_frame(vec![1.0, 0.0, 1.0, 0.0], vec![1.0, 0.0, 1.0, 0.0]);
        let pfit = PropensityFit {
            family: PropensityFamily::Logistic,
            beta: DVector::from_vec(vec![30.0, 0.0]),
            converged: true,
            iterations: 0,
            log_likelihood: 0.0,
        };
        let (_, o0, o1) = constant_fits(0.0, 0.0);
        let ps = aipw_pseudo_outcome(&frame, &pfit, &o0, &o1, Some(Clip::default())).unwrap();
        assert_eq!(ps.n_clipped, 4);
        // with clipping disabled the same construction is still finite here
        let raw = aipw_pseudo_outcome(&frame, &pfit, &o0, &o1, None).unwrap();
        assert_eq!(raw.n_clipped, 0);
        assert_eq!(raw.clip_used, None);
    }

    #[test]
    fn unclipped_degenerate_propensity_is_a_numeric_error() {
        let frame = tiny_frame(vec![1.0, 0.0, 1.0, 0.0], vec![1.0, 0.0, 1.0, 0.0]);
        // linear predictor large enough that expit saturates to exactly 1
        let pfit = PropensityFit {
            family: PropensityFamily::Logistic,
            beta: DVector::from_vec(vec![800.0, 0.0]),
            converged: true,
            iterations: 0,
            log_likelihood: 0.0,
        };
        let (_, o0, o1) = constant_fits(0.0, 0.0);
        match aipw_pseudo_outcome(&frame, &pfit, &o0, &o1, None) {
            Err(Error::Numeric(msg)) => assert!(msg.contains("row"), "{msg}"),
            other => panic!("expected numeric error, got {other:?}"),
        }
    }

    #[test]
    fn from_values_validates() {
        assert!(PseudoOutcome::from_values(DVector::from_vec(vec![1.0, f64::NAN])).is_err());
        assert!(PseudoOutcome::from_values(DVector::from_vec(vec![])).is_err());
        let ok = PseudoOutcome::from_values(DVector::from_vec(vec![1.0, -2.0])).unwrap();
        assert_eq!(ok.n(), 2);
    }
}
