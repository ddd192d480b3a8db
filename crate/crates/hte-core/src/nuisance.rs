//! Parametric nuisance models: propensity score and arm-wise outcome means.
//!
//! The propensity score is fit by Newton-Raphson with step-halving on the
//! log-likelihood; the probit family exists to reproduce the deliberate
//! misspecification arm of the simulation design. Outcome regressions are
//! ordinary least squares on each treatment arm.

use nalgebra::{DMatrix, DVector};

use crate::data::{Clip, ObservationFrame};
use crate::error::{Error, Result};
use crate::linalg::{check_full_column_rank, qr_least_squares};
use crate::normal::{normal_cdf, normal_pdf};

const MAX_NEWTON_ITER: usize = 100;
const GRAD_TOL: f64 = 1e-8;
const SEPARATION_NORM: f64 = 1e3;

/// Link family for the treatment-assignment model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PropensityFamily {
    Logistic,
    Probit,
}

/// Fitted propensity model with intercept-first coefficients.
#[derive(Debug, Clone)]
pub struct PropensityFit {
    pub family: PropensityFamily,
    /// `(p+1)`-vector: intercept, then one slope per covariate.
    pub beta: DVector<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub log_likelihood: f64,
}

/// Feature map for the outcome regressions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureMap {
    /// Intercept plus the raw covariates.
    Linear,
    /// Intercept plus squared covariates only; drops the linear terms so the
    /// misspecification arm is genuinely wrong for a linear truth.
    QuadraticOnly,
}

impl FeatureMap {
    pub fn n_features(&self, p: usize) -> usize {
        p
    }

    pub fn apply(&self, x_row: &[f64]) -> Vec<f64> {
        match self {
            FeatureMap::Linear => x_row.to_vec(),
            FeatureMap::QuadraticOnly => x_row.iter().map(|v| v * v).collect(),
        }
    }
}

/// Fitted arm-wise outcome regression.
#[derive(Debug, Clone)]
pub struct OutcomeFit {
    pub arm: u8,
    /// Intercept followed by one coefficient per mapped feature.
    pub alpha: DVector<f64>,
    pub feature_map: FeatureMap,
}

/// How the nuisance stage of the pipeline is configured; bootstrap resamples
/// refit with the same configuration.
#[derive(Debug, Clone, Copy)]
pub struct NuisanceConfig {
    pub propensity: PropensityFamily,
    pub outcome_map: FeatureMap,
    pub clip: Option<Clip>,
}

impl Default for NuisanceConfig {
    fn default() -> Self {
        Self {
            propensity: PropensityFamily::Logistic,
            outcome_map: FeatureMap::Linear,
            clip: Some(Clip::default()),
        }
    }
}

fn expit(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// log(1 + exp(eta)) without overflow.
fn log1p_exp(eta: f64) -> f64 {
    eta.max(0.0) + (-eta.abs()).exp().ln_1p()
}

fn design_with_intercept(frame: &ObservationFrame) -> DMatrix<f64> {
    let n = frame.n();
    let p = frame.p();
    let mut z = DMatrix::zeros(n, p + 1);
    for i in 0..n {
        z[(i, 0)] = 1.0;
        for j in 0..p {
            z[(i, j + 1)] = frame.x()[(i, j)];
        }
    }
    z
}

/// Compensated accumulator; the gradient tolerance is far below the naive
/// summation error at n ~ 1e5.
#[derive(Clone, Copy, Default)]
struct Kahan {
    sum: f64,
    carry: f64,
}

impl Kahan {
    fn add(&mut self, value: f64) {
        let y = value - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }
}

fn log_likelihood(family: PropensityFamily, eta: &DVector<f64>, d: &DVector<f64>) -> f64 {
    let mut acc = Kahan::default();
    match family {
        PropensityFamily::Logistic => {
            for (&e, &di) in eta.iter().zip(d.iter()) {
                acc.add(di * e - log1p_exp(e));
            }
        }
        PropensityFamily::Probit => {
            for (&e, &di) in eta.iter().zip(d.iter()) {
                let phi = normal_cdf(e).clamp(1e-300, 1.0 - 1e-16);
                acc.add(di * phi.ln() + (1.0 - di) * (1.0 - phi).ln());
            }
        }
    }
    acc.sum
}

/// One Newton/Fisher-scoring pass; returns the per-iteration log-likelihood
/// trace alongside the solution so monotonicity is checkable.
fn newton_fit(
    z: &DMatrix<f64>,
    d: &DVector<f64>,
    family: PropensityFamily,
) -> Result<(DVector<f64>, usize, f64, Vec<f64>)> {
    let n = z.nrows();
    let q = z.ncols();
    let mut beta = DVector::zeros(q);
    let mut eta = z * &beta;
    let mut ll = log_likelihood(family, &eta, d);
    let mut trace = vec![ll];

    for iter in 1..=MAX_NEWTON_ITER {
        let mut grad_acc = vec![Kahan::default(); q];
        let mut weights = DVector::zeros(n);
        for i in 0..n {
            let (score, w) = match family {
                PropensityFamily::Logistic => {
                    let p = expit(eta[i]);
                    (d[i] - p, (p * (1.0 - p)).max(1e-12))
                }
                PropensityFamily::Probit => {
                    let phi = normal_cdf(eta[i]);
                    let dens = normal_pdf(eta[i]);
                    let var = (phi * (1.0 - phi)).max(1e-12);
                    (dens * (d[i] - phi) / var, (dens * dens / var).max(1e-12))
                }
            };
            for j in 0..q {
                grad_acc[j].add(z[(i, j)] * score);
            }
            weights[i] = w;
        }
        let grad = DVector::from_fn(q, |j, _| grad_acc[j].sum);
        if grad.amax() < GRAD_TOL {
            return Ok((beta, iter - 1, ll, trace));
        }

        let mut wz = z.clone();
        for i in 0..n {
            for j in 0..q {
                wz[(i, j)] *= weights[i];
            }
        }
        let hessian = z.tr_mul(&wz);
        let step = match nalgebra::linalg::Cholesky::new(hessian) {
            Some(chol) => chol.solve(&grad),
            None => {
                return Err(Error::NonConvergence {
                    context: "propensity Newton step (information matrix not positive definite)"
                        .into(),
                    iterations: iter,
                    last_iterate: beta.iter().copied().collect(),
                })
            }
        };

        // step-halving keeps the log-likelihood non-decreasing, up to the
        // rounding level of the summed likelihood
        let slack = 1e-12 * (1.0 + ll.abs());
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let candidate = &beta + t * &step;
            let eta_c = z * &candidate;
            let ll_c = log_likelihood(family, &eta_c, d);
            if ll_c >= ll - slack {
                beta = candidate;
                eta = eta_c;
                ll = ll_c;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(Error::NonConvergence {
                context: "propensity Newton step-halving stalled".into(),
                iterations: iter,
                last_iterate: beta.iter().copied().collect(),
            });
        }
        trace.push(ll);

        if beta.norm() > SEPARATION_NORM {
            return Err(Error::NonConvergence {
                context: "propensity quasi-complete separation".into(),
                iterations: iter,
                last_iterate: beta.iter().copied().collect(),
            });
        }
    }
    Err(Error::NonConvergence {
        context: "propensity maximum iterations".into(),
        iterations: MAX_NEWTON_ITER,
        last_iterate: beta.iter().copied().collect(),
    })
}

/// Maximum-likelihood fit of the treatment-assignment model.
pub fn fit_propensity(frame: &ObservationFrame, family: PropensityFamily) -> Result<PropensityFit> {
    let z = design_with_intercept(frame);
    check_full_column_rank(&z, "propensity design")?;
    let (beta, iterations, log_likelihood, _) = newton_fit(&z, frame.d(), family)?;
    Ok(PropensityFit { family, beta, converged: true, iterations, log_likelihood })
}

/// Linear predictor `beta_0 + beta_1' x` for one covariate row.
fn linear_predictor(fit: &PropensityFit, x_row: &[f64]) -> f64 {
    debug_assert_eq!(fit.beta.len(), x_row.len() + 1);
    fit.beta[0]
        + x_row
            .iter()
            .enumerate()
            .map(|(j, v)| fit.beta[j + 1] * v)
            .sum::<f64>()
}

/// Unclipped fitted probability.
pub fn predict_propensity_raw(fit: &PropensityFit, x_row: &[f64]) -> f64 {
    let eta = linear_predictor(fit, x_row);
    match fit.family {
        PropensityFamily::Logistic => expit(eta),
        PropensityFamily::Probit => normal_cdf(eta),
    }
}

/// Fitted probability clamped to the clipping interval.
pub fn predict_propensity(fit: &PropensityFit, x_row: &[f64], clip: Clip) -> f64 {
    clip.apply(predict_propensity_raw(fit, x_row))
}

/// Ordinary least squares on the subsample with `d_i = arm`.
pub fn fit_outcome_arm(frame: &ObservationFrame, arm: u8, feature_map: FeatureMap) -> Result<OutcomeFit> {
    if arm > 1 {
        return Err(Error::InvalidInput(format!("arm must be 0 or 1, got {arm}")));
    }
    let rows = frame.arm_indices(arm);
    let n_features = feature_map.n_features(frame.p());
    if rows.is_empty() {
        return Err(Error::InvalidInput(format!("arm {arm} is empty")));
    }
    if rows.len() <= n_features + 1 {
        return Err(Error::InvalidInput(format!(
            "arm {arm} has {} rows; needs more than {} for the outcome regression",
            rows.len(),
            n_features + 1
        )));
    }
    let mut design = DMatrix::zeros(rows.len(), n_features + 1);
    let mut response = DVector::zeros(rows.len());
    for (r, &i) in rows.iter().enumerate() {
        design[(r, 0)] = 1.0;
        let mapped = feature_map.apply(frame.x().row(i).transpose().as_slice());
        for (j, v) in mapped.iter().enumerate() {
            design[(r, j + 1)] = *v;
        }
        response[r] = frame.y()[i];
    }
    let alpha = qr_least_squares(&design, &response, "outcome design")?;
    Ok(OutcomeFit { arm, alpha, feature_map })
}

/// Applies the feature map and the fitted coefficients to one row.
pub fn predict_outcome(fit: &OutcomeFit, x_row: &[f64]) -> f64 {
    let mapped = fit.feature_map.apply(x_row);
    debug_assert_eq!(fit.alpha.len(), mapped.len() + 1);
    fit.alpha[0]
        + mapped
            .iter()
            .enumerate()
            .map(|(j, v)| fit.alpha[j + 1] * v)
            .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// 100 rows, 30 treated, with a single covariate balanced exactly within
    /// each arm, so the MLE slope is 0 and the intercept is logit(0.3).
    fn intercept_only_frame() -> ObservationFrame {
        let mut y = Vec::new();
        let mut d = Vec::new();
        let mut x = Vec::new();
        for i in 0..100 {
            let treated = i < 30;
            d.push(if treated { 1.0 } else { 0.0 });
            x.push(if i % 2 == 0 { 1.0 } else { -1.0 });
            y.push(0.1 * i as f64);
        }
        ObservationFrame::new(
            DVector::from_vec(y),
            DVector::from_vec(d),
            DMatrix::from_column_slice(100, 1, &x),
        )
        .unwrap()
    }

    #[test]
    fn logistic_intercept_matches_sample_logit() {
        let frame = intercept_only_frame();
        let fit = fit_propensity(&frame, PropensityFamily::Logistic).unwrap();
        assert!(fit.converged);
        let expect = (0.3f64 / 0.7).ln();
        assert!((fit.beta[0] - expect).abs() < 1e-6, "intercept {}", fit.beta[0]);
        assert!(fit.beta[1].abs() < 1e-6);
    }

    #[test]
    fn separation_is_reported() {
        let n = 40;
        let mut y = Vec::new();
        let mut d = Vec::new();
        let mut x = Vec::new();
        for i in 0..n {
            let v = (i as f64 - 19.5) / 200.0; // symmetric, never zero, tight margin
            x.push(v);
            d.push(if v > 0.0 { 1.0 } else { 0.0 });
            y.push(v);
        }
        let frame = ObservationFrame::new(
            DVector::from_vec(y),
            DVector::from_vec(d),
            DMatrix::from_column_slice(n, 1, &x),
        )
        .unwrap();
        match fit_propensity(&frame, PropensityFamily::Logistic) {
            Err(Error::NonConvergence { last_iterate, .. }) => {
                assert_eq!(last_iterate.len(), 2);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn rank_deficient_design_is_reported() {
        let n = 20;
        let mut x = DMatrix::zeros(n, 2);
        let mut d = DVector::zeros(n);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for i in 0..n {
            let v: f64 = StandardNormal.sample(&mut rng);
            x[(i, 0)] = v;
            x[(i, 1)] = 2.0 * v; // duplicate direction
            d[i] = if rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 };
        }
        d[0] = 0.0;
        d[1] = 1.0;
        let frame = ObservationFrame::new(DVector::zeros(n), d, x).unwrap();
        assert!(matches!(
            fit_propensity(&frame, PropensityFamily::Logistic),
            Err(Error::SingularDesign(_))
        ));
    }

    #[test]
    fn newton_log_likelihood_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 400;
        let mut x = DMatrix::zeros(n, 2);
        let mut d = DVector::zeros(n);
        for i in 0..n {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            x[(i, 0)] = a;
            x[(i, 1)] = b;
            let p = expit(0.4 + 1.3 * a - 0.7 * b);
            d[i] = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
        }
        let frame = ObservationFrame::new(DVector::zeros(n), d, x).unwrap();
        for family in [PropensityFamily::Logistic, PropensityFamily::Probit] {
            let z = design_with_intercept(&frame);
            let (_, _, _, trace) = newton_fit(&z, frame.d(), family).unwrap();
            for w in trace.windows(2) {
                let slack = 1e-12 * (1.0 + w[0].abs());
                assert!(w[1] >= w[0] - slack, "log-likelihood decreased: {w:?}");
            }
        }
    }

    #[test]
    fn propensity_predictions() {
        let fit = PropensityFit {
            family: PropensityFamily::Logistic,
            beta: DVector::zeros(4),
            converged: true,
            iterations: 0,
            log_likelihood: 0.0,
        };
        let clip = Clip::default();
        assert_eq!(predict_propensity(&fit, &[1.0, -4.0, 2.2], clip), 0.5);

        let big = PropensityFit {
            family: PropensityFamily::Logistic,
            beta: DVector::from_vec(vec![20.0, 0.0]),
            converged: true,
            iterations: 0,
            log_likelihood: 0.0,
        };
        assert_eq!(predict_propensity(&big, &[0.3], clip), 0.975);

        let eq10 = PropensityFit {
            family: PropensityFamily::Logistic,
            beta: DVector::from_vec(vec![0.0, 1.0, 0.0, -0.5]),
            converged: true,
            iterations: 0,
            log_likelihood: 0.0,
        };
        // predictor 1*1 + 0*0 - 0.5*2 = 0
        assert!((predict_propensity(&eq10, &[1.0, 0.0, 2.0], clip) - 0.5).abs() < 1e-15);
    }

    fn noiseless_frame(n: usize) -> ObservationFrame {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut x = DMatrix::zeros(n, 3);
        let mut y = DVector::zeros(n);
        let mut d = DVector::zeros(n);
        for i in 0..n {
            for j in 0..3 {
                x[(i, j)] = StandardNormal.sample(&mut rng);
            }
            d[i] = if i % 2 == 0 { 1.0 } else { 0.0 };
            y[i] = x[(i, 0)] - 0.5 * x[(i, 1)];
        }
        ObservationFrame::new(y, d, x).unwrap()
    }

    #[test]
    fn ols_recovers_noiseless_linear_truth() {
        let frame = noiseless_frame(60);
        let fit = fit_outcome_arm(&frame, 0, FeatureMap::Linear).unwrap();
        assert!(fit.alpha[0].abs() < 1e-10);
        assert!((fit.alpha[1] - 1.0).abs() < 1e-10);
        assert!((fit.alpha[2] + 0.5).abs() < 1e-10);
        assert!(fit.alpha[3].abs() < 1e-10);
        // interpolation: training responses reproduced exactly
        for &i in frame.arm_indices(0).iter().take(10) {
            let pred = predict_outcome(&fit, frame.x().row(i).transpose().as_slice());
            assert!((pred - frame.y()[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn ols_constant_outcome() {
        let mut frame = noiseless_frame(40);
        frame = ObservationFrame::new(
            DVector::from_element(40, 3.0),
            frame.d().clone(),
            frame.x().clone(),
        )
        .unwrap();
        let fit = fit_outcome_arm(&frame, 1, FeatureMap::Linear).unwrap();
        assert!((fit.alpha[0] - 3.0).abs() < 1e-10);
        for j in 1..4 {
            assert!(fit.alpha[j].abs() < 1e-10);
        }
        assert!((predict_outcome(&fit, &[9.0, -4.0, 0.1]) - 3.0).abs() < 1e-9);
    }

    #[test]
    fn ols_residuals_orthogonal_to_design() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 300;
        let mut x = DMatrix::zeros(n, 3);
        let mut y = DVector::zeros(n);
        let mut d = DVector::zeros(n);
        for i in 0..n {
            for j in 0..3 {
                x[(i, j)] = StandardNormal.sample(&mut rng);
            }
            let noise: f64 = StandardNormal.sample(&mut rng);
            y[i] = 0.3 + x[(i, 0)] - 0.5 * x[(i, 1)] + noise;
            d[i] = if rng.random::<f64>() < 0.4 { 1.0 } else { 0.0 };
        }
        let frame = ObservationFrame::new(y, d, x).unwrap();
        for map in [FeatureMap::Linear, FeatureMap::QuadraticOnly] {
            for arm in [0u8, 1] {
                let fit = fit_outcome_arm(&frame, arm, map).unwrap();
                let rows = frame.arm_indices(arm);
                let m = rows.len();
                let q = fit.alpha.len();
                let mut design = DMatrix::zeros(m, q);
                let mut resid = DVector::zeros(m);
                for (r, &i) in rows.iter().enumerate() {
                    design[(r, 0)] = 1.0;
                    let mapped = map.apply(frame.x().row(i).transpose().as_slice());
                    for (j, v) in mapped.iter().enumerate() {
                        design[(r, j + 1)] = *v;
                    }
                    resid[r] =
                        frame.y()[i] - predict_outcome(&fit, frame.x().row(i).transpose().as_slice());
                }
                let ortho = design.tr_mul(&resid);
                assert!(
                    ortho.amax() < 1e-8 * m as f64,
                    "arm {arm}: |X'r|_inf = {}",
                    ortho.amax()
                );
            }
        }
    }

    #[test]
    fn zero_coefficient_prediction() {
        let fit = OutcomeFit {
            arm: 0,
            alpha: DVector::zeros(4),
            feature_map: FeatureMap::Linear,
        };
        assert_eq!(predict_outcome(&fit, &[1.0, 2.0, 3.0]), 0.0);
        let intercept_only = OutcomeFit {
            arm: 1,
            alpha: DVector::from_vec(vec![2.5, 0.0, 0.0, 0.0]),
            feature_map: FeatureMap::QuadraticOnly,
        };
        assert_eq!(predict_outcome(&intercept_only, &[4.0, -1.0, 0.3]), 2.5);
    }

    #[test]
    fn quadratic_map_squares_features() {
        assert_eq!(FeatureMap::QuadraticOnly.apply(&[2.0, -3.0]), vec![4.0, 9.0]);
        assert_eq!(FeatureMap::Linear.apply(&[2.0, -3.0]), vec![2.0, -3.0]);
    }
}
