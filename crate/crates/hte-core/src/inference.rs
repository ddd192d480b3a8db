//! Plug-in sandwich covariances and pairs-bootstrap inference.
//!
//! The index estimate is asymptotically normal only on the tangent space of
//! the unit sphere: with `V` an orthonormal basis of the orthogonal
//! complement of gamma, `sqrt(n) V' (gamma_hat - gamma)` has covariance
//! `sigma^2 (V' Sigma_Gamma V)^{-1}`. Sieve coefficients have the sandwich
//! covariance `sigma^2 Sigma_B^{-1} Sigma_C Sigma_B^{-1}` with
//! `Sigma_C = Sigma_B + Sigma_D V (V' Sigma_Gamma V)^{-1} V' Sigma_D'`:
//! the bread is the derivative of the coefficient estimating equation, which
//! is the Gram matrix of the basis itself. (`Sigma_A`, the Gram matrix of
//! the basis derivatives, is computed and reported alongside; its first row
//! is identically zero because the constant basis function has zero
//! derivative, so it cannot serve as the bread.)
//! These plug-ins treat the truncation as fixed, so they are a fixed-k
//! approximation; the pairs bootstrap refits the entire pipeline (nuisances,
//! pseudo-outcomes, sieve) on each resample and is the primary error
//! estimate.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::ObservationFrame;
use crate::error::{Error, Result};
use crate::estimator::{fit_single_index, FitOptions, SingleIndexFit, Truncation};
use crate::hermite::eval_basis;
use crate::normal::normal_quantile;
use crate::nuisance::{fit_outcome_arm, fit_propensity, NuisanceConfig};
use crate::pseudo::aipw_pseudo_outcome;
use crate::seeding::derive_seed;

/// Orthonormal basis of the orthogonal complement of a unit vector.
#[derive(Debug, Clone)]
pub struct ProjectionBasis {
    /// `p x (p-1)` matrix with orthonormal columns spanning `gamma`-perp.
    pub v: DMatrix<f64>,
}

/// Builds the tangent-space basis by completing `gamma` to an orthonormal
/// frame with a Householder reflector and dropping the `gamma` column.
pub fn projection_basis(gamma: &DVector<f64>) -> Result<ProjectionBasis> {
    let p = gamma.len();
    if p == 0 {
        return Err(Error::InvalidInput("gamma must be non-empty".into()));
    }
    if (gamma.norm() - 1.0).abs() > 1e-8 {
        return Err(Error::InvalidInput(format!(
            "gamma must have unit norm, got {}",
            gamma.norm()
        )));
    }
    if p == 1 {
        return Ok(ProjectionBasis { v: DMatrix::zeros(1, 0) });
    }
    let sign = if gamma[0] >= 0.0 { 1.0 } else { -1.0 };
    let mut w = gamma.clone();
    w[0] += sign;
    let scale = 2.0 / w.norm_squared();
    // columns 1..p of the reflector I - scale w w'
    let mut v = DMatrix::zeros(p, p - 1);
    for col in 1..p {
        for row in 0..p {
            let id = if row == col { 1.0 } else { 0.0 };
            v[(row, col - 1)] = id - scale * w[row] * w[col];
        }
    }
    Ok(ProjectionBasis { v })
}

/// The population matrices estimated by the plug-in covariances.
#[derive(Debug, Clone)]
pub struct SigmaMatrices {
    /// `E[(H'(gamma'X)'C)^2 X X']`, `p x p`.
    pub sigma_gamma: DMatrix<f64>,
    /// `E[H'(gamma'X) H'(gamma'X)']`, `k x k`.
    pub sigma_a: DMatrix<f64>,
    /// `E[H(gamma'X) H(gamma'X)']`, `k x k`.
    pub sigma_b: DMatrix<f64>,
    /// `E[(H'(gamma'X)'C) H(gamma'X) X']`, `k x p`.
    pub sigma_d: DMatrix<f64>,
    /// `Sigma_B` plus the index-estimation correction, `k x k`.
    pub sigma_c: DMatrix<f64>,
}

/// Plug-in covariance of the index direction.
#[derive(Debug, Clone)]
pub struct GammaPlugin {
    pub sigma_gamma: DMatrix<f64>,
    /// `sigma^2 (V' Sigma_Gamma V)^{-1} / n`, covariance of `V' gamma_hat`.
    pub reduced_cov: DMatrix<f64>,
    /// Tangent-space covariance embedded back into ambient coordinates,
    /// `V reduced V'`; the radial direction has no first-order variance.
    pub cov: DMatrix<f64>,
    pub se: DVector<f64>,
}

/// Plug-in covariance of the sieve coefficients.
#[derive(Debug, Clone)]
pub struct CoeffPlugin {
    pub sigma_a: DMatrix<f64>,
    pub sigma_b: DMatrix<f64>,
    pub sigma_d: DMatrix<f64>,
    pub sigma_c: DMatrix<f64>,
    pub cov: DMatrix<f64>,
    pub se: DVector<f64>,
}

/// Inference summary: bootstrap standard errors and Wald intervals, plus the
/// fixed-k plug-in pieces when they are computable.
#[derive(Debug, Clone)]
pub struct InferenceReport {
    pub level: f64,
    pub b_resamples: usize,
    pub b_failed: usize,
    pub se_gamma_boot: DVector<f64>,
    pub ci_gamma: Vec<(f64, f64)>,
    pub se_gamma_plugin: Option<DVector<f64>>,
    pub se_coeffs_plugin: Option<DVector<f64>>,
    pub sigma_gamma_reduced: Option<DMatrix<f64>>,
    pub coeff_covariance: Option<DMatrix<f64>>,
    pub sigma_matrices: Option<SigmaMatrices>,
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let (rows, cols) = m.shape();
    debug_assert_eq!(rows, cols);
    for i in 0..rows {
        for j in (i + 1)..cols {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

fn check_fit(fit: &SingleIndexFit, x: &DMatrix<f64>) -> Result<()> {
    if !fit.converged {
        return Err(Error::InvalidInput("plug-in covariance requires a converged fit".into()));
    }
    if x.ncols() != fit.gamma.len() {
        return Err(Error::InvalidInput(format!(
            "fit has {} index components but covariates have {} columns",
            fit.gamma.len(),
            x.ncols()
        )));
    }
    Ok(())
}

/// Empirical `Sigma_Gamma` at the fitted parameters.
fn sigma_gamma_hat(fit: &SingleIndexFit, x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let p = x.ncols();
    let index = x * &fit.gamma;
    let c = fit.coeffs.values();
    let mut out = DMatrix::zeros(p, p);
    for i in 0..n {
        let basis = eval_basis(index[i], fit.k).expect("finite index value");
        let dg: f64 = basis.dh.iter().zip(c.iter()).map(|(d, cm)| d * cm).sum();
        let w = dg * dg / n as f64;
        for a in 0..p {
            for b in a..p {
                out[(a, b)] += w * x[(i, a)] * x[(i, b)];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            out[(a, b)] = out[(b, a)];
        }
    }
    out
}

/// Plug-in covariance of the fitted index direction (Sigma_Gamma route).
pub fn plug_in_gamma_covariance(fit: &SingleIndexFit, x: &DMatrix<f64>) -> Result<GammaPlugin> {
    check_fit(fit, x)?;
    let n = x.nrows();
    let p = x.ncols();
    let sigma_gamma = sigma_gamma_hat(fit, x);
    let basis = projection_basis(&fit.gamma)?;
    if p == 1 {
        return Ok(GammaPlugin {
            sigma_gamma,
            reduced_cov: DMatrix::zeros(0, 0),
            cov: DMatrix::zeros(1, 1),
            se: DVector::zeros(1),
        });
    }
    let reduced = basis.v.tr_mul(&sigma_gamma) * &basis.v;
    let chol = nalgebra::linalg::Cholesky::new(reduced).ok_or_else(|| {
        Error::SingularCovariance(
            "V' Sigma_Gamma V is not positive definite (is the fitted link flat?)".into(),
        )
    })?;
    let mut reduced_cov = chol.inverse() * (fit.sigma2 / n as f64);
    symmetrize(&mut reduced_cov);
    let mut cov = &basis.v * &reduced_cov * basis.v.transpose();
    symmetrize(&mut cov);
    let se = DVector::from_fn(p, |j, _| cov[(j, j)].max(0.0).sqrt());
    Ok(GammaPlugin { sigma_gamma, reduced_cov, cov, se })
}

/// Plug-in sandwich covariance of the sieve coefficients (Sigma_A/C route).
pub fn plug_in_coeff_covariance(fit: &SingleIndexFit, x: &DMatrix<f64>) -> Result<CoeffPlugin> {
    check_fit(fit, x)?;
    let n = x.nrows();
    let p = x.ncols();
    let k = fit.k;
    let index = x * &fit.gamma;
    let c = fit.coeffs.values();

    let mut sigma_a = DMatrix::zeros(k, k);
    let mut sigma_b = DMatrix::zeros(k, k);
    let mut sigma_d = DMatrix::zeros(k, p);
    for i in 0..n {
        let basis = eval_basis(index[i], k).expect("finite index value");
        let dg: f64 = basis.dh.iter().zip(c.iter()).map(|(d, cm)| d * cm).sum();
        for a in 0..k {
            for b in a..k {
                sigma_a[(a, b)] += basis.dh[a] * basis.dh[b];
                sigma_b[(a, b)] += basis.h[a] * basis.h[b];
            }
            for j in 0..p {
                sigma_d[(a, j)] += dg * basis.h[a] * x[(i, j)];
            }
        }
    }
    sigma_a /= n as f64;
    sigma_b /= n as f64;
    sigma_d /= n as f64;
    for a in 0..k {
        for b in 0..a {
            sigma_a[(a, b)] = sigma_a[(b, a)];
            sigma_b[(a, b)] = sigma_b[(b, a)];
        }
    }

    let sigma_gamma = sigma_gamma_hat(fit, x);
    let basis = projection_basis(&fit.gamma)?;
    let correction = if p == 1 {
        DMatrix::zeros(k, k)
    } else {
        let reduced = basis.v.tr_mul(&sigma_gamma) * &basis.v;
        let chol = nalgebra::linalg::Cholesky::new(reduced).ok_or_else(|| {
            Error::SingularCovariance("V' Sigma_Gamma V is not positive definite".into())
        })?;
        let w = &sigma_d * &basis.v; // k x (p-1)
        &w * chol.inverse() * w.transpose()
    };
    let mut sigma_c = &sigma_b + correction;
    symmetrize(&mut sigma_c);

    let bread_chol = nalgebra::linalg::Cholesky::new(sigma_b.clone()).ok_or_else(|| {
        Error::SingularCovariance(
            "Sigma_B is not positive definite; the truncation may be too large for n".into(),
        )
    })?;
    let bread_inv = bread_chol.inverse();
    let mut cov = &bread_inv * &sigma_c * &bread_inv * (fit.sigma2 / n as f64);
    symmetrize(&mut cov);
    let se = DVector::from_fn(k, |m, _| cov[(m, m)].max(0.0).sqrt());
    Ok(CoeffPlugin { sigma_a, sigma_b, sigma_d, sigma_c, cov, se })
}

/// Wald interval `est ± z_{(1+level)/2} se`.
pub fn wald_interval(est: f64, se: f64, level: f64) -> Result<(f64, f64)> {
    if se < 0.0 {
        return Err(Error::InvalidInput(format!("standard error must be >= 0, got {se}")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!("level must lie in (0,1), got {level}")));
    }
    let z = normal_quantile(0.5 * (1.0 + level))?;
    Ok((est - z * se, est + z * se))
}

/// Refits the full pipeline on one resample and returns the sign-aligned fit.
fn bootstrap_replicate(
    frame: &ObservationFrame,
    point_gamma: &DVector<f64>,
    k: usize,
    cfg: &NuisanceConfig,
    fit_opts: &FitOptions,
    seed: u64,
) -> Result<SingleIndexFit> {
    let n = frame.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let indices: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    let resample = frame.subset(&indices)?;
    let pfit = fit_propensity(&resample, cfg.propensity)?;
    let ofit0 = fit_outcome_arm(&resample, 0, cfg.outcome_map)?;
    let ofit1 = fit_outcome_arm(&resample, 1, cfg.outcome_map)?;
    let pseudo = aipw_pseudo_outcome(&resample, &pfit, &ofit0, &ofit1, cfg.clip)?;
    let opts = FitOptions {
        k: Truncation::Fixed(k),
        seed: derive_seed(seed, 0xF17),
        ..*fit_opts
    };
    let fit = fit_single_index(&pseudo, resample.x(), &opts)?;
    Ok(align_to(fit, point_gamma))
}

/// Flips the whole solution when the resampled index points away from the
/// point estimate; near `gamma[0] = 0` the sign convention alone is unstable
/// across resamples and would inflate the spread.
fn align_to(fit: SingleIndexFit, reference: &DVector<f64>) -> SingleIndexFit {
    if fit.gamma.dot(reference) < 0.0 {
        canonical_reflect(fit)
    } else {
        fit
    }
}

fn canonical_reflect(fit: SingleIndexFit) -> SingleIndexFit {
    crate::estimator::reflect(fit)
}

/// Per-component sample standard deviations of bootstrap estimates.
fn component_sd(estimates: &[DVector<f64>]) -> DVector<f64> {
    let b = estimates.len();
    let p = estimates[0].len();
    let mut mean = DVector::zeros(p);
    for e in estimates {
        mean += e;
    }
    mean /= b as f64;
    let mut var = DVector::zeros(p);
    for e in estimates {
        let d = e - &mean;
        var += d.component_mul(&d);
    }
    var /= (b - 1) as f64;
    var.map(f64::sqrt)
}

/// Pairs bootstrap over whole observations: draws `b` resamples with
/// replacement, refits nuisances, pseudo-outcomes, and the sieve (same
/// truncation as the point fit), then reports per-component standard errors
/// and Wald intervals around the point estimate. Resamples whose refit fails
/// are dropped; more than 10% failures is an error.
pub fn bootstrap_inference(
    frame: &ObservationFrame,
    point_fit: &SingleIndexFit,
    cfg: &NuisanceConfig,
    fit_opts: &FitOptions,
    b: usize,
    level: f64,
    seed: u64,
) -> Result<InferenceReport> {
    if b < 2 {
        return Err(Error::InvalidInput(format!("bootstrap needs b >= 2 resamples, got {b}")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!("level must lie in (0,1), got {level}")));
    }

    let results: Vec<Result<SingleIndexFit>> = (0..b)
        .into_par_iter()
        .map(|r| {
            bootstrap_replicate(
                frame,
                &point_fit.gamma,
                point_fit.k,
                cfg,
                fit_opts,
                derive_seed(seed, r as u64),
            )
        })
        .collect();

    let mut gammas = Vec::with_capacity(b);
    let mut first_failure: Option<String> = None;
    for r in results {
        match r {
            Ok(fit) => gammas.push(fit.gamma),
            Err(e) => {
                if first_failure.is_none() {
                    first_failure = Some(e.to_string());
                }
            }
        }
    }
    let b_failed = b - gammas.len();
    if b_failed * 10 > b {
        return Err(Error::BootstrapDegenerate(format!(
            "{b_failed} of {b} resamples failed to refit (first failure: {})",
            first_failure.unwrap_or_else(|| "unknown".into())
        )));
    }
    if gammas.len() < 2 {
        return Err(Error::BootstrapDegenerate(format!(
            "only {} usable resamples of {b}",
            gammas.len()
        )));
    }

    let se_gamma_boot = component_sd(&gammas);
    let ci_gamma = point_fit
        .gamma
        .iter()
        .zip(se_gamma_boot.iter())
        .map(|(&est, &se)| wald_interval(est, se, level))
        .collect::<Result<Vec<_>>>()?;

    let gamma_plugin = plug_in_gamma_covariance(point_fit, frame.x()).ok();
    let coeff_plugin = plug_in_coeff_covariance(point_fit, frame.x()).ok();
    let sigma_matrices = match (&gamma_plugin, &coeff_plugin) {
        (Some(g), Some(c)) => Some(SigmaMatrices {
            sigma_gamma: g.sigma_gamma.clone(),
            sigma_a: c.sigma_a.clone(),
            sigma_b: c.sigma_b.clone(),
            sigma_d: c.sigma_d.clone(),
            sigma_c: c.sigma_c.clone(),
        }),
        _ => None,
    };

    Ok(InferenceReport {
        level,
        b_resamples: b,
        b_failed,
        se_gamma_boot,
        ci_gamma,
        se_gamma_plugin: gamma_plugin.as_ref().map(|g| g.se.clone()),
        se_coeffs_plugin: coeff_plugin.as_ref().map(|c| c.se.clone()),
        sigma_gamma_reduced: gamma_plugin.map(|g| g.reduced_cov),
        coeff_covariance: coeff_plugin.map(|c| c.cov),
        sigma_matrices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hermite::{LinkCoefficients, DEFAULT_COEFF_CAP};
    use rand_distr::{Distribution, StandardNormal};

    const QUARTER_ROOT_TWO_PI: f64 = 1.583_233_487_086_159_5;

    fn unit(v: Vec<f64>) -> DVector<f64> {
        let v = DVector::from_vec(v);
        let n = v.norm();
        v / n
    }

    fn identity_link_fit(gamma: DVector<f64>, k: usize, sigma2: f64) -> SingleIndexFit {
        let mut c = DVector::zeros(k);
        c[1] = QUARTER_ROOT_TWO_PI;
        SingleIndexFit {
            gamma,
            coeffs: LinkCoefficients::new(c, DEFAULT_COEFF_CAP).unwrap(),
            k,
            lambda: 0.0,
            sigma2,
            objective: sigma2,
            starts: 1,
            iterations: 1,
            converged: true,
        }
    }

    #[test]
    fn basis_of_coordinate_axis() {
        let basis = projection_basis(&unit(vec![1.0, 0.0, 0.0])).unwrap();
        let v = &basis.v;
        assert_eq!(v.shape(), (3, 2));
        let vtv = v.tr_mul(v);
        assert!((vtv - DMatrix::identity(2, 2)).amax() < 1e-12);
        // columns live in span{e2, e3}
        assert!(v[(0, 0)].abs() < 1e-12);
        assert!(v[(0, 1)].abs() < 1e-12);
    }

    #[test]
    fn basis_defining_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let g = unit((0..4).map(|_| StandardNormal.sample(&mut rng)).collect());
            let basis = projection_basis(&g).unwrap();
            let v = &basis.v;
            assert!((v.tr_mul(v) - DMatrix::identity(3, 3)).amax() < 1e-10);
            assert!(v.tr_mul(&g).amax() < 1e-10);
            // (I - g g') V = V
            let proj = DMatrix::identity(4, 4) - &g * g.transpose();
            assert!((&proj * v - v).amax() < 1e-10);
        }
    }

    #[test]
    fn projection_matrix_eigenvalues() {
        let g = unit(vec![0.8, -0.6, 0.0]);
        let proj = DMatrix::identity(3, 3) - &g * g.transpose();
        let mut eig: Vec<f64> = nalgebra::linalg::SymmetricEigen::new(proj)
            .eigenvalues
            .iter()
            .copied()
            .collect();
        eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(eig[0].abs() < 1e-12);
        assert!((eig[1] - 1.0).abs() < 1e-12);
        assert!((eig[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn univariate_basis_is_empty() {
        let basis = projection_basis(&unit(vec![1.0])).unwrap();
        assert_eq!(basis.v.shape(), (1, 0));
    }

    #[test]
    fn sigma_gamma_matches_identity_link_oracle() {
        // identity link: H'(u)'C = 1, so Sigma_Gamma = E[X X'] = I
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let x = DMatrix::from_fn(n, 2, |_, _| StandardNormal.sample(&mut rng));
        let fit = identity_link_fit(unit(vec![0.6, 0.8]), 2, 1.0);
        let plugin = plug_in_gamma_covariance(&fit, &x).unwrap();
        assert!((plugin.sigma_gamma[(0, 0)] - 1.0).abs() < 0.02);
        assert!((plugin.sigma_gamma[(1, 1)] - 1.0).abs() < 0.02);
        assert!(plugin.sigma_gamma[(0, 1)].abs() < 0.02);
        // reduced covariance is 1x1 and positive
        assert_eq!(plugin.reduced_cov.shape(), (1, 1));
        assert!(plugin.reduced_cov[(0, 0)] > 0.0);
        assert_eq!(plugin.se.len(), 2);
    }

    #[test]
    fn flat_link_is_singular() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = DMatrix::from_fn(200, 3, |_, _| StandardNormal.sample(&mut rng));
        let fit = SingleIndexFit {
            gamma: unit(vec![1.0, 0.0, 0.0]),
            coeffs: LinkCoefficients::new(DVector::zeros(3), 1.0).unwrap(),
            k: 3,
            lambda: 0.0,
            sigma2: 1.0,
            objective: 1.0,
            starts: 1,
            iterations: 1,
            converged: true,
        };
        assert!(matches!(
            plug_in_gamma_covariance(&fit, &x),
            Err(Error::SingularCovariance(_))
        ));
    }

    #[test]
    fn constant_basis_is_singular_for_coefficients() {
        // k = 1: the link derivative vanishes identically, the index is not
        // identified, and the correction term's inverse does not exist
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = DMatrix::from_fn(100, 2, |_, _| StandardNormal.sample(&mut rng));
        let fit = SingleIndexFit {
            gamma: unit(vec![1.0, 0.0]),
            coeffs: LinkCoefficients::new(DVector::from_vec(vec![0.3]), 1.0).unwrap(),
            k: 1,
            lambda: 0.0,
            sigma2: 1.0,
            objective: 1.0,
            starts: 1,
            iterations: 1,
            converged: true,
        };
        assert!(matches!(
            plug_in_coeff_covariance(&fit, &x),
            Err(Error::SingularCovariance(_))
        ));
    }

    #[test]
    fn sigma_b_matches_normal_design_oracle() {
        // under a standard normal index, E[h_m h_n] = delta_mn / sqrt(2 pi)
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 200_000;
        let x = DMatrix::from_fn(n, 2, |_, _| StandardNormal.sample(&mut rng));
        let fit = identity_link_fit(unit(vec![0.6, 0.8]), 2, 1.0);
        let plugin = plug_in_coeff_covariance(&fit, &x).unwrap();
        let scale = 0.398_942_280_401_432_7; // (2 pi)^{-1/2}
        assert!((plugin.sigma_b[(0, 0)] - scale).abs() < 0.01);
        assert!((plugin.sigma_b[(1, 1)] - scale).abs() < 0.01);
        assert!(plugin.sigma_b[(0, 1)].abs() < 0.01);
    }

    #[test]
    fn coefficient_correction_is_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 5_000;
        let x = DMatrix::from_fn(n, 3, |_, _| StandardNormal.sample(&mut rng));
        let fit = identity_link_fit(unit(vec![0.8, -0.6, 0.0]), 4, 0.7);
        let plugin = plug_in_coeff_covariance(&fit, &x).unwrap();
        let diff = &plugin.sigma_c - &plugin.sigma_b;
        let min_eig = nalgebra::linalg::SymmetricEigen::new(diff)
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        assert!(min_eig > -1e-8, "min eigenvalue {min_eig}");
        // stored matrices are symmetric and PSD
        for m in [&plugin.sigma_a, &plugin.sigma_b, &plugin.sigma_c, &plugin.cov] {
            assert!((m - m.transpose()).amax() < 1e-10);
            let min_eig = nalgebra::linalg::SymmetricEigen::new(m.clone())
                .eigenvalues
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min);
            assert!(min_eig > -1e-8);
        }
    }

    #[test]
    fn wald_interval_arithmetic() {
        let (lo, hi) = wald_interval(0.8, 0.05, 0.95).unwrap();
        assert!((lo - 0.702_001_800_772_997).abs() < 1e-9);
        assert!((hi - 0.897_998_199_227_003).abs() < 1e-9);
        let (lo, hi) = wald_interval(1.3, 0.0, 0.8).unwrap();
        assert_eq!((lo, hi), (1.3, 1.3));
        let (lo, hi) = wald_interval(0.0, 1.0, 0.95).unwrap();
        assert!((lo + 1.959_963_984_540_054).abs() < 1e-9);
        assert!((hi - 1.959_963_984_540_054).abs() < 1e-9);
        assert!(wald_interval(0.0, -1.0, 0.95).is_err());
        assert!(wald_interval(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn identical_resamples_have_zero_sd() {
        let e = DVector::from_vec(vec![0.8, -0.6, 0.0]);
        let sd = component_sd(&[e.clone(), e]);
        assert_eq!(sd.amax(), 0.0);
    }

    #[test]
    fn sign_alignment_preserves_predictions() {
        let fit = identity_link_fit(unit(vec![-0.1, 0.99]), 3, 1.0);
        let reference = unit(vec![0.1, -0.99]);
        let aligned = align_to(fit.clone(), &reference);
        assert!(aligned.gamma.dot(&reference) > 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let x: Vec<f64> = (0..2).map(|_| StandardNormal.sample(&mut rng)).collect();
            assert!((fit.predict_cate(&x) - aligned.predict_cate(&x)).abs() < 1e-12);
        }
    }
}
