//! Sieve estimation of the single-index CATE model.
//!
//! Solves
//!
//! `min over (gamma, C) of (1/n) sum_i [Yhat_i - H(gamma' x_i)' C]^2`
//! subject to `|gamma| = 1` and `|C| <= M`,
//!
//! by alternating minimization: an exact least-squares C-step at the current
//! index, then one backtracked Gauss-Newton step on gamma followed by
//! projection back to the unit sphere. The sphere constraint is handled by
//! renormalization; the Lagrange multiplier is recovered afterwards from the
//! stationarity identity `lambda = (1/n) sum_i r_i g'(u_i) (x_i' gamma)`.
//! The objective is nonconvex in gamma, so several initializations are run
//! and the lowest objective kept.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::hermite::{
    hermite_design, link_and_slope, LinkCoefficients, DEFAULT_COEFF_CAP,
};
use crate::linalg::qr_least_squares;
use crate::pseudo::PseudoOutcome;

/// Default truncation when none is selected: spans linear as well as cubic
/// links with headroom.
pub const DEFAULT_TRUNCATION: usize = 6;

/// Default grid scanned by automatic truncation selection.
pub const DEFAULT_K_GRID: [usize; 7] = [2, 3, 4, 5, 6, 7, 8];

/// Anything that predicts a conditional treatment effect at a covariate row.
pub trait CatePredictor {
    fn cate(&self, x_row: &[f64]) -> f64;
}

/// Truncation choice for the sieve basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Truncation {
    Fixed(usize),
    /// BIC selection over [`DEFAULT_K_GRID`].
    Auto,
}

/// Tuning knobs for [`fit_single_index`].
#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub k: Truncation,
    pub n_starts: usize,
    pub max_iter: usize,
    /// Relative objective-change tolerance.
    pub tol_obj: f64,
    /// Euclidean tolerance on the gamma update.
    pub tol_param: f64,
    pub seed: u64,
    pub coeff_cap: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            k: Truncation::Fixed(DEFAULT_TRUNCATION),
            n_starts: 5,
            max_iter: 200,
            tol_obj: 1e-10,
            tol_param: 1e-8,
            seed: 0,
            coeff_cap: DEFAULT_COEFF_CAP,
        }
    }
}

impl FitOptions {
    fn validate(&self) -> Result<()> {
        if self.n_starts == 0 {
            return Err(Error::InvalidInput("n_starts must be >= 1".into()));
        }
        if !(self.tol_obj > 0.0 && self.tol_param > 0.0) {
            return Err(Error::InvalidInput("tolerances must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidInput("max_iter must be >= 1".into()));
        }
        Ok(())
    }
}

/// Fitted single-index model.
#[derive(Debug, Clone)]
pub struct SingleIndexFit {
    /// Unit-norm index direction with `gamma[0] >= 0`.
    pub gamma: DVector<f64>,
    pub coeffs: LinkCoefficients,
    pub k: usize,
    /// Lagrange multiplier recovered from the stationarity identity.
    pub lambda: f64,
    /// Residual variance, RSS / (n - k - p + 1).
    pub sigma2: f64,
    /// Final mean squared residual, RSS / n.
    pub objective: f64,
    pub starts: usize,
    pub iterations: usize,
    pub converged: bool,
}

impl SingleIndexFit {
    /// Predicted CATE `g_k(gamma' x)` at one covariate row.
    pub fn predict_cate(&self, x_row: &[f64]) -> f64 {
        let u: f64 = self
            .gamma
            .iter()
            .zip(x_row.iter())
            .map(|(g, x)| g * x)
            .sum();
        let mut buf = vec![0.0; self.k];
        let (g, _) = link_and_slope(u, &self.coeffs, &mut buf);
        g
    }
}

impl CatePredictor for SingleIndexFit {
    fn cate(&self, x_row: &[f64]) -> f64 {
        self.predict_cate(x_row)
    }
}

fn check_dims(pseudo: &PseudoOutcome, x: &DMatrix<f64>, gamma_len: usize) -> Result<()> {
    if x.nrows() != pseudo.n() {
        return Err(Error::InvalidInput(format!(
            "pseudo-outcome has {} rows but covariates have {}",
            pseudo.n(),
            x.nrows()
        )));
    }
    if x.ncols() != gamma_len {
        return Err(Error::InvalidInput(format!(
            "gamma has length {gamma_len} but covariates have {} columns",
            x.ncols()
        )));
    }
    Ok(())
}

/// Mean squared sieve residual `(1/n) sum_i [Yhat_i - H(gamma' x_i)' C]^2`.
pub fn sieve_objective(
    pseudo: &PseudoOutcome,
    x: &DMatrix<f64>,
    gamma: &DVector<f64>,
    coeffs: &LinkCoefficients,
) -> Result<f64> {
    check_dims(pseudo, x, gamma.len())?;
    let index = x * gamma;
    let mut buf = vec![0.0; coeffs.k()];
    let n = pseudo.n();
    let mut rss = 0.0;
    for i in 0..n {
        let (g, _) = link_and_slope(index[i], coeffs, &mut buf);
        let r = pseudo.values[i] - g;
        rss += r * r;
    }
    Ok(rss / n as f64)
}

/// Gradient of [`sieve_objective`] with respect to gamma at fixed
/// coefficients: `-(2/n) sum_i r_i g'(u_i) x_i`.
pub fn sieve_objective_gradient(
    pseudo: &PseudoOutcome,
    x: &DMatrix<f64>,
    gamma: &DVector<f64>,
    coeffs: &LinkCoefficients,
) -> Result<DVector<f64>> {
    check_dims(pseudo, x, gamma.len())?;
    let index = x * gamma;
    let n = pseudo.n();
    let p = gamma.len();
    let mut buf = vec![0.0; coeffs.k()];
    let mut grad = DVector::zeros(p);
    for i in 0..n {
        let (g, dg) = link_and_slope(index[i], coeffs, &mut buf);
        let r = pseudo.values[i] - g;
        let w = -2.0 * r * dg / n as f64;
        for j in 0..p {
            grad[j] += w * x[(i, j)];
        }
    }
    Ok(grad)
}

/// Inner least-squares problem: sieve coefficients at fixed index values,
/// projected onto the coefficient ball when the unconstrained solution
/// exceeds the cap.
pub fn solve_coefficients(
    pseudo: &PseudoOutcome,
    index_values: &DVector<f64>,
    k: usize,
    cap: f64,
) -> Result<LinkCoefficients> {
    if index_values.len() != pseudo.n() {
        return Err(Error::InvalidInput(format!(
            "index values have length {} but pseudo-outcome has {}",
            index_values.len(),
            pseudo.n()
        )));
    }
    let design = hermite_design(index_values, k)?;
    let c = qr_least_squares(&design, &pseudo.values, "Hermite sieve design")?;
    LinkCoefficients::projected(c, cap)
}

struct StartFit {
    gamma: DVector<f64>,
    coeffs: LinkCoefficients,
    objective: f64,
    iterations: usize,
    converged: bool,
    /// Objective after every alternating iteration, for monotonicity checks.
    #[cfg_attr(not(test), allow(dead_code))]
    trace: Vec<f64>,
}

/// One alternating-minimization run from a given unit-norm start.
fn run_start(
    pseudo: &PseudoOutcome,
    x: &DMatrix<f64>,
    init: DVector<f64>,
    k: usize,
    opts: &FitOptions,
) -> Result<StartFit> {
    let n = pseudo.n();
    let p = x.ncols();
    let mut gamma = init;
    let mut coeffs = solve_coefficients(pseudo, &(x * &gamma), k, opts.coeff_cap)?;
    let mut objective = sieve_objective(pseudo, x, &gamma, &coeffs)?;
    let mut trace = vec![objective];
    let mut converged = false;
    let mut iterations = 0;

    let mut buf = vec![0.0; k];
    for iter in 1..=opts.max_iter {
        iterations = iter;

        // gamma-step: one Gauss-Newton step on the residuals at fixed C,
        // backtracked so the objective never increases, then renormalized.
        let index = x * &gamma;
        let mut jtj = DMatrix::<f64>::zeros(p, p);
        let mut jtr = DVector::<f64>::zeros(p);
        for i in 0..n {
            let (g, dg) = link_and_slope(index[i], &coeffs, &mut buf);
            let r = pseudo.values[i] - g;
            for a in 0..p {
                let xa = x[(i, a)];
                jtr[a] += dg * r * xa;
                for b in a..p {
                    jtj[(a, b)] += dg * dg * xa * x[(i, b)];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                jtj[(a, b)] = jtj[(b, a)];
            }
        }
        let direction = nalgebra::linalg::Cholesky::new(jtj)
            .map(|chol| chol.solve(&jtr))
            .unwrap_or_else(|| DVector::zeros(p));

        let mut gamma_new = gamma.clone();
        if direction.norm() > 0.0 {
            let mut t = 1.0;
            for _ in 0..40 {
                let mut cand = &gamma + t * &direction;
                let norm = cand.norm();
                if norm > 0.0 {
                    cand /= norm;
                    let obj_c = sieve_objective(pseudo, x, &cand, &coeffs)?;
                    if obj_c <= objective + 1e-15 {
                        gamma_new = cand;
                        break;
                    }
                }
                t *= 0.5;
            }
        }
        let param_change = (&gamma_new - &gamma).norm();
        gamma = gamma_new;

        // C-step: exact minimizer at the updated index.
        coeffs = solve_coefficients(pseudo, &(x * &gamma), k, opts.coeff_cap)?;
        let objective_new = sieve_objective(pseudo, x, &gamma, &coeffs)?;
        let rel_change = (objective - objective_new).abs() / objective.abs().max(1e-300);
        objective = objective_new;
        trace.push(objective);

        if rel_change < opts.tol_obj || param_change < opts.tol_param {
            converged = true;
            break;
        }
    }

    Ok(StartFit { gamma, coeffs, objective, iterations, converged, trace })
}

/// Normalized slope vector from OLS of the pseudo-outcome on the covariates;
/// the warm start for the nonconvex gamma search.
fn ols_direction(pseudo: &PseudoOutcome, x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows();
    let p = x.ncols();
    let mut design = DMatrix::zeros(n, p + 1);
    for i in 0..n {
        design[(i, 0)] = 1.0;
        for j in 0..p {
            design[(i, j + 1)] = x[(i, j)];
        }
    }
    let fallback = || {
        let mut e1 = DVector::zeros(p);
        e1[0] = 1.0;
        e1
    };
    match qr_least_squares(&design, &pseudo.values, "warm-start OLS") {
        Ok(coef) => {
            let slopes = coef.rows(1, p).into_owned();
            let norm = slopes.norm();
            if norm > 1e-12 {
                slopes / norm
            } else {
                fallback()
            }
        }
        Err(_) => fallback(),
    }
}

fn random_unit(rng: &mut ChaCha8Rng, p: usize) -> DVector<f64> {
    loop {
        let v: DVector<f64> = DVector::from_fn(p, |_, _| StandardNormal.sample(rng));
        let norm = v.norm();
        if norm > 1e-8 {
            return v / norm;
        }
    }
}

/// Fits the constrained sieve minimization by multi-start alternating
/// minimization and returns the canonicalized best fit.
pub fn fit_single_index(
    pseudo: &PseudoOutcome,
    x: &DMatrix<f64>,
    opts: &FitOptions,
) -> Result<SingleIndexFit> {
    opts.validate()?;
    check_dims(pseudo, x, x.ncols())?;
    let n = pseudo.n();
    let p = x.ncols();

    let k = match opts.k {
        Truncation::Fixed(k) => {
            if k == 0 {
                return Err(Error::InvalidInput("truncation k must be >= 1".into()));
            }
            k
        }
        Truncation::Auto => select_truncation(pseudo, x, &DEFAULT_K_GRID, opts)?,
    };
    if n <= p + k {
        return Err(Error::InvalidInput(format!(
            "need n > p + k observations, got n={n}, p={p}, k={k}"
        )));
    }

    // p = 1: the feasible set {-1, +1} collapses to +1 under the sign rule.
    if p == 1 {
        let gamma = DVector::from_vec(vec![1.0]);
        let coeffs = solve_coefficients(pseudo, &(x * &gamma), k, opts.coeff_cap)?;
        let objective = sieve_objective(pseudo, x, &gamma, &coeffs)?;
        let fit = SingleIndexFit {
            lambda: stationarity_multiplier(pseudo, x, &gamma, &coeffs),
            sigma2: objective * n as f64 / (n - k - p + 1) as f64,
            gamma,
            coeffs,
            k,
            objective,
            starts: 1,
            iterations: 0,
            converged: true,
        };
        return Ok(canonicalize(fit));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut inits = Vec::with_capacity(opts.n_starts);
    inits.push(ols_direction(pseudo, x));
    for _ in 1..opts.n_starts {
        inits.push(random_unit(&mut rng, p));
    }

    let mut best: Option<StartFit> = None;
    let mut any_converged = false;
    let mut first_error: Option<Error> = None;
    for init in inits {
        match run_start(pseudo, x, init, k, opts) {
            Ok(run) => {
                any_converged |= run.converged;
                let better = best
                    .as_ref()
                    .map(|b| run.objective < b.objective)
                    .unwrap_or(true);
                if better {
                    best = Some(run);
                }
            }
            Err(e) => {
                if first_error.is_none() {
                    first_error = Some(e);
                }
            }
        }
    }

    let best = match best {
        Some(b) => b,
        None => return Err(first_error.expect("at least one start ran")),
    };
    if !any_converged {
        return Err(Error::NonConvergence {
            context: "single-index fit: no start met the tolerance".into(),
            iterations: best.iterations,
            last_iterate: best.gamma.iter().copied().collect(),
        });
    }

    let lambda = stationarity_multiplier(pseudo, x, &best.gamma, &best.coeffs);
    let fit = SingleIndexFit {
        lambda,
        sigma2: best.objective * n as f64 / (n - k - p + 1) as f64,
        gamma: best.gamma,
        coeffs: best.coeffs,
        k,
        objective: best.objective,
        starts: opts.n_starts,
        iterations: best.iterations,
        converged: best.converged,
    };
    Ok(canonicalize(fit))
}

/// `lambda = (1/n) sum_i r_i g'(u_i) (x_i' gamma)` at the fitted estimate.
fn stationarity_multiplier(
    pseudo: &PseudoOutcome,
    x: &DMatrix<f64>,
    gamma: &DVector<f64>,
    coeffs: &LinkCoefficients,
) -> f64 {
    let index = x * gamma;
    let mut buf = vec![0.0; coeffs.k()];
    let n = pseudo.n();
    let mut total = 0.0;
    for i in 0..n {
        let (g, dg) = link_and_slope(index[i], coeffs, &mut buf);
        total += (pseudo.values[i] - g) * dg * index[i];
    }
    total / n as f64
}

/// Enforces the identification convention `gamma[0] >= 0` by the reflection
/// `(gamma, c_m) -> (-gamma, (-1)^m c_m)`, which leaves predictions unchanged.
pub fn canonicalize(fit: SingleIndexFit) -> SingleIndexFit {
    if fit.gamma[0] >= 0.0 {
        return fit;
    }
    reflect(fit)
}

/// The prediction-preserving sign flip of a fit.
pub(crate) fn reflect(mut fit: SingleIndexFit) -> SingleIndexFit {
    fit.gamma = -fit.gamma;
    fit.coeffs = fit.coeffs.reflected();
    fit
}

/// BIC-selected truncation: `n log(RSS/n) + k log n`, smaller `k` winning
/// ties. Individual truncations that fail to fit are skipped; it is an error
/// only if every candidate fails.
pub fn select_truncation(
    pseudo: &PseudoOutcome,
    x: &DMatrix<f64>,
    k_grid: &[usize],
    opts: &FitOptions,
) -> Result<usize> {
    if k_grid.is_empty() {
        return Err(Error::InvalidInput("truncation grid must be non-empty".into()));
    }
    let n = pseudo.n();
    let p = x.ncols();
    for &k in k_grid {
        if k == 0 || k >= n.saturating_sub(p) {
            return Err(Error::InvalidInput(format!(
                "grid truncation k={k} invalid for n={n}, p={p}"
            )));
        }
    }
    let mut grid: Vec<usize> = k_grid.to_vec();
    grid.sort_unstable();
    grid.dedup();

    // Mean squares below this floor are numerically "zero"; flooring keeps
    // BIC comparisons meaningful on noiseless data where RSS is rounding.
    let mean_sq = pseudo.values.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let floor = 1e-20 * (1.0 + mean_sq);

    let mut best: Option<(f64, usize)> = None;
    let mut last_error: Option<Error> = None;
    for k in grid {
        let sub_opts = FitOptions { k: Truncation::Fixed(k), ..*opts };
        match fit_single_index(pseudo, x, &sub_opts) {
            Ok(fit) => {
                let bic = n as f64 * fit.objective.max(floor).ln() + k as f64 * (n as f64).ln();
                if best.map(|(b, _)| bic < b).unwrap_or(true) {
                    best = Some((bic, k));
                }
            }
            Err(e) => last_error = Some(e),
        }
    }
    match best {
        Some((_, k)) => Ok(k),
        None => Err(last_error.unwrap_or_else(|| Error::InvalidInput("empty truncation grid".into()))),
    }
}
