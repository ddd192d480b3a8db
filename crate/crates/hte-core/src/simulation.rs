//! Benchmark data-generating processes and the Monte Carlo harness.
//!
//! The response follows `Y = X1 - 0.5 X2 + D g0(gamma' X) + eps` with
//! standard normal noise, treatment assigned by the logistic model
//! `P(D = 1 | X) = expit(beta0 + X1 - 0.5 X3)`, and `gamma = (0.8, -0.6, 0)`.
//! Covariates are standard normal or uniform on [-1, 1]; the link is the
//! identity or `2u^3 - 1`. The intercept `beta0` is calibrated by bisection
//! so the treated fraction hits a target proportion. Misspecification flags
//! switch the propensity fit to probit, the outcome fit to squares-only
//! features, or add `-0.5 X3^2` to the treatment effect so it is no longer a
//! pure single-index function.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::data::{Clip, ObservationFrame};
use crate::error::{Error, Result};
use crate::estimator::{fit_single_index, CatePredictor, FitOptions, SingleIndexFit};
use crate::forest::{t_learner_cate, x_learner_cate, ForestOptions};
use crate::hermite::eval_basis;
use crate::inference::bootstrap_inference;
use crate::normal::normal_quantile;
use crate::nuisance::{
    fit_outcome_arm, fit_propensity, FeatureMap, NuisanceConfig, PropensityFamily,
};
use crate::pseudo::aipw_pseudo_outcome;
use crate::seeding::derive_seed;

/// Link function of the benchmark designs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkKind {
    /// `g0(u) = u`.
    Linear,
    /// `g0(u) = 2u^3 - 1`.
    Cubic,
}

impl LinkKind {
    pub fn eval(&self, u: f64) -> f64 {
        match self {
            LinkKind::Linear => u,
            LinkKind::Cubic => 2.0 * u * u * u - 1.0,
        }
    }
}

/// Covariate law of the benchmark designs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovariateLaw {
    StandardNormal,
    /// Uniform on [-1, 1].
    UniformUnit,
}

impl CovariateLaw {
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            CovariateLaw::StandardNormal => StandardNormal.sample(rng),
            CovariateLaw::UniformUnit => rng.random::<f64>() * 2.0 - 1.0,
        }
    }
}

/// Correct/misspecified switches for the three pipeline stages, in the order
/// (propensity score, outcome regression, single-index model). `true` means
/// correctly specified.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MisspecFlags {
    pub ps_ok: bool,
    pub outcome_ok: bool,
    pub sim_ok: bool,
}

impl MisspecFlags {
    pub fn all_correct() -> Self {
        Self { ps_ok: true, outcome_ok: true, sim_ok: true }
    }

    /// Parses a triplet like "TTF" (T = correctly specified).
    pub fn from_triplet(s: &str) -> Result<Self> {
        let chars: Vec<char> = s.trim().to_ascii_uppercase().chars().collect();
        if chars.len() != 3 || chars.iter().any(|c| *c != 'T' && *c != 'F') {
            return Err(Error::InvalidInput(format!(
                "misspecification triplet must be three of T/F, got {s:?}"
            )));
        }
        Ok(Self {
            ps_ok: chars[0] == 'T',
            outcome_ok: chars[1] == 'T',
            sim_ok: chars[2] == 'T',
        })
    }

    pub fn triplet(&self) -> String {
        [self.ps_ok, self.outcome_ok, self.sim_ok]
            .iter()
            .map(|ok| if *ok { 'T' } else { 'F' })
            .collect()
    }
}

/// One simulation configuration.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub link: LinkKind,
    pub covariate_law: CovariateLaw,
    pub n: usize,
    pub target_prop: f64,
    pub gamma_true: DVector<f64>,
    pub misspec: MisspecFlags,
    pub seed: u64,
}

impl Scenario {
    /// The benchmark configuration: `gamma = (0.8, -0.6, 0)`, everything
    /// correctly specified.
    pub fn benchmark(
        link: LinkKind,
        covariate_law: CovariateLaw,
        n: usize,
        target_prop: f64,
        seed: u64,
    ) -> Self {
        Self {
            link,
            covariate_law,
            n,
            target_prop,
            gamma_true: DVector::from_vec(vec![0.8, -0.6, 0.0]),
            misspec: MisspecFlags::all_correct(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.gamma_true.len();
        if p < 3 {
            return Err(Error::InvalidInput(
                "scenario needs p >= 3 covariates (the assignment model uses X1 and X3)".into(),
            ));
        }
        if (self.gamma_true.norm() - 1.0).abs() > 1e-8 {
            return Err(Error::InvalidInput(format!(
                "gamma_true must have unit norm, got {}",
                self.gamma_true.norm()
            )));
        }
        if !(self.target_prop > 0.0 && self.target_prop < 1.0) {
            return Err(Error::InvalidInput(format!(
                "target proportion must lie in (0,1), got {}",
                self.target_prop
            )));
        }
        if self.n <= p + 1 {
            return Err(Error::InvalidInput(format!(
                "scenario sample size {} too small for p = {p}",
                self.n
            )));
        }
        Ok(())
    }

    pub fn p(&self) -> usize {
        self.gamma_true.len()
    }

    /// True treatment effect at one covariate row, including the
    /// `-0.5 x3^2` deviation when the single-index model is misspecified.
    pub fn true_cate(&self, x_row: &[f64]) -> f64 {
        let u: f64 = self
            .gamma_true
            .iter()
            .zip(x_row.iter())
            .map(|(g, x)| g * x)
            .sum();
        let mut tau = self.link.eval(u);
        if !self.misspec.sim_ok {
            tau -= 0.5 * x_row[2] * x_row[2];
        }
        tau
    }
}

/// A generated dataset plus the simulation truth it was built from.
#[derive(Debug, Clone)]
pub struct GeneratedData {
    pub scenario: Scenario,
    pub frame: ObservationFrame,
    pub true_cate: DVector<f64>,
    pub true_beta0: f64,
}

impl GeneratedData {
    /// True assignment probability at one covariate row.
    pub fn true_propensity(&self, x_row: &[f64]) -> f64 {
        expit(self.true_beta0 + x_row[0] - 0.5 * x_row[2])
    }

    /// True conditional outcome mean for the given arm.
    pub fn true_outcome_mean(&self, arm: u8, x_row: &[f64]) -> f64 {
        let base = x_row[0] - 0.5 * x_row[1];
        if arm == 1 {
            base + self.scenario.true_cate(x_row)
        } else {
            base
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

const CALIBRATION_DRAWS: usize = 1_000_000;
const CALIBRATION_SEED: u64 = 0x0ca11b8a7e5eed;
const CALIBRATION_TOL: f64 = 1e-3;

/// Solves `E[expit(beta0 + X1 - 0.5 X3)] = target_prop` for the intercept by
/// bisection against a fixed-seed Monte Carlo integral.
pub fn calibrate_intercept(scenario: &Scenario, target_prop: f64) -> Result<f64> {
    if !(target_prop > 0.05 && target_prop < 0.95) {
        return Err(Error::InvalidInput(format!(
            "calibration target must lie in (0.05, 0.95), got {target_prop}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(CALIBRATION_SEED);
    let w: Vec<f64> = (0..CALIBRATION_DRAWS)
        .map(|_| {
            let x1 = scenario.covariate_law.sample(&mut rng);
            let x3 = scenario.covariate_law.sample(&mut rng);
            x1 - 0.5 * x3
        })
        .collect();
    let mean_prop =
        |b0: f64| w.iter().map(|&wi| expit(b0 + wi)).sum::<f64>() / CALIBRATION_DRAWS as f64;

    let mut lo = -20.0;
    let mut hi = 20.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let f = mean_prop(mid) - target_prop;
        if f.abs() <= CALIBRATION_TOL {
            return Ok(mid);
        }
        if f < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::Numeric(format!(
        "intercept calibration did not reach tolerance for target {target_prop}"
    )))
}

/// Fresh covariate draws under the scenario's law.
pub fn draw_covariates(law: CovariateLaw, n: usize, p: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(n, p, |_, _| law.sample(&mut rng))
}

/// Generates one dataset, calibrating the intercept internally.
pub fn generate_dataset(scenario: &Scenario) -> Result<GeneratedData> {
    let beta0 = calibrate_intercept(scenario, scenario.target_prop)?;
    generate_dataset_with_intercept(scenario, beta0)
}

/// Generates one dataset at a pre-calibrated intercept. Draw order is fixed
/// (covariates, then assignment uniforms, then noise) so scenarios differing
/// only in fitting-stage flags share identical draws.
pub fn generate_dataset_with_intercept(scenario: &Scenario, beta0: f64) -> Result<GeneratedData> {
    scenario.validate()?;
    let n = scenario.n;
    let p = scenario.p();
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);

    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            x[(i, j)] = scenario.covariate_law.sample(&mut rng);
        }
    }
    let mut d = DVector::zeros(n);
    for i in 0..n {
        let pi = expit(beta0 + x[(i, 0)] - 0.5 * x[(i, 2)]);
        d[i] = if rng.random::<f64>() < pi { 1.0 } else { 0.0 };
    }
    let mut y = DVector::zeros(n);
    let mut true_cate = DVector::zeros(n);
    let mut row = vec![0.0; p];
    for i in 0..n {
        for j in 0..p {
            row[j] = x[(i, j)];
        }
        let tau = scenario.true_cate(&row);
        true_cate[i] = tau;
        let eps: f64 = StandardNormal.sample(&mut rng);
        y[i] = x[(i, 0)] - 0.5 * x[(i, 1)] + d[i] * tau + eps;
    }
    let frame = ObservationFrame::new(y, d, x)?;
    Ok(GeneratedData { scenario: scenario.clone(), frame, true_cate, true_beta0: beta0 })
}

/// Mean squared prediction error of a CATE predictor over evaluation rows.
pub fn cate_mse<P: CatePredictor + ?Sized>(
    predictor: &P,
    x_eval: &DMatrix<f64>,
    truth: &DVector<f64>,
) -> Result<f64> {
    if x_eval.nrows() != truth.len() || truth.is_empty() {
        return Err(Error::InvalidInput(format!(
            "evaluation rows ({}) and truth length ({}) must match and be non-empty",
            x_eval.nrows(),
            truth.len()
        )));
    }
    let p = x_eval.ncols();
    let mut row = vec![0.0; p];
    let mut total = 0.0;
    for i in 0..truth.len() {
        for (j, slot) in row.iter_mut().enumerate() {
            *slot = x_eval[(i, j)];
        }
        let diff = predictor.cate(&row) - truth[i];
        total += diff * diff;
    }
    Ok(total / truth.len() as f64)
}

/// Per-component accuracy and coverage over Monte Carlo replicates.
#[derive(Debug, Clone)]
pub struct ComponentSummary {
    /// Mean estimate minus truth.
    pub bias: f64,
    /// Sample standard deviation across replicates; `None` for one replicate.
    pub sd: Option<f64>,
    /// Mean bootstrap standard error.
    pub ese: f64,
    /// Fraction of nominal-level Wald intervals covering the truth.
    pub ci_coverage: f64,
}

/// Aggregate of a Monte Carlo run.
#[derive(Debug, Clone)]
pub struct ReplicationSummary {
    pub components: Vec<ComponentSummary>,
    pub cate_mse_mean: f64,
    pub cate_mse_sd: Option<f64>,
    pub reps: usize,
    pub failures: usize,
}

struct RepOutcome {
    gamma: DVector<f64>,
    ese: DVector<f64>,
    covered: Vec<bool>,
    mse: f64,
}

const EVAL_SAMPLE_SIZE: usize = 1000;

/// Nuisance configuration implied by the misspecification flags.
pub fn nuisance_config_for(misspec: MisspecFlags) -> NuisanceConfig {
    NuisanceConfig {
        propensity: if misspec.ps_ok {
            PropensityFamily::Logistic
        } else {
            PropensityFamily::Probit
        },
        outcome_map: if misspec.outcome_ok {
            FeatureMap::Linear
        } else {
            FeatureMap::QuadraticOnly
        },
        clip: Some(Clip::default()),
    }
}

fn fit_replicate(
    scenario: &Scenario,
    beta0: f64,
    rep: usize,
    fit_opts: &FitOptions,
) -> Result<(GeneratedData, SingleIndexFit, u64, u64)> {
    let base = derive_seed(scenario.seed, rep as u64);
    let data_seed = derive_seed(base, 1);
    let eval_seed = derive_seed(base, 2);
    let fit_seed = derive_seed(base, 3);
    let boot_seed = derive_seed(base, 4);

    let scn = Scenario { seed: data_seed, ..scenario.clone() };
    let data = generate_dataset_with_intercept(&scn, beta0)?;
    let cfg = nuisance_config_for(scenario.misspec);
    let pfit = fit_propensity(&data.frame, cfg.propensity)?;
    let ofit0 = fit_outcome_arm(&data.frame, 0, cfg.outcome_map)?;
    let ofit1 = fit_outcome_arm(&data.frame, 1, cfg.outcome_map)?;
    let pseudo = aipw_pseudo_outcome(&data.frame, &pfit, &ofit0, &ofit1, cfg.clip)?;
    let opts = FitOptions { seed: fit_seed, ..*fit_opts };
    let fit = fit_single_index(&pseudo, data.frame.x(), &opts)?;
    Ok((data, fit, eval_seed, boot_seed))
}

fn eval_mse(scenario: &Scenario, fit: &dyn CatePredictor, eval_seed: u64) -> Result<f64> {
    let x_eval = draw_covariates(scenario.covariate_law, EVAL_SAMPLE_SIZE, scenario.p(), eval_seed);
    let mut truth = DVector::zeros(EVAL_SAMPLE_SIZE);
    let mut row = vec![0.0; scenario.p()];
    for i in 0..EVAL_SAMPLE_SIZE {
        for (j, slot) in row.iter_mut().enumerate() {
            *slot = x_eval[(i, j)];
        }
        truth[i] = scenario.true_cate(&row);
    }
    cate_mse(fit, &x_eval, &truth)
}

fn run_one_replicate(
    scenario: &Scenario,
    beta0: f64,
    rep: usize,
    fit_opts: &FitOptions,
    boot_b: usize,
) -> Result<RepOutcome> {
    let (data, fit, eval_seed, boot_seed) = fit_replicate(scenario, beta0, rep, fit_opts)?;
    let cfg = nuisance_config_for(scenario.misspec);
    let fit_seed_opts = FitOptions { seed: derive_seed(boot_seed, 0), ..*fit_opts };
    let report = bootstrap_inference(
        &data.frame,
        &fit,
        &cfg,
        &fit_seed_opts,
        boot_b,
        0.95,
        boot_seed,
    )?;
    let covered = (0..scenario.p())
        .map(|j| {
            let (lo, hi) = report.ci_gamma[j];
            lo <= scenario.gamma_true[j] && scenario.gamma_true[j] <= hi
        })
        .collect();
    let mse = eval_mse(scenario, &fit, eval_seed)?;
    Ok(RepOutcome { gamma: fit.gamma, ese: report.se_gamma_boot, covered, mse })
}

fn with_pool<T: Send>(parallelism: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if parallelism == 0 {
        Ok(f())
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism)
            .build()
            .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
        Ok(pool.install(f))
    }
}

fn mean_and_sd(values: &[f64]) -> (f64, Option<f64>) {
    let m = values.len();
    let mean = values.iter().sum::<f64>() / m as f64;
    if m < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1) as f64;
    (mean, Some(var.sqrt()))
}

/// Runs `reps` independent replicates of generate / fit nuisances / AIPW /
/// sieve fit / bootstrap, and aggregates bias, spread, mean bootstrap SE,
/// and 95% interval coverage per index component plus out-of-sample CATE
/// mean squared error. Replicate failures are counted and tolerated up to
/// 10%. `parallelism = 0` uses the ambient thread pool.
pub fn run_monte_carlo(
    scenario: &Scenario,
    reps: usize,
    fit_opts: &FitOptions,
    boot_b: usize,
    parallelism: usize,
) -> Result<ReplicationSummary> {
    if reps == 0 {
        return Err(Error::InvalidInput("need at least one replicate".into()));
    }
    scenario.validate()?;
    let beta0 = calibrate_intercept(scenario, scenario.target_prop)?;

    let results: Vec<Result<RepOutcome>> = with_pool(parallelism, || {
        (0..reps)
            .into_par_iter()
            .map(|rep| run_one_replicate(scenario, beta0, rep, fit_opts, boot_b))
            .collect()
    })?;

    let mut outcomes = Vec::with_capacity(reps);
    let mut first_failure: Option<String> = None;
    for r in results {
        match r {
            Ok(o) => outcomes.push(o),
            Err(e) => {
                if first_failure.is_none() {
                    first_failure = Some(e.to_string());
                }
            }
        }
    }
    let failures = reps - outcomes.len();
    if failures * 10 > reps || outcomes.is_empty() {
        return Err(Error::Numeric(format!(
            "{failures} of {reps} Monte Carlo replicates failed (first failure: {})",
            first_failure.unwrap_or_else(|| "unknown".into())
        )));
    }

    let p = scenario.p();
    let mut components = Vec::with_capacity(p);
    for j in 0..p {
        let estimates: Vec<f64> = outcomes.iter().map(|o| o.gamma[j]).collect();
        let (mean_est, sd) = mean_and_sd(&estimates);
        let ese = outcomes.iter().map(|o| o.ese[j]).sum::<f64>() / outcomes.len() as f64;
        let covered = outcomes.iter().filter(|o| o.covered[j]).count();
        components.push(ComponentSummary {
            bias: mean_est - scenario.gamma_true[j],
            sd,
            ese,
            ci_coverage: covered as f64 / outcomes.len() as f64,
        });
    }
    let mses: Vec<f64> = outcomes.iter().map(|o| o.mse).collect();
    let (cate_mse_mean, cate_mse_sd) = mean_and_sd(&mses);
    Ok(ReplicationSummary {
        components,
        cate_mse_mean,
        cate_mse_sd,
        reps,
        failures,
    })
}

/// Out-of-sample CATE mean squared errors of the sieve fit and the forest
/// meta-learners on one shared replicate.
#[derive(Debug, Clone, Copy)]
pub struct MethodMse {
    pub sim: f64,
    pub t_rf: f64,
    pub x_rf: f64,
}

/// Per-replicate method comparison on identical data, for the qualitative
/// accuracy-ordering checks. No bootstrap; failures tolerated up to 10%.
pub fn run_method_comparison(
    scenario: &Scenario,
    reps: usize,
    fit_opts: &FitOptions,
    forest_opts: &ForestOptions,
    parallelism: usize,
) -> Result<Vec<MethodMse>> {
    if reps == 0 {
        return Err(Error::InvalidInput("need at least one replicate".into()));
    }
    scenario.validate()?;
    let beta0 = calibrate_intercept(scenario, scenario.target_prop)?;

    let results: Vec<Result<MethodMse>> = with_pool(parallelism, || {
        (0..reps)
            .into_par_iter()
            .map(|rep| {
                let (data, fit, eval_seed, aux_seed) =
                    fit_replicate(scenario, beta0, rep, fit_opts)?;
                let cfg = nuisance_config_for(scenario.misspec);
                let pfit = fit_propensity(&data.frame, cfg.propensity)?;
                let t_opts = ForestOptions { seed: derive_seed(aux_seed, 1), ..*forest_opts };
                let x_opts = ForestOptions { seed: derive_seed(aux_seed, 2), ..*forest_opts };
                let t_fit = t_learner_cate(&data.frame, &t_opts)?;
                let x_fit = x_learner_cate(&data.frame, &pfit, &x_opts)?;
                Ok(MethodMse {
                    sim: eval_mse(scenario, &fit, eval_seed)?,
                    t_rf: eval_mse(scenario, &t_fit, eval_seed)?,
                    x_rf: eval_mse(scenario, &x_fit, eval_seed)?,
                })
            })
            .collect()
    })?;

    let mut outcomes = Vec::with_capacity(reps);
    let mut first_failure: Option<String> = None;
    for r in results {
        match r {
            Ok(o) => outcomes.push(o),
            Err(e) => {
                if first_failure.is_none() {
                    first_failure = Some(e.to_string());
                }
            }
        }
    }
    let failures = reps - outcomes.len();
    if failures * 10 > reps || outcomes.is_empty() {
        return Err(Error::Numeric(format!(
            "{failures} of {reps} comparison replicates failed (first failure: {})",
            first_failure.unwrap_or_else(|| "unknown".into())
        )));
    }
    Ok(outcomes)
}

/// An inclusive arithmetic grid `start:stop:step`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl GridSpec {
    pub fn new(start: f64, stop: f64, step: f64) -> Result<Self> {
        if !start.is_finite() || !stop.is_finite() || !step.is_finite() {
            return Err(Error::InvalidInput("grid endpoints and step must be finite".into()));
        }
        if stop < start {
            return Err(Error::InvalidInput(format!(
                "grid stop {stop} is below start {start}"
            )));
        }
        if start != stop && step <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "grid step must be positive, got {step}"
            )));
        }
        Ok(Self { start, stop, step })
    }

    pub fn points(&self) -> Vec<f64> {
        if self.start == self.stop {
            return vec![self.start];
        }
        let mut pts = Vec::new();
        let mut i = 0usize;
        loop {
            let u = self.start + i as f64 * self.step;
            if u > self.stop + 1e-9 * self.step {
                break;
            }
            pts.push(u);
            i += 1;
        }
        pts
    }
}

/// One row of the estimated-link table.
#[derive(Debug, Clone, Copy)]
pub struct LinkCurvePoint {
    pub u: f64,
    pub g_hat: f64,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
}

/// Tabulates the estimated link over a grid, with a pointwise 95% Wald band
/// from the delta method when a coefficient covariance is available:
/// `se(u) = sqrt(H(u)' Cov(C) H(u))`.
pub fn link_curve(
    fit: &SingleIndexFit,
    coeff_cov: Option<&DMatrix<f64>>,
    grid: &GridSpec,
) -> Result<Vec<LinkCurvePoint>> {
    if let Some(cov) = coeff_cov {
        if cov.nrows() != fit.k || cov.ncols() != fit.k {
            return Err(Error::InvalidInput(format!(
                "coefficient covariance is {}x{}, expected {}x{}",
                cov.nrows(),
                cov.ncols(),
                fit.k,
                fit.k
            )));
        }
    }
    let z = normal_quantile(0.975)?;
    let c = fit.coeffs.values();
    grid.points()
        .into_iter()
        .map(|u| {
            let basis = eval_basis(u, fit.k)?;
            let g_hat: f64 = basis.h.iter().zip(c.iter()).map(|(h, cm)| h * cm).sum();
            let (lo, hi) = match coeff_cov {
                Some(cov) => {
                    let h = DVector::from_vec(basis.h.clone());
                    let var = (h.tr_mul(&(cov * &h)))[(0, 0)].max(0.0);
                    let se = var.sqrt();
                    (Some(g_hat - z * se), Some(g_hat + z * se))
                }
                None => (None, None),
            };
            Ok(LinkCurvePoint { u, g_hat, lo, hi })
        })
        .collect()
}
