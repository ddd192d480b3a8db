//! Subcommand implementations and the CSV surfaces.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};

use hte_core::data::{Clip, ObservationFrame};
use hte_core::estimator::{fit_single_index, FitOptions, SingleIndexFit, Truncation};
use hte_core::hermite::LinkCoefficients;
use hte_core::inference::{bootstrap_inference, InferenceReport};
use hte_core::normal::two_sided_p_value;
use hte_core::nuisance::{
    fit_outcome_arm, fit_propensity, FeatureMap, NuisanceConfig, PropensityFamily,
};
use hte_core::pseudo::aipw_pseudo_outcome;
use hte_core::seeding::derive_seed;
use hte_core::simulation::{
    calibrate_intercept, generate_dataset_with_intercept, link_curve, run_monte_carlo,
    CovariateLaw, GridSpec, LinkKind, MisspecFlags, Scenario,
};

use crate::artifact::{
    matrix_to_rows, ColumnsArtifact, FitArtifact, InferenceArtifact, NuisanceArtifact, Provenance,
    SCHEMA_VERSION,
};
use crate::{CliError, FitArgs, LinkCurveArgs, SimulateArgs};

type CliResult<T> = Result<T, CliError>;

/// Shortest decimal representation that round-trips to the same f64.
fn fmt(v: f64) -> String {
    format!("{v}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_else(|| "NA".into())
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents)
        .map_err(|e| CliError::new(1, format!("cannot write {}: {e}", path.display())))
}

fn parse_truncation(raw: &str) -> CliResult<Truncation> {
    if raw.eq_ignore_ascii_case("auto") {
        return Ok(Truncation::Auto);
    }
    raw.parse::<usize>()
        .ok()
        .filter(|k| *k >= 1)
        .map(Truncation::Fixed)
        .ok_or_else(|| CliError::new(2, format!("--k must be a positive integer or 'auto', got {raw:?}")))
}

fn fit_options(k: &str, starts: usize, seed: u64) -> CliResult<FitOptions> {
    Ok(FitOptions {
        k: parse_truncation(k)?,
        n_starts: starts,
        seed,
        ..Default::default()
    })
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

struct LoadedData {
    frame: ObservationFrame,
    digest: String,
}

fn load_csv(args: &FitArgs) -> CliResult<LoadedData> {
    let bytes = fs::read(&args.data)
        .map_err(|e| CliError::new(3, format!("cannot read {}: {e}", args.data.display())))?;
    let digest: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();

    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes.as_slice());
    let headers = reader
        .headers()
        .map_err(|e| CliError::new(3, format!("cannot parse CSV header: {e}")))?
        .clone();
    let column = |name: &str| -> CliResult<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::new(3, format!("column {name:?} not found in {}", args.data.display())))
    };
    let y_col = column(&args.outcome)?;
    let d_col = column(&args.treatment)?;
    if args.covariates.is_empty() {
        return Err(CliError::new(2, "--covariates must name at least one column"));
    }
    let x_cols = args
        .covariates
        .iter()
        .map(|c| column(c))
        .collect::<CliResult<Vec<_>>>()?;

    let mut y = Vec::new();
    let mut d = Vec::new();
    let mut x = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record =
            record.map_err(|e| CliError::new(3, format!("CSV row {}: {e}", row_idx + 2)))?;
        let cell = |col: usize, what: &str| -> CliResult<f64> {
            let raw = record.get(col).unwrap_or("");
            if raw.trim().is_empty() {
                return Err(CliError::new(
                    4,
                    format!("row {}: empty {what} cell (no imputation is performed)", row_idx + 2),
                ));
            }
            raw.trim().parse::<f64>().map_err(|_| {
                CliError::new(4, format!("row {}: {what} value {raw:?} is not numeric", row_idx + 2))
            })
        };
        y.push(cell(y_col, "outcome")?);
        let dv = cell(d_col, "treatment")?;
        if dv != 0.0 && dv != 1.0 {
            return Err(CliError::new(
                4,
                format!("row {}: treatment value {dv} is not 0 or 1", row_idx + 2),
            ));
        }
        d.push(dv);
        for (&col, name) in x_cols.iter().zip(&args.covariates) {
            x.push(cell(col, &format!("covariate {name}"))?);
        }
    }
    let n = y.len();
    let p = x_cols.len();
    let frame = ObservationFrame::new(
        DVector::from_vec(y),
        DVector::from_vec(d),
        DMatrix::from_row_slice(n, p, &x),
    )
    .map_err(CliError::from_core)?;
    Ok(LoadedData { frame, digest })
}

struct PipelineOutput {
    fit: SingleIndexFit,
    report: InferenceReport,
    pfit: hte_core::nuisance::PropensityFit,
    ofit0: hte_core::nuisance::OutcomeFit,
    ofit1: hte_core::nuisance::OutcomeFit,
    n_clipped: usize,
}

fn run_pipeline(
    frame: &ObservationFrame,
    cfg: &NuisanceConfig,
    opts: &FitOptions,
    boot: usize,
    level: f64,
    seed: u64,
) -> CliResult<PipelineOutput> {
    let pfit = fit_propensity(frame, cfg.propensity).map_err(CliError::from_core)?;
    let ofit0 = fit_outcome_arm(frame, 0, cfg.outcome_map).map_err(CliError::from_core)?;
    let ofit1 = fit_outcome_arm(frame, 1, cfg.outcome_map).map_err(CliError::from_core)?;
    let pseudo =
        aipw_pseudo_outcome(frame, &pfit, &ofit0, &ofit1, cfg.clip).map_err(CliError::from_core)?;
    let fit = fit_single_index(&pseudo, frame.x(), opts).map_err(CliError::from_core)?;
    let boot_opts = FitOptions { k: Truncation::Fixed(fit.k), ..*opts };
    let report = bootstrap_inference(frame, &fit, cfg, &boot_opts, boot, level, derive_seed(seed, 0xB007))
        .map_err(CliError::from_core)?;
    Ok(PipelineOutput { fit, report, pfit, ofit0, ofit1, n_clipped: pseudo.n_clipped })
}

fn p_value(est: f64, se: f64) -> f64 {
    if se == 0.0 {
        return if est == 0.0 { 1.0 } else { 0.0 };
    }
    two_sided_p_value(est / se)
}

fn coefficient_table(names: &[String], fit: &SingleIndexFit, report: &InferenceReport) -> String {
    let mut out = String::from("name,estimate,sd,p_value\n");
    for (j, name) in names.iter().enumerate() {
        let est = fit.gamma[j];
        let se = report.se_gamma_boot[j];
        out.push_str(&format!("{name},{},{},{}\n", fmt(est), fmt(se), fmt(p_value(est, se))));
    }
    out
}

pub fn run_fit(args: &FitArgs) -> CliResult<()> {
    if args.boot < 2 {
        return Err(CliError::new(2, "--boot must be at least 2"));
    }
    if !(args.level > 0.0 && args.level < 1.0) {
        return Err(CliError::new(2, "--level must lie in (0, 1)"));
    }
    let clip = Clip::symmetric(args.clip).map_err(CliError::from_core)?;
    let cfg = NuisanceConfig {
        propensity: match args.propensity.as_str() {
            "probit" => PropensityFamily::Probit,
            _ => PropensityFamily::Logistic,
        },
        outcome_map: match args.outcome_map.as_str() {
            "quadratic-only" => FeatureMap::QuadraticOnly,
            _ => FeatureMap::Linear,
        },
        clip: Some(clip),
    };
    let opts = fit_options(&args.k, args.starts, derive_seed(args.seed, 0xF1))?;
    let data = load_csv(args)?;
    if data.frame.p() != args.covariates.len() {
        return Err(CliError::new(3, "covariate count mismatch"));
    }
    let out =
        run_pipeline(&data.frame, &cfg, &opts, args.boot, args.level, args.seed)?;

    let artifact = FitArtifact {
        schema_version: SCHEMA_VERSION,
        gamma: out.fit.gamma.iter().copied().collect(),
        coeffs: out.fit.coeffs.values().iter().copied().collect(),
        k: out.fit.k,
        coeff_cap: out.fit.coeffs.cap(),
        lambda: out.fit.lambda,
        sigma2: out.fit.sigma2,
        objective: out.fit.objective,
        converged: out.fit.converged,
        iterations: out.fit.iterations,
        starts: out.fit.starts,
        nuisance: NuisanceArtifact {
            propensity_family: args.propensity.clone(),
            propensity_beta: out.pfit.beta.iter().copied().collect(),
            propensity_log_likelihood: out.pfit.log_likelihood,
            outcome_map: args.outcome_map.clone(),
            alpha_control: out.ofit0.alpha.iter().copied().collect(),
            alpha_treated: out.ofit1.alpha.iter().copied().collect(),
            clip: (clip.lo(), clip.hi()),
            n_clipped: out.n_clipped,
        },
        inference: InferenceArtifact {
            level: args.level,
            b_resamples: out.report.b_resamples,
            b_failed: out.report.b_failed,
            se_gamma_boot: out.report.se_gamma_boot.iter().copied().collect(),
            ci_gamma: out.report.ci_gamma.clone(),
            p_values: (0..data.frame.p())
                .map(|j| p_value(out.fit.gamma[j], out.report.se_gamma_boot[j]))
                .collect(),
            se_gamma_plugin: out
                .report
                .se_gamma_plugin
                .as_ref()
                .map(|v| v.iter().copied().collect()),
            se_coeffs_plugin: out
                .report
                .se_coeffs_plugin
                .as_ref()
                .map(|v| v.iter().copied().collect()),
            sigma_gamma_reduced: out.report.sigma_gamma_reduced.as_ref().map(matrix_to_rows),
            coeff_covariance: out.report.coeff_covariance.as_ref().map(matrix_to_rows),
        },
        columns: ColumnsArtifact {
            outcome: args.outcome.clone(),
            treatment: args.treatment.clone(),
            covariates: args.covariates.clone(),
        },
        provenance: Provenance {
            seed: args.seed,
            k_requested: args.k.clone(),
            n_starts: args.starts,
            max_iter: opts.max_iter,
            tol_obj: opts.tol_obj,
            tol_param: opts.tol_param,
            clip_lo: args.clip,
            n_observations: data.frame.n(),
            input_sha256: data.digest,
        },
    };
    let json = serde_json::to_string_pretty(&artifact)
        .map_err(|e| CliError::new(1, format!("artifact serialization: {e}")))?;
    write_file(&args.out, &(json + "\n"))?;

    // console summary mirroring the estimate / SD / p-value table layout
    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(
        stdout,
        "single-index fit: n = {}, k = {}, converged = {}, sigma2 = {:.6}",
        data.frame.n(),
        out.fit.k,
        out.fit.converged,
        out.fit.sigma2
    );
    let _ = writeln!(
        stdout,
        "bootstrap: B = {} ({} failed), level = {}",
        out.report.b_resamples, out.report.b_failed, args.level
    );
    let _ = writeln!(
        stdout,
        "{:<16} {:>12} {:>12} {:>12} {:>12} {:>10}",
        "covariate", "estimate", "sd", "ci_lo", "ci_hi", "p_value"
    );
    for (j, name) in args.covariates.iter().enumerate() {
        let (lo, hi) = out.report.ci_gamma[j];
        let _ = writeln!(
            stdout,
            "{:<16} {:>12.6} {:>12.6} {:>12.6} {:>12.6} {:>10.4}",
            name,
            out.fit.gamma[j],
            out.report.se_gamma_boot[j],
            lo,
            hi,
            p_value(out.fit.gamma[j], out.report.se_gamma_boot[j])
        );
    }

    if let Some(path) = &args.coef_out {
        write_file(path, &coefficient_table(&args.covariates, &out.fit, &out.report))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

fn scenario_from_args(args: &SimulateArgs) -> CliResult<Scenario> {
    let link = match args.link.as_str() {
        "cubic" => LinkKind::Cubic,
        _ => LinkKind::Linear,
    };
    let law = match args.covariate_law.as_str() {
        "uniform" => CovariateLaw::UniformUnit,
        _ => CovariateLaw::StandardNormal,
    };
    let misspec = MisspecFlags::from_triplet(&args.misspec)
        .map_err(|e| CliError::new(2, e.to_string()))?;
    let mut scenario = Scenario::benchmark(link, law, args.n, args.prop, args.seed);
    scenario.misspec = misspec;
    scenario.validate().map_err(CliError::from_core)?;
    Ok(scenario)
}

fn dataset_csv(frame: &ObservationFrame) -> String {
    let p = frame.p();
    let mut out = String::from("y,d");
    for j in 0..p {
        out.push_str(&format!(",x{}", j + 1));
    }
    out.push('\n');
    for i in 0..frame.n() {
        out.push_str(&fmt(frame.y()[i]));
        out.push(',');
        out.push_str(&fmt(frame.d()[i]));
        for j in 0..p {
            out.push(',');
            out.push_str(&fmt(frame.x()[(i, j)]));
        }
        out.push('\n');
    }
    out
}

pub fn run_simulate(args: &SimulateArgs) -> CliResult<()> {
    if args.reps == 0 {
        return Err(CliError::new(2, "--reps must be at least 1"));
    }
    if args.boot < 2 {
        return Err(CliError::new(2, "--boot must be at least 2"));
    }
    let scenario = scenario_from_args(args)?;
    let opts = fit_options(&args.k, args.starts, 0)?;

    if let Some(path) = &args.emit_data {
        // exactly the dataset replicate 0 of the Monte Carlo run sees
        let beta0 =
            calibrate_intercept(&scenario, scenario.target_prop).map_err(CliError::from_core)?;
        let mut first = scenario.clone();
        first.seed = derive_seed(derive_seed(scenario.seed, 0), 1);
        let data = generate_dataset_with_intercept(&first, beta0).map_err(CliError::from_core)?;
        write_file(path, &dataset_csv(&data.frame))?;
    }

    let summary =
        run_monte_carlo(&scenario, args.reps, &opts, args.boot, 0).map_err(CliError::from_core)?;

    let mut out = String::from("component,bias,sd,ese,ci_cover,cate_mse_mean,cate_mse_sd\n");
    for (j, c) in summary.components.iter().enumerate() {
        out.push_str(&format!(
            "gamma{},{},{},{},{},{},{}\n",
            j + 1,
            fmt(c.bias),
            fmt_opt(c.sd),
            fmt(c.ese),
            fmt(c.ci_coverage),
            fmt(summary.cate_mse_mean),
            fmt_opt(summary.cate_mse_sd),
        ));
    }
    write_file(&args.out, &out)?;
    println!(
        "simulate: {} replicates ({} failed), summary written to {}",
        summary.reps,
        summary.failures,
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// link-curve
// ---------------------------------------------------------------------------

fn parse_grid(raw: &str) -> CliResult<GridSpec> {
    let parts: Vec<&str> = raw.split(':').collect();
    if parts.len() != 3 {
        return Err(CliError::new(2, format!("grid must be start:stop:step, got {raw:?}")));
    }
    let nums = parts
        .iter()
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| CliError::new(2, format!("grid must be numeric, got {raw:?}")))?;
    GridSpec::new(nums[0], nums[1], nums[2]).map_err(|e| CliError::new(2, e.to_string()))
}

pub fn run_link_curve(args: &LinkCurveArgs) -> CliResult<()> {
    let text = fs::read_to_string(&args.artifact)
        .map_err(|e| CliError::new(3, format!("cannot read {}: {e}", args.artifact.display())))?;
    let artifact: FitArtifact = serde_json::from_str(&text)
        .map_err(|e| CliError::new(3, format!("cannot parse artifact: {e}")))?;
    if artifact.schema_version != SCHEMA_VERSION {
        return Err(CliError::new(
            3,
            format!("unsupported artifact schema version {}", artifact.schema_version),
        ));
    }
    let grid = parse_grid(&args.grid)?;

    let coeffs = LinkCoefficients::new(
        DVector::from_vec(artifact.coeffs.clone()),
        artifact.coeff_cap,
    )
    .map_err(CliError::from_core)?;
    let fit = SingleIndexFit {
        gamma: DVector::from_vec(artifact.gamma.clone()),
        coeffs,
        k: artifact.k,
        lambda: artifact.lambda,
        sigma2: artifact.sigma2,
        objective: artifact.objective,
        starts: artifact.starts,
        iterations: artifact.iterations,
        converged: artifact.converged,
    };
    let cov = artifact.inference.coeff_covariance.as_ref().map(|rows| {
        DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
    });
    let curve = link_curve(&fit, cov.as_ref(), &grid).map_err(CliError::from_core)?;

    let mut out = String::new();
    if cov.is_some() {
        out.push_str("u,g_hat,lo,hi\n");
        for pt in &curve {
            out.push_str(&format!(
                "{},{},{},{}\n",
                fmt(pt.u),
                fmt(pt.g_hat),
                fmt(pt.lo.unwrap()),
                fmt(pt.hi.unwrap())
            ));
        }
    } else {
        out.push_str("u,g_hat\n");
        for pt in &curve {
            out.push_str(&format!("{},{}\n", fmt(pt.u), fmt(pt.g_hat)));
        }
    }
    write_file(&args.out, &out)?;
    println!("link-curve: {} rows written to {}", curve.len(), args.out.display());
    Ok(())
}
