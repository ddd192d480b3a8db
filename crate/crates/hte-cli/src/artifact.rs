//! On-disk fit artifact: a single self-describing JSON document.
//!
//! Every float survives a write/read cycle exactly (serde_json emits
//! shortest-round-trip decimals), so downstream commands can rebuild the
//! fitted model bit-for-bit.

use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FitArtifact {
    pub schema_version: u32,
    pub gamma: Vec<f64>,
    pub coeffs: Vec<f64>,
    pub k: usize,
    pub coeff_cap: f64,
    pub lambda: f64,
    pub sigma2: f64,
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    pub starts: usize,
    pub nuisance: NuisanceArtifact,
    pub inference: InferenceArtifact,
    pub columns: ColumnsArtifact,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NuisanceArtifact {
    pub propensity_family: String,
    pub propensity_beta: Vec<f64>,
    pub propensity_log_likelihood: f64,
    pub outcome_map: String,
    pub alpha_control: Vec<f64>,
    pub alpha_treated: Vec<f64>,
    pub clip: (f64, f64),
    pub n_clipped: usize,
}

/// Plug-in pieces are absent when the corresponding covariance was singular;
/// they are a fixed-truncation approximation either way.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct InferenceArtifact {
    pub level: f64,
    pub b_resamples: usize,
    pub b_failed: usize,
    pub se_gamma_boot: Vec<f64>,
    pub ci_gamma: Vec<(f64, f64)>,
    pub p_values: Vec<f64>,
    pub se_gamma_plugin: Option<Vec<f64>>,
    pub se_coeffs_plugin: Option<Vec<f64>>,
    pub sigma_gamma_reduced: Option<Vec<Vec<f64>>>,
    pub coeff_covariance: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ColumnsArtifact {
    pub outcome: String,
    pub treatment: String,
    pub covariates: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Provenance {
    pub seed: u64,
    pub k_requested: String,
    pub n_starts: usize,
    pub max_iter: usize,
    pub tol_obj: f64,
    pub tol_param: f64,
    pub clip_lo: f64,
    pub n_observations: usize,
    pub input_sha256: String,
}

pub fn matrix_to_rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_is_lossless() {
        let artifact = FitArtifact {
            schema_version: SCHEMA_VERSION,
            gamma: vec![0.8000000000000012, -0.5999999999999988, 1e-17],
            coeffs: vec![1.5832334870861595, std::f64::consts::PI],
            k: 2,
            coeff_cap: 1e6,
            lambda: -3.077e-9,
            sigma2: 7.023451098,
            objective: 6.9912,
            converged: true,
            iterations: 37,
            starts: 5,
            nuisance: NuisanceArtifact {
                propensity_family: "logistic".into(),
                propensity_beta: vec![-1.0551, 0.99, 0.001, -0.51],
                propensity_log_likelihood: -512.25,
                outcome_map: "linear".into(),
                alpha_control: vec![0.01, 1.0, -0.5, 0.0],
                alpha_treated: vec![0.02, 1.8, -1.1, 0.0],
                clip: (0.025, 0.975),
                n_clipped: 7,
            },
            inference: InferenceArtifact {
                level: 0.95,
                b_resamples: 100,
                b_failed: 0,
                se_gamma_boot: vec![0.059, 0.077, 0.093],
                ci_gamma: vec![(0.68, 0.92), (-0.75, -0.45), (-0.18, 0.18)],
                p_values: vec![0.0, 1e-15, 0.97],
                se_gamma_plugin: Some(vec![0.05, 0.07, 0.09]),
                se_coeffs_plugin: None,
                sigma_gamma_reduced: Some(vec![vec![0.001, 0.0], vec![0.0, 0.002]]),
                coeff_covariance: None,
            },
            columns: ColumnsArtifact {
                outcome: "y".into(),
                treatment: "d".into(),
                covariates: vec!["x1".into(), "x2".into(), "x3".into()],
            },
            provenance: Provenance {
                seed: 42,
                k_requested: "6".into(),
                n_starts: 5,
                max_iter: 200,
                tol_obj: 1e-10,
                tol_param: 1e-8,
                clip_lo: 0.025,
                n_observations: 1000,
                input_sha256: "deadbeef".into(),
            },
        };
        let text = serde_json::to_string_pretty(&artifact).unwrap();
        let back: FitArtifact = serde_json::from_str(&text).unwrap();
        assert_eq!(artifact, back);
        // bit-exact floats
        assert_eq!(artifact.gamma[0].to_bits(), back.gamma[0].to_bits());
        assert_eq!(artifact.lambda.to_bits(), back.lambda.to_bits());
    }
}
