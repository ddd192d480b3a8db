//! Bagged CART regression forests and the T-/X-learner CATE baselines.
//!
//! Minimal from-scratch forests: axis-aligned binary splits chosen by
//! exhaustive scan over sorted distinct values to minimize child-weighted
//! squared error, sqrt(p) features considered per node, bootstrap-sampled
//! trees averaged for prediction. Enough machinery to reproduce the
//! qualitative accuracy ordering against the sieve estimator; no honest
//! splitting or tuning.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{Clip, ObservationFrame};
use crate::error::{Error, Result};
use crate::estimator::CatePredictor;
use crate::nuisance::{predict_propensity, PropensityFit};
use crate::seeding::derive_seed;

/// Forest hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct ForestOptions {
    pub n_trees: usize,
    pub min_leaf: usize,
    pub max_depth: usize,
    pub seed: u64,
}

impl Default for ForestOptions {
    fn default() -> Self {
        Self { n_trees: 200, min_leaf: 5, max_depth: 12, seed: 0 }
    }
}

#[derive(Debug, Clone)]
enum TreeNode {
    Leaf { value: f64 },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<TreeNode>,
}

impl Tree {
    fn predict(&self, x_row: &[f64]) -> f64 {
        let mut node = 0usize;
        loop {
            match &self.nodes[node] {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split { feature, threshold, left, right } => {
                    node = if x_row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }
}

/// A bagged ensemble of CART regression trees.
#[derive(Debug, Clone)]
pub struct RegressionForest {
    trees: Vec<Tree>,
    n_features: usize,
    pub opts: ForestOptions,
}

impl RegressionForest {
    /// Average prediction over all trees.
    pub fn predict(&self, x_row: &[f64]) -> f64 {
        debug_assert_eq!(x_row.len(), self.n_features);
        let total: f64 = self.trees.iter().map(|t| t.predict(x_row)).sum();
        total / self.trees.len() as f64
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }
}

struct TreeBuilder<'a> {
    x: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
    min_leaf: usize,
    max_depth: usize,
    mtry: usize,
    nodes: Vec<TreeNode>,
    feature_scratch: Vec<usize>,
}

impl<'a> TreeBuilder<'a> {
    fn new(x: &'a DMatrix<f64>, y: &'a DVector<f64>, opts: &ForestOptions) -> Self {
        let p = x.ncols();
        let mtry = ((p as f64).sqrt().round() as usize).clamp(1, p);
        Self {
            x,
            y,
            min_leaf: opts.min_leaf,
            max_depth: opts.max_depth,
            mtry,
            nodes: Vec::new(),
            feature_scratch: (0..p).collect(),
        }
    }

    fn sample_features(&mut self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let p = self.feature_scratch.len();
        for i in 0..self.mtry {
            let j = rng.random_range(i..p);
            self.feature_scratch.swap(i, j);
        }
        self.feature_scratch[..self.mtry].to_vec()
    }

    fn grow(&mut self, mut rows: Vec<u32>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let m = rows.len();
        let sum: f64 = rows.iter().map(|&r| self.y[r as usize]).sum();
        let sum_sq: f64 = rows.iter().map(|&r| self.y[r as usize] * self.y[r as usize]).sum();
        let mean = sum / m as f64;
        let node_sse = sum_sq - sum * sum / m as f64;

        if depth >= self.max_depth || m < 2 * self.min_leaf || node_sse <= 1e-12 {
            self.nodes.push(TreeNode::Leaf { value: mean });
            return self.nodes.len() - 1;
        }

        let mut best: Option<(f64, usize, f64)> = None;
        for feature in self.sample_features(rng) {
            rows.sort_by(|&a, &b| {
                self.x[(a as usize, feature)]
                    .partial_cmp(&self.x[(b as usize, feature)])
                    .expect("finite covariates")
            });
            let mut left_sum = 0.0;
            let mut left_sq = 0.0;
            for i in 0..m - 1 {
                let yi = self.y[rows[i] as usize];
                left_sum += yi;
                left_sq += yi * yi;
                let n_left = i + 1;
                let n_right = m - n_left;
                if n_left < self.min_leaf || n_right < self.min_leaf {
                    continue;
                }
                let here = self.x[(rows[i] as usize, feature)];
                let next = self.x[(rows[i + 1] as usize, feature)];
                if here >= next {
                    continue; // can only split between distinct values
                }
                let right_sum = sum - left_sum;
                let right_sq = sum_sq - left_sq;
                let sse = (left_sq - left_sum * left_sum / n_left as f64)
                    + (right_sq - right_sum * right_sum / n_right as f64);
                if best.map(|(b, _, _)| sse < b - 1e-12).unwrap_or(true) {
                    best = Some((sse, feature, 0.5 * (here + next)));
                }
            }
        }

        match best {
            Some((sse, feature, threshold)) if sse < node_sse - 1e-12 => {
                let (left_rows, right_rows): (Vec<u32>, Vec<u32>) = rows
                    .iter()
                    .partition(|&&r| self.x[(r as usize, feature)] <= threshold);
                let slot = self.nodes.len();
                self.nodes.push(TreeNode::Leaf { value: mean }); // placeholder
                let left = self.grow(left_rows, depth + 1, rng);
                let right = self.grow(right_rows, depth + 1, rng);
                self.nodes[slot] = TreeNode::Split { feature, threshold, left, right };
                slot
            }
            _ => {
                self.nodes.push(TreeNode::Leaf { value: mean });
                self.nodes.len() - 1
            }
        }
    }
}

fn build_tree(x: &DMatrix<f64>, y: &DVector<f64>, rows: Vec<u32>, opts: &ForestOptions, rng: &mut ChaCha8Rng) -> Tree {
    let mut builder = TreeBuilder::new(x, y, opts);
    let root = builder.grow(rows, 0, rng);
    debug_assert_eq!(root, 0);
    Tree { nodes: builder.nodes }
}

/// Fits a bagged regression forest; trees train concurrently with seeds
/// derived per tree.
pub fn fit_regression_forest(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    opts: &ForestOptions,
) -> Result<RegressionForest> {
    let n = x.nrows();
    if n != y.len() {
        return Err(Error::InvalidInput(format!(
            "x has {n} rows but y has {}",
            y.len()
        )));
    }
    if opts.n_trees == 0 || opts.min_leaf == 0 {
        return Err(Error::InvalidInput("n_trees and min_leaf must be >= 1".into()));
    }
    if n < 2 * opts.min_leaf {
        return Err(Error::InvalidInput(format!(
            "need at least 2 * min_leaf = {} rows, got {n}",
            2 * opts.min_leaf
        )));
    }
    if x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("forest inputs must be finite".into()));
    }
    let trees: Vec<Tree> = (0..opts.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, t as u64));
            let rows: Vec<u32> = (0..n).map(|_| rng.random_range(0..n) as u32).collect();
            build_tree(x, y, rows, opts, &mut rng)
        })
        .collect();
    Ok(RegressionForest { trees, n_features: x.ncols(), opts: *opts })
}

fn arm_data(frame: &ObservationFrame, arm: u8) -> (DMatrix<f64>, DVector<f64>) {
    let rows = frame.arm_indices(arm);
    let p = frame.p();
    let mut x = DMatrix::zeros(rows.len(), p);
    let mut y = DVector::zeros(rows.len());
    for (r, &i) in rows.iter().enumerate() {
        for j in 0..p {
            x[(r, j)] = frame.x()[(i, j)];
        }
        y[r] = frame.y()[i];
    }
    (x, y)
}

fn check_arm_sizes(frame: &ObservationFrame, opts: &ForestOptions) -> Result<()> {
    for arm in [0u8, 1] {
        let size = frame.arm_indices(arm).len();
        if size < 2 * opts.min_leaf {
            return Err(Error::InvalidInput(format!(
                "arm {arm} has {size} rows; forest learners need at least {}",
                2 * opts.min_leaf
            )));
        }
    }
    Ok(())
}

/// T-learner: separate forests per arm, CATE as their difference.
#[derive(Debug, Clone)]
pub struct TLearnerFit {
    pub f1: RegressionForest,
    pub f0: RegressionForest,
}

pub fn t_learner_cate(frame: &ObservationFrame, opts: &ForestOptions) -> Result<TLearnerFit> {
    check_arm_sizes(frame, opts)?;
    let (x1, y1) = arm_data(frame, 1);
    let (x0, y0) = arm_data(frame, 0);
    let f1 = fit_regression_forest(&x1, &y1, &ForestOptions { seed: derive_seed(opts.seed, 1), ..*opts })?;
    let f0 = fit_regression_forest(&x0, &y0, &ForestOptions { seed: derive_seed(opts.seed, 2), ..*opts })?;
    Ok(TLearnerFit { f1, f0 })
}

impl CatePredictor for TLearnerFit {
    fn cate(&self, x_row: &[f64]) -> f64 {
        self.f1.predict(x_row) - self.f0.predict(x_row)
    }
}

/// X-learner: cross-arm imputed effects regressed per arm, combined with
/// propensity weights `pi(x) tau0(x) + (1 - pi(x)) tau1(x)`.
#[derive(Debug, Clone)]
pub struct XLearnerFit {
    pub tau1: RegressionForest,
    pub tau0: RegressionForest,
    pub propensity: PropensityFit,
    pub clip: Clip,
}

pub fn x_learner_cate(
    frame: &ObservationFrame,
    pfit: &PropensityFit,
    opts: &ForestOptions,
) -> Result<XLearnerFit> {
    check_arm_sizes(frame, opts)?;
    let (x1, y1) = arm_data(frame, 1);
    let (x0, y0) = arm_data(frame, 0);
    let f1 = fit_regression_forest(&x1, &y1, &ForestOptions { seed: derive_seed(opts.seed, 3), ..*opts })?;
    let f0 = fit_regression_forest(&x0, &y0, &ForestOptions { seed: derive_seed(opts.seed, 4), ..*opts })?;

    // imputed individual effects: treated use the control forest, controls
    // use the treated forest
    let mut d1 = DVector::zeros(y1.len());
    for i in 0..y1.len() {
        let row: Vec<f64> = (0..x1.ncols()).map(|j| x1[(i, j)]).collect();
        d1[i] = y1[i] - f0.predict(&row);
    }
    let mut d0 = DVector::zeros(y0.len());
    for i in 0..y0.len() {
        let row: Vec<f64> = (0..x0.ncols()).map(|j| x0[(i, j)]).collect();
        d0[i] = f1.predict(&row) - y0[i];
    }

    let tau1 = fit_regression_forest(&x1, &d1, &ForestOptions { seed: derive_seed(opts.seed, 5), ..*opts })?;
    let tau0 = fit_regression_forest(&x0, &d0, &ForestOptions { seed: derive_seed(opts.seed, 6), ..*opts })?;
    Ok(XLearnerFit { tau1, tau0, propensity: pfit.clone(), clip: Clip::default() })
}

impl CatePredictor for XLearnerFit {
    fn cate(&self, x_row: &[f64]) -> f64 {
        let pi = predict_propensity(&self.propensity, x_row, self.clip);
        pi * self.tau0.predict(x_row) + (1.0 - pi) * self.tau1.predict(x_row)
    }
}
