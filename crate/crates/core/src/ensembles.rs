//! Tree ensembles: random forest, gradient boosting on binomial deviance,
//! SAMME AdaBoost and regularised second-order boosting.
//!
//! Every learner is a pure function of `(matrix, config, seed)`. Random forest
//! trees are grown in parallel from per-tree seed streams, so the fitted
//! model does not depend on the number of worker threads.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::FeatureMatrix;
use crate::error::{Error, Result};
use crate::seed;
use crate::trees::{
    grow_with, normalize, Criterion, DecisionTree, LeafValue, Presorted, Rows, TreeParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    RandomForest,
    GradientBoosting,
    AdaBoost,
    SecondOrderBoosting,
}

impl LearnerKind {
    pub const ALL: [LearnerKind; 4] = [
        LearnerKind::RandomForest,
        LearnerKind::GradientBoosting,
        LearnerKind::AdaBoost,
        LearnerKind::SecondOrderBoosting,
    ];

    /// Command-line name.
    pub fn short_name(self) -> &'static str {
        match self {
            LearnerKind::RandomForest => "rf",
            LearnerKind::GradientBoosting => "gb",
            LearnerKind::AdaBoost => "ada",
            LearnerKind::SecondOrderBoosting => "xgb",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            LearnerKind::RandomForest => "Random Forest",
            LearnerKind::GradientBoosting => "Gradient Boosting",
            LearnerKind::AdaBoost => "AdaBoost",
            LearnerKind::SecondOrderBoosting => "Second-order Boosting",
        }
    }
}

impl std::fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.short_name())
    }
}

impl std::str::FromStr for LearnerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LearnerKind::ALL
            .into_iter()
            .find(|k| k.short_name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown learner {s:?}; expected rf, gb, ada or xgb"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomForestParams {
    pub n_trees: usize,
    /// Features tried per node; `None` means `floor(sqrt(d))`.
    pub mtry: Option<usize>,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Draw a bootstrap sample per tree. Turning it off is a test hook.
    pub bootstrap: bool,
}

impl Default for RandomForestParams {
    fn default() -> Self {
        let tree = TreeParams::classification();
        RandomForestParams {
            n_trees: 100,
            mtry: None,
            max_depth: tree.max_depth,
            min_samples_leaf: tree.min_samples_leaf,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientBoostingParams {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
}

impl Default for GradientBoostingParams {
    fn default() -> Self {
        let tree = TreeParams::regression();
        GradientBoostingParams {
            n_rounds: 100,
            learning_rate: 0.1,
            max_depth: tree.max_depth,
            min_samples_leaf: tree.min_samples_leaf,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaBoostParams {
    pub n_rounds: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
}

impl Default for AdaBoostParams {
    fn default() -> Self {
        AdaBoostParams {
            n_rounds: 100,
            max_depth: 1,
            min_samples_leaf: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecondOrderParams {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
}

impl Default for SecondOrderParams {
    fn default() -> Self {
        let tree = TreeParams::regression();
        SecondOrderParams {
            n_rounds: 100,
            learning_rate: 0.1,
            lambda: 1.0,
            gamma: 0.0,
            max_depth: tree.max_depth,
            min_samples_leaf: tree.min_samples_leaf,
        }
    }
}

/// Learner choice plus its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerConfig {
    RandomForest(RandomForestParams),
    GradientBoosting(GradientBoostingParams),
    AdaBoost(AdaBoostParams),
    SecondOrderBoosting(SecondOrderParams),
}

impl LearnerConfig {
    pub fn default_for(kind: LearnerKind) -> Self {
        match kind {
            LearnerKind::RandomForest => LearnerConfig::RandomForest(Default::default()),
            LearnerKind::GradientBoosting => LearnerConfig::GradientBoosting(Default::default()),
            LearnerKind::AdaBoost => LearnerConfig::AdaBoost(Default::default()),
            LearnerKind::SecondOrderBoosting => {
                LearnerConfig::SecondOrderBoosting(Default::default())
            }
        }
    }

    pub fn kind(&self) -> LearnerKind {
        match self {
            LearnerConfig::RandomForest(_) => LearnerKind::RandomForest,
            LearnerConfig::GradientBoosting(_) => LearnerKind::GradientBoosting,
            LearnerConfig::AdaBoost(_) => LearnerKind::AdaBoost,
            LearnerConfig::SecondOrderBoosting(_) => LearnerKind::SecondOrderBoosting,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        match *self {
            LearnerConfig::RandomForest(p) => {
                if p.n_trees == 0 {
                    return bad("n_trees must be >= 1");
                }
                if p.mtry == Some(0) {
                    return bad("mtry must be >= 1");
                }
            }
            LearnerConfig::GradientBoosting(p) => {
                if !(p.learning_rate > 0.0 && p.learning_rate <= 1.0) {
                    return bad("learning_rate must lie in (0, 1]");
                }
            }
            LearnerConfig::AdaBoost(p) => {
                if p.n_rounds == 0 {
                    return bad("n_rounds must be >= 1");
                }
            }
            LearnerConfig::SecondOrderBoosting(p) => {
                if !(p.learning_rate > 0.0 && p.learning_rate <= 1.0) {
                    return bad("learning_rate must lie in (0, 1]");
                }
                if !(p.lambda >= 0.0 && p.gamma >= 0.0) {
                    return bad("lambda and gamma must be >= 0");
                }
            }
        }
        Ok(())
    }
}

/// A fitted ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub kind: LearnerKind,
    pub config: LearnerConfig,
    pub trees: Vec<DecisionTree>,
    /// Uniform for forests, α per round for AdaBoost, the learning rate for
    /// the gradient boosters.
    pub tree_weights: Vec<f64>,
    /// Initial log-odds for the gradient boosters, 0 otherwise.
    pub base_score: f64,
    pub feature_names: Vec<String>,
    pub feature_importances: Vec<f64>,
}

fn rows_of(matrix: &FeatureMatrix) -> Rows<'_> {
    Rows::new(matrix.values(), matrix.n_features()).expect("feature matrix is rectangular")
}

fn require_both_classes(matrix: &FeatureMatrix) -> Result<()> {
    let [zeros, ones] = matrix.class_counts();
    if zeros == 0 || ones == 0 {
        return Err(Error::Training(format!(
            "training data must contain both classes (class 0: {zeros}, class 1: {ones})"
        )));
    }
    Ok(())
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean binomial deviance `-2/n Σ [y ln p + (1-y) ln(1-p)]` of log-odds margins.
pub fn binomial_deviance(labels: &[u8], margins: &[f64]) -> f64 {
    let total: f64 = labels
        .iter()
        .zip(margins)
        .map(|(&y, &f)| {
            // log(1 + e^f) - y f, computed without overflow
            let softplus = if f > 0.0 {
                f + (-f).exp().ln_1p()
            } else {
                f.exp().ln_1p()
            };
            softplus - f64::from(y) * f
        })
        .sum();
    2.0 * total / labels.len() as f64
}

/// Trains the configured learner.
pub fn train(matrix: &FeatureMatrix, config: &LearnerConfig, seed: u64) -> Result<EnsembleModel> {
    config.validate()?;
    match config {
        LearnerConfig::RandomForest(p) => train_random_forest(matrix, p, seed),
        LearnerConfig::GradientBoosting(p) => train_gradient_boosting(matrix, p),
        LearnerConfig::AdaBoost(p) => train_adaboost(matrix, p),
        LearnerConfig::SecondOrderBoosting(p) => train_second_order_boosting(matrix, p),
    }
}

/// Bootstrap-aggregated Gini trees with per-node feature sampling.
pub fn train_random_forest(
    matrix: &FeatureMatrix,
    params: &RandomForestParams,
    seed: u64,
) -> Result<EnsembleModel> {
    LearnerConfig::RandomForest(*params).validate()?;
    require_both_classes(matrix)?;
    let rows = rows_of(matrix);
    let n = rows.n_rows();
    let d = rows.n_features();
    let tree_params = TreeParams {
        max_depth: params.max_depth,
        min_samples_leaf: params.min_samples_leaf,
        mtry: Some(
            params
                .mtry
                .unwrap_or_else(|| ((d as f64).sqrt().floor() as usize).max(1))
                .min(d),
        ),
    };
    let criterion = Criterion::Gini {
        labels: matrix.labels(),
        weights: None,
    };
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let tree_seed = seed::derive(seed, t as u64);
            let slots: Vec<usize> = if params.bootstrap {
                let mut rng = seed::stream_rng(tree_seed, 0);
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let presorted = Presorted::new(rows, slots);
            grow_with(
                rows,
                criterion,
                &presorted,
                &tree_params,
                seed::derive(tree_seed, 1),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let weight = 1.0 / trees.len() as f64;
    Ok(finish(
        matrix,
        LearnerConfig::RandomForest(*params),
        trees,
        vec![weight; params.n_trees],
        0.0,
    ))
}

fn log_odds_prior(labels: &[u8]) -> f64 {
    let p = labels.iter().filter(|&&y| y == 1).count() as f64 / labels.len() as f64;
    (p / (1.0 - p)).ln()
}

/// Gradient boosting on binomial deviance: squared-error trees on the
/// residuals `y - p`, leaves replaced by the Newton step `Σr / Σp(1-p)`.
pub fn train_gradient_boosting(
    matrix: &FeatureMatrix,
    params: &GradientBoostingParams,
) -> Result<EnsembleModel> {
    LearnerConfig::GradientBoosting(*params).validate()?;
    require_both_classes(matrix)?;
    let rows = rows_of(matrix);
    let labels = matrix.labels();
    let base = log_odds_prior(labels);
    let tree_params = TreeParams {
        max_depth: params.max_depth,
        min_samples_leaf: params.min_samples_leaf,
        mtry: None,
    };
    let presorted = Presorted::all_rows(rows);
    let mut margins = vec![base; labels.len()];
    let mut trees = Vec::with_capacity(params.n_rounds);
    for _ in 0..params.n_rounds {
        let (residuals, hessians): (Vec<f64>, Vec<f64>) = labels
            .iter()
            .zip(&margins)
            .map(|(&y, &f)| {
                let p = sigmoid(f);
                (f64::from(y) - p, p * (1.0 - p))
            })
            .unzip();
        let criterion = Criterion::Newton {
            residuals: &residuals,
            hessians: &hessians,
        };
        let tree = grow_with(rows, criterion, &presorted, &tree_params, 0)?;
        for (i, f) in margins.iter_mut().enumerate() {
            *f += params.learning_rate * tree.leaf(rows.row(i)).value();
        }
        trees.push(tree);
    }
    let weights = vec![params.learning_rate; trees.len()];
    Ok(finish(
        matrix,
        LearnerConfig::GradientBoosting(*params),
        trees,
        weights,
        base,
    ))
}

/// SAMME AdaBoost with two classes, where `α = ln((1-ε)/ε)`.
pub fn train_adaboost(matrix: &FeatureMatrix, params: &AdaBoostParams) -> Result<EnsembleModel> {
    train_adaboost_traced(matrix, params).map(|(model, _)| model)
}

/// AdaBoost that also returns the sample-weight distribution after each round.
pub fn train_adaboost_traced(
    matrix: &FeatureMatrix,
    params: &AdaBoostParams,
) -> Result<(EnsembleModel, Vec<Vec<f64>>)> {
    LearnerConfig::AdaBoost(*params).validate()?;
    require_both_classes(matrix)?;
    let rows = rows_of(matrix);
    let labels = matrix.labels();
    let n = labels.len();
    let tree_params = TreeParams {
        max_depth: params.max_depth,
        min_samples_leaf: params.min_samples_leaf,
        mtry: None,
    };
    let presorted = Presorted::all_rows(rows);
    let mut weights = vec![1.0 / n as f64; n];
    let mut trees = Vec::new();
    let mut alphas = Vec::new();
    let mut history = Vec::new();

    for _ in 0..params.n_rounds {
        let criterion = Criterion::Gini {
            labels,
            weights: Some(&weights),
        };
        let tree = grow_with(rows, criterion, &presorted, &tree_params, 0)?;
        let missed: Vec<bool> = (0..n)
            .map(|i| vote(tree.leaf(rows.row(i))) != labels[i])
            .collect();
        let total: f64 = weights.iter().sum();
        let error: f64 = weights
            .iter()
            .zip(&missed)
            .filter(|(_, &m)| m)
            .map(|(w, _)| w)
            .sum::<f64>()
            / total;

        if error <= 0.0 {
            // a perfect learner ends boosting; its weight is the clamped α
            trees.push(tree);
            alphas.push(samme_alpha(1e-10));
            history.push(weights.clone());
            break;
        }
        if error >= 0.5 {
            // no better than chance: keep it only if the ensemble would be empty
            if trees.is_empty() {
                trees.push(tree);
                alphas.push(1.0);
                history.push(weights.clone());
            }
            break;
        }
        let alpha = samme_alpha(error);
        let boost = alpha.exp();
        for (w, &m) in weights.iter_mut().zip(&missed) {
            if m {
                *w *= boost;
            }
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        trees.push(tree);
        alphas.push(alpha);
        history.push(weights.clone());
    }
    let model = finish(matrix, LearnerConfig::AdaBoost(*params), trees, alphas, 0.0);
    Ok((model, history))
}

/// `ln((1-ε)/ε) + ln(K-1)` with `K = 2`.
pub fn samme_alpha(error: f64) -> f64 {
    ((1.0 - error) / error).ln() + (2.0_f64 - 1.0).ln()
}

#[inline]
fn vote(leaf: &LeafValue) -> u8 {
    u8::from(leaf.proba()[1] > 0.5)
}

/// Regularised second-order boosting on log loss: splits maximise
/// `½[G_L²/(H_L+λ) + G_R²/(H_R+λ) - G²/(H+λ)] - γ`, leaves hold `-G/(H+λ)`.
pub fn train_second_order_boosting(
    matrix: &FeatureMatrix,
    params: &SecondOrderParams,
) -> Result<EnsembleModel> {
    LearnerConfig::SecondOrderBoosting(*params).validate()?;
    require_both_classes(matrix)?;
    let rows = rows_of(matrix);
    let labels = matrix.labels();
    let base = log_odds_prior(labels);
    let tree_params = TreeParams {
        max_depth: params.max_depth,
        min_samples_leaf: params.min_samples_leaf,
        mtry: None,
    };
    let presorted = Presorted::all_rows(rows);
    let mut margins = vec![base; labels.len()];
    let mut trees = Vec::with_capacity(params.n_rounds);
    for _ in 0..params.n_rounds {
        let (gradients, hessians): (Vec<f64>, Vec<f64>) = labels
            .iter()
            .zip(&margins)
            .map(|(&y, &f)| {
                let p = sigmoid(f);
                (p - f64::from(y), p * (1.0 - p))
            })
            .unzip();
        let criterion = Criterion::SecondOrder {
            gradients: &gradients,
            hessians: &hessians,
            lambda: params.lambda,
            gamma: params.gamma,
        };
        let tree = grow_with(rows, criterion, &presorted, &tree_params, 0)?;
        for (i, f) in margins.iter_mut().enumerate() {
            *f += params.learning_rate * tree.leaf(rows.row(i)).value();
        }
        trees.push(tree);
    }
    let weights = vec![params.learning_rate; trees.len()];
    Ok(finish(
        matrix,
        LearnerConfig::SecondOrderBoosting(*params),
        trees,
        weights,
        base,
    ))
}

fn finish(
    matrix: &FeatureMatrix,
    config: LearnerConfig,
    trees: Vec<DecisionTree>,
    tree_weights: Vec<f64>,
    base_score: f64,
) -> EnsembleModel {
    let mut model = EnsembleModel {
        kind: config.kind(),
        config,
        trees,
        tree_weights,
        base_score,
        feature_names: matrix.columns().to_vec(),
        feature_importances: Vec::new(),
    };
    model.feature_importances = mean_tree_importance(&model);
    model
}

fn mean_tree_importance(model: &EnsembleModel) -> Vec<f64> {
    let mut total = vec![0.0; model.feature_names.len()];
    for tree in &model.trees {
        for (t, v) in total.iter_mut().zip(tree.feature_importance()) {
            *t += v;
        }
    }
    if !model.trees.is_empty() {
        let k = model.trees.len() as f64;
        total.iter_mut().for_each(|t| *t /= k);
    }
    normalize(&mut total);
    total
}

/// Impurity importance averaged over trees (gain-based for second-order
/// boosting), renormalised and paired with feature names.
pub fn ensemble_gini_importance(model: &EnsembleModel) -> Vec<(String, f64)> {
    model
        .feature_names
        .iter()
        .cloned()
        .zip(mean_tree_importance(model))
        .collect()
}

impl EnsembleModel {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Boosting log-odds (or AdaBoost normalised vote margin) for a row.
    fn margin(&self, row: &[f64]) -> f64 {
        match self.kind {
            LearnerKind::AdaBoost => {
                let total: f64 = self.tree_weights.iter().sum();
                let signed: f64 = self
                    .trees
                    .iter()
                    .zip(&self.tree_weights)
                    .map(|(t, a)| if vote(t.leaf(row)) == 1 { *a } else { -a })
                    .sum();
                signed / total
            }
            _ => {
                self.base_score
                    + self
                        .trees
                        .iter()
                        .zip(&self.tree_weights)
                        .map(|(t, w)| w * t.leaf(row).value())
                        .sum::<f64>()
            }
        }
    }

    /// `[p(class 0), p(class 1)]` for one row.
    pub fn predict_proba(&self, row: &[f64]) -> Result<[f64; 2]> {
        if row.len() != self.n_features() {
            return Err(Error::Dimension {
                expected: self.n_features(),
                got: row.len(),
            });
        }
        let p1 = match self.kind {
            LearnerKind::RandomForest => self
                .trees
                .iter()
                .zip(&self.tree_weights)
                .map(|(t, w)| w * t.leaf(row).proba()[1])
                .sum::<f64>()
                .clamp(0.0, 1.0),
            // SAMME two-class mapping: softmax(-m/2, m/2) = sigmoid(m)
            _ => sigmoid(self.margin(row)),
        };
        Ok([1.0 - p1, p1])
    }

    /// Class decision at 0.5, ties to class 0.
    pub fn predict(&self, row: &[f64]) -> Result<u8> {
        self.predict_proba(row).map(|p| u8::from(p[1] > p[0]))
    }

    pub fn predict_matrix(&self, matrix: &FeatureMatrix) -> Result<Vec<u8>> {
        if matrix.n_features() != self.n_features() {
            return Err(Error::Dimension {
                expected: self.n_features(),
                got: matrix.n_features(),
            });
        }
        (0..matrix.n_rows())
            .into_par_iter()
            .map(|i| self.predict(matrix.row(i)))
            .collect()
    }

    /// Log-odds after each boosting stage, starting with the base score.
    pub fn staged_margins(&self, row: &[f64]) -> Result<Vec<f64>> {
        if !matches!(
            self.kind,
            LearnerKind::GradientBoosting | LearnerKind::SecondOrderBoosting
        ) {
            return Err(Error::Config(format!(
                "{} has no additive stages",
                self.kind
            )));
        }
        if row.len() != self.n_features() {
            return Err(Error::Dimension {
                expected: self.n_features(),
                got: row.len(),
            });
        }
        let mut f = self.base_score;
        let mut staged = vec![f];
        for (t, w) in self.trees.iter().zip(&self.tree_weights) {
            f += w * t.leaf(row).value();
            staged.push(f);
        }
        Ok(staged)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: EnsembleModel = serde_json::from_str(text)?;
        if model.trees.is_empty() || model.trees.len() != model.tree_weights.len() {
            return Err(Error::Schema(
                "model needs as many tree weights as trees, and at least one tree".into(),
            ));
        }
        if model
            .trees
            .iter()
            .any(|t| t.feature_count != model.feature_names.len())
        {
            return Err(Error::Schema(
                "tree width disagrees with feature names".into(),
            ));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
