//! Evaluation protocols: oversampling, stratified splits and folds, metrics,
//! repeated hold-out and k-fold cross-validation.
//!
//! Balancing always happens after partitioning and only on the training side.
//! Each protocol first builds explicit [`PartitionPlan`]s, so the rows that
//! reach training and testing can be audited independently of the learners.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::FeatureMatrix;
use crate::ensembles::{train, LearnerConfig, LearnerKind};
use crate::error::{Error, Result};
use crate::seed;

/// z value of a two-sided 95% normal interval.
pub const Z_95: f64 = 1.96;

fn class_indices(labels: &[u8]) -> [Vec<usize>; 2] {
    let mut by_class = [Vec::new(), Vec::new()];
    for (i, &y) in labels.iter().enumerate() {
        by_class[usize::from(y)].push(i);
    }
    by_class
}

/// Indices of a balanced sample: every original row once, in order, followed
/// by minority rows drawn with replacement until the class counts match.
pub fn oversample_indices(labels: &[u8], seed: u64) -> Result<Vec<usize>> {
    let [zeros, ones] = class_indices(labels);
    if zeros.is_empty() || ones.is_empty() {
        return Err(Error::Balancing(format!(
            "oversampling needs both classes (class 0: {}, class 1: {})",
            zeros.len(),
            ones.len()
        )));
    }
    let (minority, deficit) = if zeros.len() < ones.len() {
        (&zeros, ones.len() - zeros.len())
    } else {
        (&ones, zeros.len() - ones.len())
    };
    let mut rng = seed::rng(seed);
    let mut out: Vec<usize> = (0..labels.len()).collect();
    out.extend((0..deficit).map(|_| minority[rng.random_range(0..minority.len())]));
    Ok(out)
}

/// Random oversampling of the minority class to parity.
pub fn oversample(matrix: &FeatureMatrix, seed: u64) -> Result<FeatureMatrix> {
    Ok(matrix.select(&oversample_indices(matrix.labels(), seed)?))
}

/// Stratified hold-out partition as sorted `(train, test)` index lists.
pub fn stratified_split_indices(
    labels: &[u8],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let mut rng = seed::rng(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class, mut members) in class_indices(labels).into_iter().enumerate() {
        let n = members.len();
        let n_test = (n as f64 * test_fraction).round() as usize;
        if n < 2 || n_test == 0 || n_test == n {
            return Err(Error::Split(format!(
                "class {class} has {n} rows; a {test_fraction} test fraction leaves one side without it"
            )));
        }
        members.shuffle(&mut rng);
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub fn stratified_split(
    matrix: &FeatureMatrix,
    test_fraction: f64,
    seed: u64,
) -> Result<(FeatureMatrix, FeatureMatrix)> {
    let (train, test) = stratified_split_indices(matrix.labels(), test_fraction, seed)?;
    Ok((matrix.select(&train), matrix.select(&test)))
}

/// Stratified k folds as sorted `(train, validation)` index lists.
///
/// Each class is shuffled and dealt round-robin; the dealing position carries
/// over from one class to the next so total fold sizes also differ by at most one.
pub fn kfold_indices(labels: &[u8], k: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if k < 2 {
        return Err(Error::Config(format!("k must be >= 2, got {k}")));
    }
    let mut rng = seed::rng(seed);
    let mut folds = vec![Vec::new(); k];
    let mut position = 0;
    for (class, mut members) in class_indices(labels).into_iter().enumerate() {
        if members.len() < k {
            return Err(Error::Config(format!(
                "k = {k} exceeds the {} rows of class {class}",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        for i in members {
            folds[position % k].push(i);
            position += 1;
        }
    }
    Ok(folds
        .into_iter()
        .map(|mut validation| {
            validation.sort_unstable();
            let mut held = vec![false; labels.len()];
            validation.iter().for_each(|&i| held[i] = true);
            let train = (0..labels.len()).filter(|&i| !held[i]).collect();
            (train, validation)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    /// `counts[actual][predicted]`.
    pub counts: [[u64; 2]; 2],
}

impl ConfusionMatrix {
    pub fn from_predictions(actual: &[u8], predicted: &[u8]) -> Result<Self> {
        if actual.len() != predicted.len() {
            return Err(Error::Dimension {
                expected: actual.len(),
                got: predicted.len(),
            });
        }
        let mut cm = ConfusionMatrix::default();
        for (&a, &p) in actual.iter().zip(predicted) {
            cm.counts[usize::from(a)][usize::from(p)] += 1;
        }
        Ok(cm)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub classes: [ClassMetrics; 2],
    /// Some precision, recall or F1 had a zero denominator and was set to 0.
    pub zero_denominator: bool,
}

fn ratio(num: u64, den: u64, flag: &mut bool) -> f64 {
    if den == 0 {
        *flag = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Domain("confusion matrix is empty".into()));
    }
    let c = &cm.counts;
    let mut flag = false;
    let mut classes = [ClassMetrics::default(); 2];
    for (k, m) in classes.iter_mut().enumerate() {
        let other = 1 - k;
        let tp = c[k][k];
        m.precision = ratio(tp, tp + c[other][k], &mut flag);
        m.recall = ratio(tp, tp + c[k][other], &mut flag);
        let pr = m.precision + m.recall;
        m.f1 = if pr > 0.0 {
            2.0 * m.precision * m.recall / pr
        } else {
            flag = true;
            0.0
        };
    }
    Ok(Metrics {
        accuracy: (c[0][0] + c[1][1]) as f64 / total as f64,
        classes,
        zero_denominator: flag,
    })
}

/// Mean and 95% margin of error of one metric across repeats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub margin: f64,
}

/// `1.96 · sd / √R` with the n-1 standard deviation; 0 for a single repeat.
pub fn summarize(values: &[f64]) -> Summary {
    let r = values.len() as f64;
    if values.is_empty() {
        return Summary {
            mean: f64::NAN,
            margin: 0.0,
        };
    }
    if values.iter().all(|&v| v == values[0]) {
        return Summary {
            mean: values[0],
            margin: 0.0,
        };
    }
    let mean = values.iter().sum::<f64>() / r;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1.0);
    Summary {
        mean,
        margin: Z_95 * var.sqrt() / r.sqrt(),
    }
}

/// Rows used by one repeat or fold, as indices into the evaluated matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionPlan {
    /// Training rows after oversampling; duplicates are expected here.
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub train_seed: u64,
}

impl PartitionPlan {
    /// Test rows that repeat within the test side or also occur in training.
    pub fn leaked_rows(&self, n_rows: usize) -> usize {
        let mut seen_train = vec![false; n_rows];
        self.train.iter().for_each(|&i| seen_train[i] = true);
        let mut seen_test = vec![false; n_rows];
        self.test
            .iter()
            .filter(|&&i| std::mem::replace(&mut seen_test[i], true) || seen_train[i])
            .count()
    }
}

pub fn holdout_plans(
    labels: &[u8],
    test_fraction: f64,
    repeats: usize,
    seed: u64,
) -> Result<Vec<PartitionPlan>> {
    if repeats == 0 {
        return Err(Error::Config("repeats must be >= 1".into()));
    }
    (0..repeats)
        .map(|r| {
            let rs = seed::derive(seed, r as u64);
            let (train, test) =
                stratified_split_indices(labels, test_fraction, seed::derive(rs, 0)).map_err(
                    |e| Error::Repeat {
                        index: r,
                        source: Box::new(e),
                    },
                )?;
            Ok(PartitionPlan {
                train: balance(labels, &train, seed::derive(rs, 1))?,
                test,
                train_seed: seed::derive(rs, 2),
            })
        })
        .collect()
}

pub fn cv_plans(labels: &[u8], k: usize, seed: u64) -> Result<Vec<PartitionPlan>> {
    let folds = kfold_indices(labels, k, seed::derive(seed, 0))?;
    let fold_seed = seed::derive(seed, 1);
    folds
        .into_iter()
        .enumerate()
        .map(|(f, (train, test))| {
            let fs = seed::derive(fold_seed, f as u64);
            Ok(PartitionPlan {
                train: balance(labels, &train, seed::derive(fs, 1))?,
                test,
                train_seed: seed::derive(fs, 2),
            })
        })
        .collect()
}

/// Oversamples a subset of rows, returning indices into the full label list.
fn balance(labels: &[u8], subset: &[usize], seed: u64) -> Result<Vec<usize>> {
    let sub_labels: Vec<u8> = subset.iter().map(|&i| labels[i]).collect();
    Ok(oversample_indices(&sub_labels, seed)?
        .into_iter()
        .map(|j| subset[j])
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Holdout,
    CrossValidation,
}

/// Outcome of one repeat or fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatResult {
    pub index: usize,
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
    pub train_rows: usize,
    pub test_rows: usize,
    /// Test rows duplicated or shared with training; always 0.
    pub leaked_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub course_id: Option<String>,
    pub learner: LearnerKind,
    pub config: LearnerConfig,
    pub protocol: Protocol,
    pub seed: u64,
    pub repeats: usize,
    pub accuracy: Summary,
    pub precision: [Summary; 2],
    pub recall: [Summary; 2],
    pub f1: [Summary; 2],
    /// Number of repeats where some metric had a zero denominator.
    pub zero_denominator_repeats: usize,
    pub per_repeat: Vec<RepeatResult>,
}

/// Trains and scores every plan; plans run in parallel with results in plan order.
pub fn evaluate_plans(
    matrix: &FeatureMatrix,
    config: &LearnerConfig,
    plans: &[PartitionPlan],
) -> Result<Vec<RepeatResult>> {
    config.validate()?;
    plans
        .par_iter()
        .enumerate()
        .map(|(index, plan)| {
            let run = || -> Result<RepeatResult> {
                let train_m = matrix.select(&plan.train);
                let test_m = matrix.select(&plan.test);
                let model = train(&train_m, config, plan.train_seed)?;
                let predicted = model.predict_matrix(&test_m)?;
                let confusion = ConfusionMatrix::from_predictions(test_m.labels(), &predicted)?;
                Ok(RepeatResult {
                    index,
                    confusion,
                    metrics: compute_metrics(&confusion)?,
                    train_rows: plan.train.len(),
                    test_rows: plan.test.len(),
                    leaked_rows: plan.leaked_rows(matrix.n_rows()),
                })
            };
            run().map_err(|e| Error::Repeat {
                index,
                source: Box::new(e),
            })
        })
        .collect()
}

fn aggregate(
    results: Vec<RepeatResult>,
    config: &LearnerConfig,
    protocol: Protocol,
    seed: u64,
) -> EvalReport {
    let pick = |f: &dyn Fn(&Metrics) -> f64| {
        summarize(&results.iter().map(|r| f(&r.metrics)).collect::<Vec<_>>())
    };
    let per_class =
        |f: fn(&ClassMetrics) -> f64| [pick(&|m| f(&m.classes[0])), pick(&|m| f(&m.classes[1]))];
    EvalReport {
        course_id: None,
        learner: config.kind(),
        config: *config,
        protocol,
        seed,
        repeats: results.len(),
        accuracy: pick(&|m| m.accuracy),
        precision: per_class(|c| c.precision),
        recall: per_class(|c| c.recall),
        f1: per_class(|c| c.f1),
        zero_denominator_repeats: results
            .iter()
            .filter(|r| r.metrics.zero_denominator)
            .count(),
        per_repeat: results,
    }
}

/// Repeated stratified hold-out with training-side oversampling.
pub fn repeated_holdout(
    matrix: &FeatureMatrix,
    config: &LearnerConfig,
    repeats: usize,
    test_fraction: f64,
    seed: u64,
) -> Result<EvalReport> {
    let plans = holdout_plans(matrix.labels(), test_fraction, repeats, seed)?;
    let results = evaluate_plans(matrix, config, &plans)?;
    Ok(aggregate(results, config, Protocol::Holdout, seed))
}

/// Stratified k-fold cross-validation with training-side oversampling.
pub fn cross_validate(
    matrix: &FeatureMatrix,
    config: &LearnerConfig,
    k: usize,
    seed: u64,
) -> Result<EvalReport> {
    let plans = cv_plans(matrix.labels(), k, seed)?;
    let results = evaluate_plans(matrix, config, &plans)?;
    Ok(aggregate(results, config, Protocol::CrossValidation, seed))
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Per-class results table, one row per report, values in percent.
pub fn format_table(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    let heads = [
        "Accuracy",
        "Precision 0",
        "Precision 1",
        "Recall 0",
        "Recall 1",
        "F1 0",
        "F1 1",
    ];
    let _ = write!(out, "{:<22}", "Learner");
    for h in heads {
        let _ = write!(out, " {h:>12} {:>6}", "±");
    }
    out.push('\n');
    for r in reports {
        let cells = [
            r.accuracy,
            r.precision[0],
            r.precision[1],
            r.recall[0],
            r.recall[1],
            r.f1[0],
            r.f1[1],
        ];
        let _ = write!(out, "{:<22}", r.learner.display_name());
        for s in cells {
            let _ = write!(out, " {:>12.2} {:>6.2}", 100.0 * s.mean, 100.0 * s.margin);
        }
        out.push('\n');
    }
    out
}
