//! Brute-force reference implementations shared by the integration tests.
//!
//! Nothing here calls into the library's split search or rank-sum code; the
//! oracles recompute everything from the raw definitions.
#![allow(dead_code)]

use rand::Rng;

/// Small random dataset: `n` rows by `d` features on a coarse grid, so that
/// repeated values and exact ties between candidate splits are common.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub n_features: usize,
    pub x: Vec<f64>,
    pub classes: Vec<u8>,
    pub values: Vec<f64>,
}

impl Fixture {
    pub fn n_rows(&self) -> usize {
        self.classes.len()
    }

    pub fn class_targets(&self) -> Vec<f64> {
        self.classes.iter().map(|&c| f64::from(c)).collect()
    }
}

pub fn random_fixture(rng: &mut impl Rng, max_rows: usize, max_features: usize) -> Fixture {
    let n = rng.random_range(2..=max_rows);
    let d = rng.random_range(1..=max_features);
    let levels = rng.random_range(2..=6u32);
    let x = (0..n * d)
        .map(|_| f64::from(rng.random_range(0..levels)) * 0.5)
        .collect();
    let classes = (0..n).map(|_| rng.random_range(0..=1u8)).collect();
    let values = (0..n)
        .map(|_| f64::from(rng.random_range(0..5u32)))
        .collect();
    Fixture {
        n_features: d,
        x,
        classes,
        values,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Impurity {
    Gini,
    Variance,
}

fn impurity(kind: Impurity, ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    match kind {
        Impurity::Gini => {
            let p1 = ys.iter().sum::<f64>() / n;
            1.0 - p1 * p1 - (1.0 - p1) * (1.0 - p1)
        }
        Impurity::Variance => {
            let mean = ys.iter().sum::<f64>() / n;
            ys.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleSplit {
    pub feature: usize,
    pub threshold: f64,
    pub decrease: f64,
}

/// Every admissible `(feature, midpoint)` split with its weighted impurity
/// decrease, in feature-then-threshold order.
pub fn enumerate_splits(
    x: &[f64],
    d: usize,
    ys: &[f64],
    kind: Impurity,
    min_leaf: usize,
) -> Vec<OracleSplit> {
    let n = ys.len();
    let parent = impurity(kind, ys);
    let mut out = Vec::new();
    for f in 0..d {
        let mut distinct: Vec<f64> = (0..n).map(|i| x[i * d + f]).collect();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        for pair in distinct.windows(2) {
            let threshold = (pair[0] + pair[1]) / 2.0;
            let (mut left, mut right) = (Vec::new(), Vec::new());
            for i in 0..n {
                if x[i * d + f] <= threshold {
                    left.push(ys[i]);
                } else {
                    right.push(ys[i]);
                }
            }
            if left.len() < min_leaf || right.len() < min_leaf {
                continue;
            }
            let decrease = parent
                - left.len() as f64 / n as f64 * impurity(kind, &left)
                - right.len() as f64 / n as f64 * impurity(kind, &right);
            out.push(OracleSplit {
                feature: f,
                threshold,
                decrease,
            });
        }
    }
    out
}

/// Argmax of [`enumerate_splits`]; decreases within 1e-9 of the maximum count
/// as ties and go to the first candidate. `None` when nothing decreases
/// impurity.
pub fn best_by_enumeration(
    x: &[f64],
    d: usize,
    ys: &[f64],
    kind: Impurity,
    min_leaf: usize,
) -> Option<OracleSplit> {
    let all = enumerate_splits(x, d, ys, kind, min_leaf);
    let max = all
        .iter()
        .map(|s| s.decrease)
        .fold(f64::NEG_INFINITY, f64::max);
    if max <= 1e-12 {
        return None;
    }
    all.into_iter().find(|s| s.decrease >= max - 1e-9)
}

/// Two-sided exact rank-sum p for tie-free samples, by listing every way of
/// choosing which ranks belong to the first sample.
pub fn rank_sum_p_by_enumeration(a: &[f64], b: &[f64]) -> f64 {
    let m = a.len();
    let big_n = m + b.len();
    assert!(big_n <= 24);
    let mut pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    pooled.sort_by(f64::total_cmp);
    let rank_of = |v: f64| pooled.iter().position(|&p| p == v).unwrap() + 1;
    let observed: usize = a.iter().map(|&v| rank_of(v)).sum();

    let (mut total, mut le, mut ge) = (0u64, 0u64, 0u64);
    for mask in 0u32..(1 << big_n) {
        if mask.count_ones() as usize != m {
            continue;
        }
        let w: usize = (0..big_n)
            .filter(|i| mask >> i & 1 == 1)
            .map(|i| i + 1)
            .sum();
        total += 1;
        if w <= observed {
            le += 1;
        }
        if w >= observed {
            ge += 1;
        }
    }
    (2 * le.min(ge)).min(total) as f64 / total as f64
}

/// Standard normal CDF by Simpson integration of the density.
pub fn normal_cdf(z: f64) -> f64 {
    if z < 0.0 {
        return 1.0 - normal_cdf(-z);
    }
    let steps = 20_000;
    let h = z / steps as f64;
    let pdf = |t: f64| (-t * t / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut acc = pdf(0.0) + pdf(z);
    for i in 1..steps {
        let t = i as f64 * h;
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * pdf(t);
    }
    0.5 + acc * h / 3.0
}
