//! CART binary decision trees.
//!
//! One split-search engine serves every learner in the crate. What changes is
//! the [`Criterion`]: weighted Gini for classification, squared error for
//! regression, squared error with Newton leaf steps for gradient boosting, and
//! the regularised second-order gain for second-order boosting.
//!
//! Thresholds are midpoints between adjacent distinct values and rows go left
//! when `value <= threshold`. Equal gains are resolved in favour of the lowest
//! feature index, then the lowest threshold.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Smallest impurity decrease that counts as an improvement for CART criteria.
const MIN_DECREASE: f64 = 1e-12;

/// Row-major feature values.
#[derive(Debug, Clone, Copy)]
pub struct Rows<'a> {
    values: &'a [f64],
    n_features: usize,
}

impl<'a> Rows<'a> {
    pub fn new(values: &'a [f64], n_features: usize) -> Result<Self> {
        if n_features == 0 {
            return Err(Error::Dimension {
                expected: 1,
                got: 0,
            });
        }
        if !values.len().is_multiple_of(n_features) {
            return Err(Error::Dimension {
                expected: values.len().next_multiple_of(n_features),
                got: values.len(),
            });
        }
        Ok(Rows { values, n_features })
    }

    pub fn n_rows(&self) -> usize {
        self.values.len() / self.n_features
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn row(&self, i: usize) -> &'a [f64] {
        &self.values[i * self.n_features..(i + 1) * self.n_features]
    }

    #[inline]
    pub fn value(&self, row: usize, feature: usize) -> f64 {
        self.values[row * self.n_features + feature]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeKind {
    Classification,
    Regression,
    /// Regression on gradient statistics; leaves hold `-G / (H + λ)`.
    SecondOrder,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Features drawn per node; `None` means all of them.
    pub mtry: Option<usize>,
}

impl TreeParams {
    pub fn classification() -> Self {
        TreeParams {
            max_depth: 12,
            min_samples_leaf: 5,
            mtry: None,
        }
    }

    pub fn regression() -> Self {
        TreeParams {
            max_depth: 3,
            min_samples_leaf: 5,
            mtry: None,
        }
    }
}

/// Training targets for the plain CART entry points.
#[derive(Debug, Clone, Copy)]
pub enum Targets<'a> {
    Classes(&'a [u8]),
    Values(&'a [f64]),
}

impl Targets<'_> {
    fn len(&self) -> usize {
        match self {
            Targets::Classes(c) => c.len(),
            Targets::Values(v) => v.len(),
        }
    }

    fn criterion(&self) -> Criterion<'_> {
        match *self {
            Targets::Classes(labels) => Criterion::Gini {
                labels,
                weights: None,
            },
            Targets::Values(targets) => Criterion::SquaredError { targets },
        }
    }
}

/// Split objective and leaf payload. Per-sample arrays are indexed by row.
#[derive(Debug, Clone, Copy)]
pub enum Criterion<'a> {
    Gini {
        labels: &'a [u8],
        weights: Option<&'a [f64]>,
    },
    SquaredError {
        targets: &'a [f64],
    },
    /// Squared-error splits on residuals; leaves take `Σr / Σh`.
    Newton {
        residuals: &'a [f64],
        hessians: &'a [f64],
    },
    SecondOrder {
        gradients: &'a [f64],
        hessians: &'a [f64],
        lambda: f64,
        gamma: f64,
    },
}

impl Criterion<'_> {
    fn kind(&self) -> TreeKind {
        match self {
            Criterion::Gini { .. } => TreeKind::Classification,
            Criterion::SquaredError { .. } | Criterion::Newton { .. } => TreeKind::Regression,
            Criterion::SecondOrder { .. } => TreeKind::SecondOrder,
        }
    }

    fn check_aligned(&self, n_rows: usize) -> Result<()> {
        let lens: Vec<usize> = match self {
            Criterion::Gini { labels, weights } => {
                let mut l = vec![labels.len()];
                l.extend(weights.map(<[f64]>::len));
                l
            }
            Criterion::SquaredError { targets } => vec![targets.len()],
            Criterion::Newton {
                residuals,
                hessians,
            } => vec![residuals.len(), hessians.len()],
            Criterion::SecondOrder {
                gradients,
                hessians,
                ..
            } => vec![gradients.len(), hessians.len()],
        };
        match lens.into_iter().find(|&l| l != n_rows) {
            Some(got) => Err(Error::Dimension {
                expected: n_rows,
                got,
            }),
            None => Ok(()),
        }
    }

    #[inline]
    fn sample(&self, row: usize) -> Acc {
        match self {
            Criterion::Gini { labels, weights } => {
                let w = weights.map_or(1.0, |w| w[row]);
                Acc {
                    n: 1,
                    w,
                    s1: if labels[row] == 1 { w } else { 0.0 },
                    s2: 0.0,
                }
            }
            Criterion::SquaredError { targets } => Acc {
                n: 1,
                w: 1.0,
                s1: targets[row],
                s2: 0.0,
            },
            Criterion::Newton {
                residuals,
                hessians,
            } => Acc {
                n: 1,
                w: 1.0,
                s1: residuals[row],
                s2: hessians[row],
            },
            Criterion::SecondOrder {
                gradients,
                hessians,
                ..
            } => Acc {
                n: 1,
                w: 1.0,
                s1: gradients[row],
                s2: hessians[row],
            },
        }
    }

    /// Node-local impurity decrease (CART) or regularised gain (second order).
    #[inline]
    fn gain(&self, parent: &Acc, left: &Acc, right: &Acc) -> f64 {
        match self {
            Criterion::Gini { .. } => {
                let imp = |a: &Acc| weighted_gini(a.w, a.s1);
                imp(parent) - (left.w / parent.w) * imp(left) - (right.w / parent.w) * imp(right)
            }
            Criterion::SquaredError { .. } | Criterion::Newton { .. } => {
                let score = |a: &Acc| a.s1 * a.s1 / a.n as f64;
                (score(left) + score(right) - score(parent)) / parent.n as f64
            }
            Criterion::SecondOrder { lambda, gamma, .. } => {
                let score = |a: &Acc| {
                    let denom = a.s2 + lambda;
                    if denom > 0.0 {
                        a.s1 * a.s1 / denom
                    } else {
                        0.0
                    }
                };
                0.5 * (score(left) + score(right) - score(parent)) - gamma
            }
        }
    }

    fn accepts(&self, gain: f64) -> bool {
        match self {
            Criterion::SecondOrder { .. } => gain > 0.0,
            _ => gain > MIN_DECREASE,
        }
    }

    fn is_pure(&self, node: &Acc) -> bool {
        match self {
            Criterion::Gini { .. } => node.s1 <= 0.0 || node.s1 >= node.w,
            _ => false,
        }
    }

    fn leaf(&self, node: &Acc) -> LeafValue {
        match self {
            Criterion::Gini { .. } => {
                let p1 = if node.w > 0.0 {
                    (node.s1 / node.w).clamp(0.0, 1.0)
                } else {
                    0.5
                };
                LeafValue::Proba([1.0 - p1, p1])
            }
            Criterion::SquaredError { .. } => LeafValue::Value(node.s1 / node.n as f64),
            Criterion::Newton { .. } => LeafValue::Value(newton_step(node.s1, node.s2)),
            Criterion::SecondOrder { lambda, .. } => {
                LeafValue::Value(second_order_leaf_weight(node.s1, node.s2, *lambda))
            }
        }
    }

    /// Sample mass used for the importance fraction of a node.
    fn mass(&self, node: &Acc) -> f64 {
        match self {
            Criterion::Gini { .. } => node.w,
            _ => node.n as f64,
        }
    }
}

/// Newton leaf step `Σr / Σh` for binomial deviance; 0 on a vanishing hessian.
pub fn newton_step(sum_residual: f64, sum_hessian: f64) -> f64 {
    if sum_hessian.abs() < 1e-150 {
        0.0
    } else {
        sum_residual / sum_hessian
    }
}

/// Second-order leaf weight `-G / (H + λ)`; 0 when the denominator vanishes.
pub fn second_order_leaf_weight(sum_gradient: f64, sum_hessian: f64, lambda: f64) -> f64 {
    let denom = sum_hessian + lambda;
    if denom.abs() < 1e-150 {
        0.0
    } else {
        -sum_gradient / denom
    }
}

/// Running sufficient statistics of a node.
///
/// `w` is the sample weight; `s1`/`s2` hold class-1 weight (Gini), target sum
/// (squared error) or gradient and hessian sums (Newton, second order).
#[derive(Debug, Clone, Copy, Default)]
struct Acc {
    n: usize,
    w: f64,
    s1: f64,
    s2: f64,
}

impl Acc {
    #[inline]
    fn add(&mut self, o: &Acc) {
        self.n += o.n;
        self.w += o.w;
        self.s1 += o.s1;
        self.s2 += o.s2;
    }

    #[inline]
    fn minus(&self, o: &Acc) -> Acc {
        Acc {
            n: self.n - o.n,
            w: self.w - o.w,
            s1: self.s1 - o.s1,
            s2: self.s2 - o.s2,
        }
    }
}

fn weighted_gini(total: f64, class1: f64) -> f64 {
    if total <= 0.0 {
        return 0.0;
    }
    let p1 = class1 / total;
    2.0 * p1 * (1.0 - p1)
}

/// Gini impurity `1 - Σ p_c²` of a two-class node.
pub fn gini_impurity(class_counts: [f64; 2]) -> Result<f64> {
    let [a, b] = class_counts;
    if !(a >= 0.0 && b >= 0.0) || !(a + b).is_finite() {
        return Err(Error::Domain(format!(
            "class counts must be finite and non-negative, got {class_counts:?}"
        )));
    }
    let n = a + b;
    if n == 0.0 {
        return Err(Error::Domain("Gini impurity of an empty node".into()));
    }
    // equals 1 - p0² - p1² for two classes, and is exactly symmetric
    Ok(2.0 * (a / n) * (b / n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
    pub impurity_decrease: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeafValue {
    /// `[p(class 0), p(class 1)]`.
    Proba([f64; 2]),
    Value(f64),
}

impl LeafValue {
    pub fn proba(&self) -> [f64; 2] {
        match *self {
            LeafValue::Proba(p) => p,
            LeafValue::Value(v) => [1.0 - v, v],
        }
    }

    pub fn value(&self) -> f64 {
        match *self {
            LeafValue::Proba(p) => p[1],
            LeafValue::Value(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        /// Node-local impurity decrease, or split gain for second-order trees.
        impurity_decrease: f64,
        samples: usize,
        /// Sample weight reaching the node.
        weight: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        value: LeafValue,
        samples: usize,
    },
}

impl TreeNode {
    fn leaf_count(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.leaf_count() + right.leaf_count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub root: TreeNode,
    pub kind: TreeKind,
    pub feature_count: usize,
    pub params: TreeParams,
}

impl DecisionTree {
    /// Leaf payload for a row of the right width.
    pub fn predict(&self, row: &[f64]) -> Result<LeafValue> {
        if row.len() != self.feature_count {
            return Err(Error::Dimension {
                expected: self.feature_count,
                got: row.len(),
            });
        }
        Ok(*self.leaf(row))
    }

    /// Routing without the width check; callers guarantee `row.len()`.
    pub(crate) fn leaf(&self, row: &[f64]) -> &LeafValue {
        let mut node = &self.root;
        loop {
            match node {
                TreeNode::Leaf { value, .. } => return value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    node = if row[*feature] <= *threshold {
                        left
                    } else {
                        right
                    };
                }
            }
        }
    }

    /// Index of the leaf a row lands in, counting leaves left to right.
    pub fn apply(&self, row: &[f64]) -> usize {
        let mut node = &self.root;
        let mut offset = 0;
        loop {
            match node {
                TreeNode::Leaf { .. } => return offset,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    if row[*feature] <= *threshold {
                        node = left;
                    } else {
                        offset += left.leaf_count();
                        node = right;
                    }
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(n: &TreeNode) -> usize {
            match n {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + go(left).max(go(right)),
            }
        }
        go(&self.root)
    }

    pub fn n_leaves(&self) -> usize {
        self.root.leaf_count()
    }

    /// Impurity-decrease importance, normalised to sum to 1 (all zeros for a
    /// single leaf). Second-order trees use their total split gain.
    pub fn feature_importance(&self) -> Vec<f64> {
        let mut raw = vec![0.0; self.feature_count];
        let root_weight = match &self.root {
            TreeNode::Split { weight, .. } => *weight,
            TreeNode::Leaf { .. } => return raw,
        };
        let mut stack = vec![&self.root];
        while let Some(node) = stack.pop() {
            if let TreeNode::Split {
                feature,
                impurity_decrease,
                weight,
                left,
                right,
                ..
            } = node
            {
                raw[*feature] += match self.kind {
                    TreeKind::SecondOrder => *impurity_decrease,
                    _ => weight / root_weight * impurity_decrease,
                };
                stack.push(left);
                stack.push(right);
            }
        }
        normalize(&mut raw);
        raw
    }
}

/// Scales a non-negative vector to sum 1; leaves it untouched when the sum is 0.
pub(crate) fn normalize(v: &mut [f64]) {
    let total: f64 = v.iter().sum();
    if total > 0.0 {
        v.iter_mut().for_each(|x| *x /= total);
    }
}

/// Per-feature orderings of the training slots, reusable across trees grown
/// on the same slots (boosting rounds).
#[derive(Debug, Clone)]
pub struct Presorted {
    slots: Vec<usize>,
    /// `order[f]` lists slot positions sorted by feature `f`, ties by position.
    order: Vec<Vec<u32>>,
}

impl Presorted {
    /// `slots[i]` is the row used by training slot `i`; rows may repeat.
    pub fn new(rows: Rows<'_>, slots: Vec<usize>) -> Self {
        let order = (0..rows.n_features())
            .map(|f| {
                let mut idx: Vec<u32> = (0..slots.len() as u32).collect();
                idx.sort_by(|&a, &b| {
                    rows.value(slots[a as usize], f)
                        .total_cmp(&rows.value(slots[b as usize], f))
                });
                idx
            })
            .collect();
        Presorted { slots, order }
    }

    pub fn all_rows(rows: Rows<'_>) -> Self {
        Self::new(rows, (0..rows.n_rows()).collect())
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }
}

struct Builder<'a> {
    rows: Rows<'a>,
    criterion: Criterion<'a>,
    params: TreeParams,
    slots: &'a [usize],
    slot_stats: Vec<Acc>,
    rng: rand_chacha::ChaCha8Rng,
}

struct Best {
    feature: usize,
    position: usize,
    threshold: f64,
    gain: f64,
}

impl Builder<'_> {
    fn totals(&self, order: &[u32]) -> Acc {
        let mut acc = Acc::default();
        for &s in order {
            acc.add(&self.slot_stats[s as usize]);
        }
        acc
    }

    fn candidate_features(&mut self) -> Vec<usize> {
        let d = self.rows.n_features();
        match self.params.mtry {
            Some(m) if m < d => {
                let mut picked = sample(&mut self.rng, d, m.max(1)).into_vec();
                picked.sort_unstable();
                picked
            }
            _ => (0..d).collect(),
        }
    }

    fn find_split(&self, orders: &[Vec<u32>], features: &[usize], parent: &Acc) -> Option<Best> {
        let min_leaf = self.params.min_samples_leaf.max(1);
        let n = parent.n;
        if n < 2 * min_leaf {
            return None;
        }
        let mut best: Option<Best> = None;
        for &f in features {
            let order = &orders[f];
            let mut left = Acc::default();
            for pos in 0..n - 1 {
                let slot = order[pos] as usize;
                left.add(&self.slot_stats[slot]);
                let here = self.rows.value(self.slots[slot], f);
                let next = self.rows.value(self.slots[order[pos + 1] as usize], f);
                if next <= here {
                    continue;
                }
                let n_left = pos + 1;
                if n_left < min_leaf {
                    continue;
                }
                if n - n_left < min_leaf {
                    break;
                }
                let right = parent.minus(&left);
                let gain = self.criterion.gain(parent, &left, &right);
                let better = match &best {
                    None => true,
                    Some(b) => gain > b.gain + 1e-12 * b.gain.abs().max(1.0),
                };
                if better {
                    best = Some(Best {
                        feature: f,
                        position: pos,
                        threshold: midpoint(here, next),
                        gain,
                    });
                }
            }
        }
        best.filter(|b| self.criterion.accepts(b.gain))
    }

    fn grow(&mut self, orders: Vec<Vec<u32>>, depth: usize) -> TreeNode {
        let node = self.totals(&orders[0]);
        let criterion = self.criterion;
        let leaf = || TreeNode::Leaf {
            value: criterion.leaf(&node),
            samples: node.n,
        };
        if depth >= self.params.max_depth || self.criterion.is_pure(&node) {
            return leaf();
        }
        let features = self.candidate_features();
        let Some(best) = self.find_split(&orders, &features, &node) else {
            return leaf();
        };

        let mut goes_left = vec![false; self.slots.len()];
        for &s in &orders[best.feature][..=best.position] {
            goes_left[s as usize] = true;
        }
        let (left_orders, right_orders): (Vec<Vec<u32>>, Vec<Vec<u32>>) = orders
            .into_iter()
            .map(|order| order.into_iter().partition(|&s| goes_left[s as usize]))
            .unzip();
        let left = self.grow(left_orders, depth + 1);
        let right = self.grow(right_orders, depth + 1);
        TreeNode::Split {
            feature: best.feature,
            threshold: best.threshold,
            impurity_decrease: best.gain,
            samples: node.n,
            weight: self.criterion.mass(&node),
            left: Box::new(left),
            right: Box::new(right),
        }
    }
}

/// Midpoint of two adjacent distinct values, kept strictly below `hi` so that
/// `lo` routes left and `hi` routes right.
fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid < hi {
        mid
    } else {
        lo
    }
}

/// Grows a tree on presorted training slots under any criterion.
///
/// `seed` drives per-node feature sampling when `params.mtry` is set; it is
/// not consumed otherwise.
pub fn grow_with(
    rows: Rows<'_>,
    criterion: Criterion<'_>,
    presorted: &Presorted,
    params: &TreeParams,
    seed: u64,
) -> Result<DecisionTree> {
    criterion.check_aligned(rows.n_rows())?;
    if presorted.is_empty() {
        return Err(Error::Training("cannot grow a tree on zero samples".into()));
    }
    if presorted.order.len() != rows.n_features() {
        return Err(Error::Dimension {
            expected: rows.n_features(),
            got: presorted.order.len(),
        });
    }
    let slot_stats = presorted
        .slots
        .iter()
        .map(|&r| criterion.sample(r))
        .collect();
    let mut builder = Builder {
        rows,
        criterion,
        params: *params,
        slots: &presorted.slots,
        slot_stats,
        rng: seed::rng(seed),
    };
    let root = builder.grow(presorted.order.clone(), 0);
    Ok(DecisionTree {
        root,
        kind: criterion.kind(),
        feature_count: rows.n_features(),
        params: *params,
    })
}

/// Grows a CART tree on all rows: Gini for class targets, squared error for
/// real targets.
pub fn grow_tree(
    rows: Rows<'_>,
    targets: Targets<'_>,
    params: &TreeParams,
    seed: u64,
) -> Result<DecisionTree> {
    if targets.len() != rows.n_rows() {
        return Err(Error::Dimension {
            expected: rows.n_rows(),
            got: targets.len(),
        });
    }
    if rows.n_rows() == 0 {
        return Err(Error::Training("cannot grow a tree on zero rows".into()));
    }
    let presorted = Presorted::all_rows(rows);
    grow_with(rows, targets.criterion(), &presorted, params, seed)
}

/// Best single split over all rows and features, or `None` when no split
/// decreases impurity while keeping `min_samples_leaf` on each side.
pub fn best_split(
    rows: Rows<'_>,
    targets: Targets<'_>,
    min_samples_leaf: usize,
) -> Option<SplitCandidate> {
    if rows.n_rows() < 2 || targets.len() != rows.n_rows() {
        return None;
    }
    let params = TreeParams {
        max_depth: 1,
        min_samples_leaf,
        mtry: None,
    };
    match grow_tree(rows, targets, &params, 0).ok()?.root {
        TreeNode::Split {
            feature,
            threshold,
            impurity_decrease,
            ..
        } => Some(SplitCandidate {
            feature,
            threshold,
            impurity_decrease,
        }),
        TreeNode::Leaf { .. } => None,
    }
}
