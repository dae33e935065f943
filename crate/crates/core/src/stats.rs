//! Shapiro-Wilk normality test, Wilcoxon rank-sum test and the
//! completer/non-completer median comparison on first-step time.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::cohort::{derive_time_spent, CourseSpec, LabeledLearner, StepId};
use crate::error::{Error, Result};
use crate::seed;

/// Largest sample Shapiro-Wilk is evaluated on; bigger samples are subsampled.
pub const SHAPIRO_MAX_N: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Group {
    Completer,
    NonCompleter,
}

impl Group {
    pub fn name(self) -> &'static str {
        match self {
            Group::Completer => "completer",
            Group::NonCompleter => "non-completer",
        }
    }
}

/// Values of one group; nonempty and finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSample {
    pub group: Group,
    values: Vec<f64>,
}

impl GroupSample {
    pub fn new(group: Group, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Sample(format!("{} group is empty", group.name())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "{} group has non-finite values",
                group.name()
            )));
        }
        Ok(GroupSample { group, values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Ascending-power polynomial `c[0] + c[1] x + ...`.
fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapiroWilk {
    pub w: f64,
    pub p: f64,
    /// Sample size the statistic was computed on.
    pub n: usize,
    /// Seed of the 5000-row subsample, when one was drawn.
    pub subsample_seed: Option<u64>,
}

/// Shapiro-Wilk W and p-value with Royston's approximations.
///
/// Samples larger than [`SHAPIRO_MAX_N`] are reduced to a subsample drawn
/// without replacement from `seed`.
pub fn shapiro_wilk(values: &[f64], seed: u64) -> Result<ShapiroWilk> {
    if values.len() < 3 {
        return Err(Error::Sample(format!(
            "Shapiro-Wilk needs at least 3 values, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain(
            "Shapiro-Wilk input has non-finite values".into(),
        ));
    }
    let (x, subsample_seed) = if values.len() > SHAPIRO_MAX_N {
        let mut rng = seed::rng(seed);
        let picked = rand::seq::index::sample(&mut rng, values.len(), SHAPIRO_MAX_N);
        (
            sorted(&picked.iter().map(|i| values[i]).collect::<Vec<_>>()),
            Some(seed),
        )
    } else {
        (sorted(values), None)
    };
    let (w, p) = swilk_sorted(&x)?;
    Ok(ShapiroWilk {
        w,
        p,
        n: x.len(),
        subsample_seed,
    })
}

/// Half of the antisymmetric coefficient vector, largest first.
fn swilk_coefficients(n: usize) -> Vec<f64> {
    const C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056];
    const C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];
    if n == 3 {
        return vec![std::f64::consts::FRAC_1_SQRT_2];
    }
    let half = n / 2;
    let norm = std_normal();
    let an = n as f64;
    let m: Vec<f64> = (1..=half)
        .map(|i| norm.inverse_cdf((i as f64 - 0.375) / (an + 0.25)))
        .collect();
    let summ2 = 2.0 * m.iter().map(|v| v * v).sum::<f64>();
    let ssumm2 = summ2.sqrt();
    let rsn = 1.0 / an.sqrt();
    let a1 = poly(&C1, rsn) - m[0] / ssumm2;
    let mut a = vec![0.0; half];
    a[0] = a1;
    let (first_free, fac) = if n > 5 {
        let a2 = -m[1] / ssumm2 + poly(&C2, rsn);
        a[1] = a2;
        let num = summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1];
        let den = 1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2;
        (2, (num / den).sqrt())
    } else {
        let num = summ2 - 2.0 * m[0] * m[0];
        let den = 1.0 - 2.0 * a1 * a1;
        (1, (num / den).sqrt())
    };
    for i in first_free..half {
        a[i] = -m[i] / fac;
    }
    a
}

fn swilk_sorted(x: &[f64]) -> Result<(f64, f64)> {
    const C3: [f64; 4] = [0.5440, -0.39978, 0.025054, -6.714e-4];
    const C4: [f64; 4] = [1.3822, -0.77857, 0.062767, -0.0020322];
    const C5: [f64; 4] = [-1.5861, -0.31082, -0.083751, 0.0038915];
    const C6: [f64; 3] = [-0.4803, -0.082676, 0.0030302];
    const G: [f64; 2] = [-2.273, 0.459];
    const SMALL: f64 = 1e-19;

    let n = x.len();
    let range = x[n - 1] - x[0];
    if range < SMALL || range <= f64::EPSILON * x[0].abs().max(x[n - 1].abs()) {
        return Err(Error::Domain("Shapiro-Wilk sample is constant".into()));
    }
    let half = swilk_coefficients(n);
    let coef: Vec<f64> = (0..n)
        .map(|i| {
            let j = n - 1 - i;
            match i.cmp(&j) {
                std::cmp::Ordering::Less => -half[i],
                std::cmp::Ordering::Greater => half[j],
                std::cmp::Ordering::Equal => 0.0,
            }
        })
        .collect();

    // W is the squared correlation of the data with the coefficients; the
    // form below keeps 1 - W accurate when W is close to 1.
    let nf = n as f64;
    let sa = coef.iter().sum::<f64>() / nf;
    let sx = x.iter().map(|v| v / range).sum::<f64>() / nf;
    let (mut ssa, mut ssx, mut sax) = (0.0, 0.0, 0.0);
    for (a, v) in coef.iter().zip(x) {
        let da = a - sa;
        let dx = v / range - sx;
        ssa += da * da;
        ssx += dx * dx;
        sax += da * dx;
    }
    let root = (ssa * ssx).sqrt();
    let w1 = (root - sax) * (root + sax) / (ssa * ssx);
    let w = 1.0 - w1;

    let norm = std_normal();
    let p = if n == 3 {
        (1.0 - 6.0 / std::f64::consts::PI * w.sqrt().acos()).max(0.0)
    } else if n <= 11 {
        let y = w1.ln();
        let gamma = poly(&G, nf);
        if y >= gamma {
            SMALL
        } else {
            let y = -(gamma - y).ln();
            let m = poly(&C3, nf);
            let s = poly(&C4, nf).exp();
            norm.sf((y - m) / s)
        }
    } else {
        let y = w1.ln();
        let ln_n = nf.ln();
        let m = poly(&C5, ln_n);
        let s = poly(&C6, ln_n).exp();
        norm.sf((y - m) / s)
    };
    Ok((w, p.clamp(0.0, 1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WilcoxonMethod {
    Exact,
    NormalApprox,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonRankSum {
    /// Mann-Whitney U of the first sample.
    pub statistic: f64,
    pub p: f64,
    pub method: WilcoxonMethod,
    pub n_a: usize,
    pub n_b: usize,
    /// Continuity-corrected z, for the normal approximation.
    pub z: Option<f64>,
}

/// Largest combined size evaluated with the exact null distribution.
pub const WILCOXON_EXACT_MAX_N: usize = 20;

/// Mid-ranks (1-based) of `values` and the tie-group sizes.
pub fn mid_ranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        if end - start > 1 {
            ties.push(end - start);
        }
        start = end;
    }
    (ranks, ties)
}

/// Null distribution of U for sample sizes `(m, n)` as integer counts over
/// all `C(m+n, m)` rank assignments; index is the U value.
pub fn rank_sum_null_counts(m: usize, n: usize) -> Vec<u128> {
    // counts[j][u]: ways for a sample of i from the first group and j from the second
    let max_u = m * n;
    let mut prev: Vec<Vec<u128>> = (0..=n)
        .map(|_| {
            let mut v = vec![0u128; max_u + 1];
            v[0] = 1;
            v
        })
        .collect();
    for i in 1..=m {
        let mut cur: Vec<Vec<u128>> = vec![vec![0u128; max_u + 1]; n + 1];
        cur[0][0] = 1;
        for j in 1..=n {
            for u in 0..=i * j {
                // the largest value belongs to the first group (adds j to U) or the second
                let from_first = if u >= j { prev[j][u - j] } else { 0 };
                cur[j][u] = from_first + cur[j - 1][u];
            }
        }
        prev = cur;
    }
    prev.swap_remove(n)
}

/// Two-sided Wilcoxon rank-sum (Mann-Whitney) test of `a` against `b`.
pub fn wilcoxon_rank_sum(a: &[f64], b: &[f64]) -> Result<WilcoxonRankSum> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Sample(
            "rank-sum test needs two nonempty samples".into(),
        ));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Domain("rank-sum input has non-finite values".into()));
    }
    let (n_a, n_b) = (a.len(), b.len());
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = mid_ranks(&pooled);
    let rank_sum_a: f64 = ranks[..n_a].iter().sum();
    let u = rank_sum_a - (n_a * (n_a + 1)) as f64 / 2.0;

    if n_a + n_b <= WILCOXON_EXACT_MAX_N && ties.is_empty() {
        let counts = rank_sum_null_counts(n_a, n_b);
        // tie-free U is an integer
        let u_obs = u.round() as usize;
        let total: u128 = counts.iter().sum();
        let lower: u128 = counts[..=u_obs].iter().sum();
        let upper: u128 = counts[u_obs..].iter().sum();
        let p = ((2 * lower.min(upper)).min(total)) as f64 / total as f64;
        return Ok(WilcoxonRankSum {
            statistic: u,
            p,
            method: WilcoxonMethod::Exact,
            n_a,
            n_b,
            z: None,
        });
    }

    let (p, z) = rank_sum_normal_p(u, n_a, n_b, &ties);
    Ok(WilcoxonRankSum {
        statistic: u,
        p,
        method: WilcoxonMethod::NormalApprox,
        n_a,
        n_b,
        z: Some(z),
    })
}

/// Tie- and continuity-corrected normal approximation for `U` of the first
/// sample; returns `(p, z)`. `ties` lists the sizes of tied groups.
pub fn rank_sum_normal_p(u: f64, n_a: usize, n_b: usize, ties: &[usize]) -> (f64, f64) {
    let (m, n) = (n_a as f64, n_b as f64);
    let big_n = m + n;
    let mean = m * n / 2.0;
    let tie_term: f64 =
        ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (big_n * (big_n - 1.0));
    let var = m * n / 12.0 * ((big_n + 1.0) - tie_term);
    if var <= 0.0 {
        return (1.0, 0.0);
    }
    let z = ((u - mean).abs() - 0.5) / var.sqrt();
    ((2.0 * std_normal().sf(z)).clamp(0.0, 1.0), z)
}

/// Median with the midpoint convention for even sizes.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Sample("median of an empty sample".into()));
    }
    let v = sorted(values);
    let mid = v.len() / 2;
    Ok(if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MedianRatio {
    pub median_completer: f64,
    pub median_non_completer: f64,
    /// `100 (median_completer / median_non_completer - 1)`; absent when the
    /// non-completer median is 0.
    pub ratio_percent: Option<f64>,
    pub undefined_ratio: bool,
}

pub fn median_ratio_report(
    completers: &GroupSample,
    non_completers: &GroupSample,
) -> Result<MedianRatio> {
    let mc = median(completers.values())?;
    let mn = median(non_completers.values())?;
    let ratio_percent = (mn != 0.0).then(|| 100.0 * (mc / mn - 1.0));
    Ok(MedianRatio {
        median_completer: mc,
        median_non_completer: mn,
        ratio_percent,
        undefined_ratio: ratio_percent.is_none(),
    })
}

/// Total derived time per learner on step 1.1, split into
/// `(completers, non-completers)`. Learners who never opened the step are left out.
pub fn first_step_extract(
    learners: &[LabeledLearner],
    spec: &CourseSpec,
    cap_seconds: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let first = StepId { week: 1, step: 1 };
    if !spec.contains_step(first) {
        return Err(Error::Config("course has no step 1.1".into()));
    }
    if !(cap_seconds >= 0.0 && cap_seconds.is_finite()) {
        return Err(Error::Config(format!(
            "cap must be a non-negative number of seconds, got {cap_seconds}"
        )));
    }
    let mut groups = (Vec::new(), Vec::new());
    for learner in learners {
        let durations = derive_time_spent(&learner.timeline, cap_seconds);
        let mut total = 0.0;
        let mut visited = false;
        for (visit, d) in learner.timeline.visits.iter().zip(&durations) {
            if visit.activity.step() == first {
                total += d;
                visited = true;
            }
        }
        if visited {
            if learner.label.label == 1 {
                groups.0.push(total);
            } else {
                groups.1.push(total);
            }
        }
    }
    Ok(groups)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group: Group,
    pub n: usize,
    pub median: f64,
    pub shapiro: Option<ShapiroWilk>,
    /// Why Shapiro-Wilk was not computed.
    pub shapiro_skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatReport {
    pub course_id: Option<String>,
    pub groups: [GroupSummary; 2],
    pub wilcoxon: WilcoxonRankSum,
    pub medians: MedianRatio,
}

fn group_summary(sample: &GroupSample, seed: u64) -> Result<GroupSummary> {
    let (shapiro, shapiro_skipped) = match shapiro_wilk(sample.values(), seed) {
        Ok(s) => (Some(s), None),
        Err(e @ (Error::Sample(_) | Error::Domain(_))) => (None, Some(e.to_string())),
        Err(e) => return Err(e),
    };
    Ok(GroupSummary {
        group: sample.group,
        n: sample.len(),
        median: median(sample.values())?,
        shapiro,
        shapiro_skipped,
    })
}

/// Normality per group, the rank-sum comparison and the median ratio.
pub fn stat_report(
    completers: &GroupSample,
    non_completers: &GroupSample,
    seed: u64,
) -> Result<StatReport> {
    Ok(StatReport {
        course_id: None,
        groups: [
            group_summary(completers, seed::derive(seed, 0))?,
            group_summary(non_completers, seed::derive(seed, 1))?,
        ],
        wilcoxon: wilcoxon_rank_sum(completers.values(), non_completers.values())?,
        medians: median_ratio_report(completers, non_completers)?,
    })
}

impl StatReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if let Some(id) = &self.course_id {
            let _ = writeln!(out, "course: {id}");
        }
        for g in &self.groups {
            let _ = write!(
                out,
                "{:<14} n = {:<8} median = {:.1} s",
                g.group.name(),
                g.n,
                g.median
            );
            match (&g.shapiro, &g.shapiro_skipped) {
                (Some(s), _) => {
                    let _ = write!(out, "  Shapiro-Wilk W = {:.4}, p = {:.3e}", s.w, s.p);
                    if let Some(seed) = s.subsample_seed {
                        let _ = write!(out, " (subsample of {}, seed {seed})", s.n);
                    }
                }
                (None, Some(why)) => {
                    let _ = write!(out, "  Shapiro-Wilk skipped: {why}");
                }
                (None, None) => {}
            }
            out.push('\n');
        }
        let wx = &self.wilcoxon;
        let method = match wx.method {
            WilcoxonMethod::Exact => "exact",
            WilcoxonMethod::NormalApprox => "normal approximation",
        };
        let _ = writeln!(
            out,
            "Wilcoxon rank-sum U = {}, p = {:.3e} ({method})",
            wx.statistic, wx.p
        );
        match self.medians.ratio_percent {
            Some(r) => {
                let _ = writeln!(
                    out,
                    "completers spend {r:+.1}% time relative to non-completers"
                );
            }
            None => {
                let _ = writeln!(out, "median ratio undefined: non-completer median is 0");
            }
        }
        out
    }

    /// `group,n,median_seconds` rows for plotting.
    pub fn medians_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["group", "n", "median_seconds"])?;
        for g in &self.groups {
            w.write_record([
                g.group.name().to_string(),
                g.n.to_string(),
                g.median.to_string(),
            ])?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::io("<memory>", e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, Exp, LogNormal};

    #[test]
    fn three_equally_spaced_points() {
        let s = shapiro_wilk(&[1.0, 2.0, 3.0], 0).unwrap();
        assert!((s.w - 1.0).abs() < 1e-12);
        assert!((s.p - 1.0).abs() < 1e-6);
    }

    #[test]
    fn matches_reference_values() {
        // (sample, W, p) from an established implementation of the same algorithm
        let cases: [(&[f64], f64, f64); 3] = [
            (&[2.1, 3.4, 1.9, 5.6], 0.8760318341481133, 0.321964802033592),
            (
                &[148.0, 154.0, 158.0, 160.0, 161.0, 162.0, 166.0],
                0.9521778967521586,
                0.7494749740609106,
            ),
            (
                &[0.5, 1.2, 1.9, 2.2, 2.8, 3.1, 3.3, 4.0, 4.6, 5.9, 9.7],
                0.8938563384827634,
                0.15531571941120864,
            ),
        ];
        for (x, w, p) in cases {
            let s = shapiro_wilk(x, 0).unwrap();
            assert!((s.w - w).abs() < 1e-6, "{x:?}: W {} vs {w}", s.w);
            assert!((s.p - p).abs() < 1e-5, "{x:?}: p {} vs {p}", s.p);
        }
        let x20: Vec<f64> = (0..20)
            .map(|i| f64::from(i * i % 17) + 0.1 * f64::from(i))
            .collect();
        let s = shapiro_wilk(&x20, 0).unwrap();
        assert!((s.w - 0.9074812340643622).abs() < 1e-6);
        assert!((s.p - 0.05707867295645465).abs() < 1e-5);
        let x50: Vec<f64> = (0..50)
            .map(|i| (f64::from(i % 13) / 4.0).exp() + 0.01 * f64::from(i))
            .collect();
        let s = shapiro_wilk(&x50, 0).unwrap();
        assert!((s.w - 0.8455070793134556).abs() < 1e-6);
        assert!((s.p / 1.1717830368120075e-05 - 1.0).abs() < 1e-3);
    }

    #[test]
    fn skewed_sample_is_not_normal() {
        let mut rng = seed::rng(17);
        let exp = Exp::new(1.0).unwrap();
        let x: Vec<f64> = (0..500).map(|_| exp.sample(&mut rng)).collect();
        assert!(shapiro_wilk(&x, 0).unwrap().p < 0.01);
    }

    #[test]
    fn shapiro_errors() {
        assert!(matches!(shapiro_wilk(&[4.0; 10], 0), Err(Error::Domain(_))));
        assert!(matches!(
            shapiro_wilk(&[1.0, 2.0], 0),
            Err(Error::Sample(_))
        ));
    }

    #[test]
    fn large_samples_are_subsampled_reproducibly() {
        let mut rng = seed::rng(3);
        let ln = LogNormal::new(4.0, 1.0).unwrap();
        let x: Vec<f64> = (0..7000).map(|_| ln.sample(&mut rng)).collect();
        let a = shapiro_wilk(&x, 9).unwrap();
        assert_eq!(a.n, SHAPIRO_MAX_N);
        assert_eq!(a.subsample_seed, Some(9));
        assert_eq!(a, shapiro_wilk(&x, 9).unwrap());
        assert!(a.p < 1e-6);
    }

    #[test]
    fn exact_worked_example() {
        let r = wilcoxon_rank_sum(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.method, WilcoxonMethod::Exact);
        assert!((r.p - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn identical_samples() {
        let a: Vec<f64> = (0..30).map(f64::from).collect();
        let r = wilcoxon_rank_sum(&a, &a).unwrap();
        assert_eq!(r.method, WilcoxonMethod::NormalApprox);
        assert!((r.p - 1.0).abs() < 1e-12);
        let r = wilcoxon_rank_sum(&[5.0, 5.0], &[5.0]).unwrap();
        assert_eq!(r.p, 1.0);
    }

    #[test]
    fn separated_large_samples() {
        let mut rng = seed::rng(5);
        let slow = LogNormal::new((200f64).ln(), 0.8).unwrap();
        let fast = LogNormal::new((100f64).ln(), 0.8).unwrap();
        let a: Vec<f64> = (0..500).map(|_| slow.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..500).map(|_| fast.sample(&mut rng)).collect();
        assert!(wilcoxon_rank_sum(&a, &b).unwrap().p < 1e-10);
    }

    #[test]
    fn empty_group_is_an_error() {
        assert!(matches!(
            wilcoxon_rank_sum(&[], &[1.0]),
            Err(Error::Sample(_))
        ));
        assert!(GroupSample::new(Group::Completer, vec![]).is_err());
    }

    #[test]
    fn null_counts_sum_to_binomial() {
        let c = rank_sum_null_counts(2, 2);
        assert_eq!(c, vec![1, 1, 2, 1, 1]);
        assert_eq!(rank_sum_null_counts(10, 10).iter().sum::<u128>(), 184_756);
        assert_eq!(rank_sum_null_counts(1, 0), vec![1]);
    }

    #[test]
    fn medians_and_ratios() {
        assert_eq!(median(&[3.0, 1.0, 2.0]).unwrap(), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]).unwrap(), 2.5);
        let c = GroupSample::new(Group::Completer, vec![100.0, 120.0, 140.0]).unwrap();
        let n = GroupSample::new(Group::NonCompleter, vec![50.0, 60.0, 70.0]).unwrap();
        assert_eq!(
            median_ratio_report(&c, &n).unwrap().ratio_percent,
            Some(100.0)
        );
        assert_eq!(
            median_ratio_report(&c, &c).unwrap().ratio_percent,
            Some(0.0)
        );
        let z = GroupSample::new(Group::NonCompleter, vec![0.0, 0.0, 5.0]).unwrap();
        let r = median_ratio_report(&c, &z).unwrap();
        assert!(r.undefined_ratio && r.ratio_percent.is_none());
    }

    #[test]
    fn report_renders() {
        let c = GroupSample::new(Group::Completer, vec![100.0, 120.0, 140.0, 300.0]).unwrap();
        let n = GroupSample::new(Group::NonCompleter, vec![50.0, 60.0, 70.0, 10.0]).unwrap();
        let report = stat_report(&c, &n, 1).unwrap();
        assert!(report.to_text().contains("Wilcoxon rank-sum U = 16"));
        let csv = report.medians_csv().unwrap();
        assert_eq!(
            csv,
            "group,n,median_seconds\ncompleter,4,130\nnon-completer,4,55\n"
        );
        let back: StatReport = serde_json::from_str(&report.to_json().unwrap()).unwrap();
        assert_eq!(back, report);
    }

    fn distinct_sample(len: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::btree_set(0i32..1000, len)
            .prop_map(|s| s.into_iter().map(f64::from).collect())
    }

    proptest! {
        #[test]
        fn swap_maps_u_and_keeps_p(pool in distinct_sample(14), split in 1usize..13) {
            let (a, b) = pool.split_at(split);
            let ab = wilcoxon_rank_sum(a, b).unwrap();
            let ba = wilcoxon_rank_sum(b, a).unwrap();
            prop_assert_eq!(ba.statistic, (a.len() * b.len()) as f64 - ab.statistic);
            prop_assert_eq!(ab.p, ba.p);
        }

        #[test]
        fn swap_symmetry_with_ties(a in proptest::collection::vec(0u8..6, 1..30), b in proptest::collection::vec(0u8..6, 1..30)) {
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let b: Vec<f64> = b.into_iter().map(f64::from).collect();
            let ab = wilcoxon_rank_sum(&a, &b).unwrap();
            let ba = wilcoxon_rank_sum(&b, &a).unwrap();
            prop_assert_eq!(ba.statistic, (a.len() * b.len()) as f64 - ab.statistic);
            prop_assert_eq!(ab.p, ba.p);
            prop_assert!((0.0..=1.0).contains(&ab.p));
        }

        #[test]
        fn shapiro_affine_invariance(x in proptest::collection::vec(-100.0f64..100.0, 3..60), scale in 0.01f64..100.0, shift in -1e3f64..1e3) {
            let spread = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - x.iter().cloned().fold(f64::INFINITY, f64::min);
            prop_assume!(spread > 1e-3);
            let y: Vec<f64> = x.iter().map(|v| scale * v + shift).collect();
            let a = shapiro_wilk(&x, 0).unwrap();
            let b = shapiro_wilk(&y, 0).unwrap();
            prop_assert!((a.w - b.w).abs() < 1e-9, "{} vs {}", a.w, b.w);
            prop_assert!(a.w > 0.0 && a.w <= 1.0 + 1e-12);
        }

        #[test]
        fn tests_ignore_input_order(x in proptest::collection::vec(0.0f64..50.0, 6..40), seed in any::<u64>()) {
            let mut y = x.clone();
            let mut rng = seed::rng(seed);
            for i in (1..y.len()).rev() {
                y.swap(i, rng.random_range(0..=i));
            }
            prop_assume!(x.iter().any(|v| *v != x[0]));
            prop_assert_eq!(shapiro_wilk(&x, 0).unwrap().w, shapiro_wilk(&y, 0).unwrap().w);
            let half = x.len() / 2;
            let r1 = wilcoxon_rank_sum(&x[..half], &x[half..]).unwrap();
            let mut xa = x[..half].to_vec();
            xa.reverse();
            let r2 = wilcoxon_rank_sum(&xa, &x[half..]).unwrap();
            prop_assert_eq!(r1.p, r2.p);
        }

        #[test]
        fn ratio_is_scale_invariant(c in proptest::collection::vec(1.0f64..1e4, 1..30), n in proptest::collection::vec(1.0f64..1e4, 1..30), k in 0.001f64..1000.0) {
            let ratio = |scale: f64| {
                let cs = GroupSample::new(Group::Completer, c.iter().map(|v| v * scale).collect()).unwrap();
                let ns = GroupSample::new(Group::NonCompleter, n.iter().map(|v| v * scale).collect()).unwrap();
                median_ratio_report(&cs, &ns).unwrap().ratio_percent.unwrap()
            };
            let (a, b) = (ratio(1.0), ratio(k));
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }
    }
}
