use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::activity::StepActivity;
use super::course::CourseSpec;
use crate::error::{Error, Result};

pub const DEFAULT_COMPLETION_THRESHOLD: f64 = 0.8;
pub const DEFAULT_CAP_SECONDS: f64 = 3600.0;

/// Learner identity after merging runs: the same id in two runs is two learners.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LearnerKey {
    pub learner_id: String,
    pub run: u32,
}

impl std::fmt::Display for LearnerKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}@run{}", self.learner_id, self.run)
    }
}

/// A visit with its offset from the start of its own run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunActivity {
    pub activity: StepActivity,
    /// Seconds since the run started.
    pub offset: i64,
}

impl RunActivity {
    pub fn key(&self) -> LearnerKey {
        LearnerKey {
            learner_id: self.activity.learner_id.clone(),
            run: self.activity.run,
        }
    }
}

/// All visits of one learner, sorted by `visit_start`, ties by `(week, step)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerTimeline {
    pub key: LearnerKey,
    pub visits: Vec<RunActivity>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompletionLabel {
    /// 1 = completer, 0 = non-completer.
    pub label: u8,
    /// Fraction of distinct course steps accessed over the whole course.
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledLearner {
    pub timeline: LearnerTimeline,
    pub label: CompletionLabel,
}

/// Splits a flat activity list into per-run lists, ordered by run id.
pub fn group_by_run(activities: Vec<StepActivity>) -> Vec<Vec<StepActivity>> {
    let mut runs: BTreeMap<u32, Vec<StepActivity>> = BTreeMap::new();
    for a in activities {
        runs.entry(a.run).or_default().push(a);
    }
    runs.into_values().collect()
}

/// Puts every run on a common clock by expressing each visit relative to the
/// start of its own run.
pub fn merge_runs(per_run: &[Vec<StepActivity>], spec: &CourseSpec) -> Result<Vec<RunActivity>> {
    let mut merged = Vec::with_capacity(per_run.iter().map(Vec::len).sum());
    for activity in per_run.iter().flatten() {
        let run = spec.run(activity.run).ok_or_else(|| {
            Error::Schema(format!(
                "run {} of learner {} is not listed in course {}",
                activity.run,
                activity.learner_id,
                spec.course_id()
            ))
        })?;
        merged.push(RunActivity {
            offset: activity.visit_start - run.start,
            activity: activity.clone(),
        });
    }
    Ok(merged)
}

impl LearnerTimeline {
    fn from_visits(key: LearnerKey, mut visits: Vec<RunActivity>) -> Self {
        visits.sort_by(|a, b| {
            (a.activity.visit_start, a.activity.step())
                .cmp(&(b.activity.visit_start, b.activity.step()))
        });
        LearnerTimeline { key, visits }
    }

    pub fn distinct_steps(&self, spec: &CourseSpec) -> usize {
        self.visits
            .iter()
            .map(|v| v.activity.step())
            .filter(|s| spec.contains_step(*s))
            .collect::<BTreeSet<_>>()
            .len()
    }
}

/// Groups visits into learner timelines and labels each learner by coverage.
///
/// Learners without any visit never reach this point, so the inactive
/// enrollees are excluded by construction. Output is ordered by learner key.
pub fn filter_and_label(
    activities: &[RunActivity],
    spec: &CourseSpec,
    threshold: f64,
) -> Result<Vec<LabeledLearner>> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::Config(format!(
            "completion threshold must lie in (0, 1], got {threshold}"
        )));
    }
    let mut grouped: BTreeMap<LearnerKey, Vec<RunActivity>> = BTreeMap::new();
    for a in activities {
        grouped.entry(a.key()).or_default().push(a.clone());
    }
    let total = spec.steps().len() as f64;
    Ok(grouped
        .into_iter()
        .filter(|(_, visits)| !visits.is_empty())
        .map(|(key, visits)| {
            let timeline = LearnerTimeline::from_visits(key, visits);
            let coverage = timeline.distinct_steps(spec) as f64 / total;
            // coverage is a ratio of small integers; absorb representation error
            let label = u8::from(coverage + 1e-12 >= threshold);
            LabeledLearner {
                timeline,
                label: CompletionLabel { label, coverage },
            }
        })
        .collect())
}

/// Groups raw rows by run, merges runs and labels learners.
pub fn label_activities(
    activities: Vec<StepActivity>,
    spec: &CourseSpec,
    threshold: f64,
) -> Result<Vec<LabeledLearner>> {
    let merged = merge_runs(&group_by_run(activities), spec)?;
    filter_and_label(&merged, spec, threshold)
}

/// Time spent on each visit of a timeline, aligned with `timeline.visits`.
///
/// An explicit `visit_end` wins. Otherwise the visit lasts until the next
/// visit starts, capped at `cap`. The last visit, when open, takes the median
/// of the learner's other durations, or `cap` when there are none.
pub fn derive_time_spent(timeline: &LearnerTimeline, cap: f64) -> Vec<f64> {
    let visits = &timeline.visits;
    let mut durations: Vec<Option<f64>> = visits
        .iter()
        .enumerate()
        .map(|(i, v)| match v.activity.span() {
            Some(span) => Some(span as f64),
            None => visits
                .get(i + 1)
                .map(|next| ((next.activity.visit_start - v.activity.visit_start) as f64).min(cap)),
        })
        .collect();

    if matches!(durations.last(), Some(None)) {
        let mut known: Vec<f64> = durations.iter().flatten().copied().collect();
        let fallback = if known.is_empty() {
            cap
        } else {
            known.sort_by(f64::total_cmp);
            median_sorted(&known)
        };
        if let Some(last) = durations.last_mut() {
            *last = Some(fallback);
        }
    }
    durations.into_iter().map(|d| d.unwrap_or(cap)).collect()
}

fn median_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}
