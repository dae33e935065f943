//! Seeded synthetic cohorts with class-conditional behaviour.
//!
//! Each learner draws a class from the completer prior. Visits per step are
//! Poisson and visit durations log-normal, with parameters chosen by the
//! learner's behaviour class (the true class, or the other one with
//! probability `noise`). Coverage is then adjusted on weeks 2 and later only,
//! so the true class agrees with the coverage labelling rule while week-1
//! behaviour keeps its sampled signal.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{
    write_activity_csv, CourseSpec, RunSpec, StepActivity, StepId, DEFAULT_COMPLETION_THRESHOLD,
    SECONDS_PER_WEEK,
};
use crate::error::{Error, Result};
use crate::seed;

/// 2020-01-06T00:00:00Z, a Monday.
const FIRST_RUN_START: i64 = 1_578_268_800;
const RUN_SPACING_WEEKS: i64 = 12;
const QUIZ_QUESTIONS: u32 = 4;
const MAX_DURATION: f64 = 6.0 * 3600.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub course_id: String,
    pub learners: usize,
    pub completer_prior: f64,
    pub weeks: u32,
    pub steps_per_week: u32,
    pub runs: u32,
    /// Mean visits per step, `[non-completer, completer]`.
    pub visit_rate: [f64; 2],
    /// Median visit duration in seconds, `[non-completer, completer]`.
    pub duration_median: [f64; 2],
    /// Log-scale standard deviation of visit durations.
    pub duration_sigma: f64,
    /// Per-question correct rate on quiz steps, `[non-completer, completer]`;
    /// `None` generates a course without quizzes.
    pub quiz: Option<[f64; 2]>,
    /// Fraction of visits logged without an end time.
    pub open_fraction: f64,
    /// Probability that a learner behaves like the other class.
    pub noise: f64,
    pub completion_threshold: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            course_id: "synth-course".into(),
            learners: 5000,
            completer_prior: 0.146,
            weeks: 5,
            steps_per_week: 8,
            runs: 2,
            visit_rate: [0.6, 1.2],
            duration_median: [120.0, 240.0],
            duration_sigma: 0.6,
            quiz: Some([0.6, 0.6]),
            open_fraction: 0.1,
            noise: 0.02,
            completion_threshold: DEFAULT_COMPLETION_THRESHOLD,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Completer median duration set to `rho` times the non-completer median.
    pub fn with_ratio(mut self, rho: f64) -> Self {
        self.duration_median[1] = self.duration_median[0] * rho;
        self
    }

    /// Identical behaviour for both classes.
    pub fn without_signal(mut self) -> Self {
        self.visit_rate[1] = self.visit_rate[0];
        self.duration_median[1] = self.duration_median[0];
        if let Some(q) = self.quiz.as_mut() {
            q[1] = q[0];
        }
        self
    }

    /// Classes differ only in visit duration (completer median `rho` times
    /// the non-completer one). Equal visit rates, balanced prior, no label
    /// noise and no open visits, so per-step time totals carry the ratio.
    pub fn duration_contrast(rho: f64) -> Self {
        let base = SynthConfig::default();
        SynthConfig {
            completer_prior: 0.5,
            visit_rate: [base.visit_rate[0]; 2],
            quiz: None,
            open_fraction: 0.0,
            noise: 0.0,
            ..base
        }
        .with_ratio(rho)
    }

    pub fn duration_ratio(&self) -> f64 {
        self.duration_median[1] / self.duration_median[0]
    }

    fn total_steps(&self) -> usize {
        (self.weeks * self.steps_per_week) as usize
    }

    /// Smallest number of distinct steps that labels a learner a completer.
    fn completer_steps(&self) -> usize {
        let total = self.total_steps();
        (0..=total)
            .find(|&k| k as f64 / total as f64 + 1e-12 >= self.completion_threshold)
            .unwrap_or(total)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.course_id.is_empty() {
            return bad("course_id must not be empty".into());
        }
        if self.learners == 0 {
            return bad("learners must be >= 1".into());
        }
        if !(self.completer_prior > 0.0 && self.completer_prior < 1.0) {
            return bad(format!(
                "completer_prior must lie in (0, 1), got {}",
                self.completer_prior
            ));
        }
        if self.weeks == 0 || self.steps_per_week == 0 || self.runs == 0 {
            return bad("weeks, steps_per_week and runs must be >= 1".into());
        }
        if self.visit_rate.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return bad(format!(
                "visit rates must be positive, got {:?}",
                self.visit_rate
            ));
        }
        if self
            .duration_median
            .iter()
            .any(|m| !(*m > 0.0 && m.is_finite()))
        {
            return bad(format!(
                "duration medians must be positive, got {:?}",
                self.duration_median
            ));
        }
        if !(self.duration_sigma >= 0.0 && self.duration_sigma.is_finite()) {
            return bad(format!(
                "duration_sigma must be >= 0, got {}",
                self.duration_sigma
            ));
        }
        if let Some(q) = self.quiz {
            if q.iter().any(|r| !(0.0..=1.0).contains(r)) {
                return bad(format!("quiz correct rates must lie in [0, 1], got {q:?}"));
            }
        }
        if !(0.0..1.0).contains(&self.open_fraction) {
            return bad(format!(
                "open_fraction must lie in [0, 1), got {}",
                self.open_fraction
            ));
        }
        if !(0.0..0.5).contains(&self.noise) {
            return bad(format!("noise must lie in [0, 0.5), got {}", self.noise));
        }
        if !(self.completion_threshold > 0.0 && self.completion_threshold <= 1.0) {
            return bad(format!(
                "completion threshold must lie in (0, 1], got {}",
                self.completion_threshold
            ));
        }
        // coverage is only adjusted after week 1
        let later = self.total_steps() - self.steps_per_week as usize;
        let need = self.completer_steps();
        if later < need {
            return bad(format!(
                "infeasible coverage: completers need {need} distinct steps but weeks 2..{} hold only {later}",
                self.weeks
            ));
        }
        if self.steps_per_week as usize >= need {
            return bad(format!(
                "infeasible coverage: week 1 alone ({} steps) reaches the completion threshold",
                self.steps_per_week
            ));
        }
        Ok(())
    }

    pub fn course_spec(&self) -> Result<CourseSpec> {
        let runs = (1..=self.runs)
            .map(|id| RunSpec {
                id,
                start: FIRST_RUN_START + i64::from(id - 1) * RUN_SPACING_WEEKS * SECONDS_PER_WEEK,
            })
            .collect();
        let steps = (1..=self.weeks)
            .flat_map(|w| (1..=self.steps_per_week).map(move |s| StepId::new(w, s)))
            .collect();
        CourseSpec::new(self.course_id.clone(), runs, self.weeks, steps)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub learner_id: String,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCohort {
    pub spec: CourseSpec,
    /// Ordered by learner, then by visit start.
    pub activities: Vec<StepActivity>,
    /// Learners with at least one visit, in generation order.
    pub labels: Vec<GroundTruth>,
}

struct Learner {
    activities: Vec<StepActivity>,
    label: u8,
}

pub fn generate_cohort(config: &SynthConfig) -> Result<SyntheticCohort> {
    config.validate()?;
    let spec = config.course_spec()?;
    let width = config.learners.to_string().len().max(5);
    let learners: Vec<Learner> = (0..config.learners)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::stream_rng(config.seed, i as u64);
            generate_learner(config, &spec, &format!("L{:0width$}", i + 1), &mut rng)
        })
        .collect();
    let mut activities = Vec::new();
    let mut labels = Vec::new();
    for l in learners {
        if l.activities.is_empty() {
            continue;
        }
        labels.push(GroundTruth {
            learner_id: l.activities[0].learner_id.clone(),
            label: l.label,
        });
        activities.extend(l.activities);
    }
    Ok(SyntheticCohort {
        spec,
        activities,
        labels,
    })
}

fn generate_learner(
    config: &SynthConfig,
    spec: &CourseSpec,
    id: &str,
    rng: &mut ChaCha8Rng,
) -> Learner {
    let label = u8::from(rng.random_bool(config.completer_prior));
    let behaviour = if rng.random_bool(config.noise) {
        1 - label
    } else {
        label
    };
    let b = usize::from(behaviour);
    let run = rng.random_range(1..=config.runs);
    let run_start = spec.run(run).expect("generated run exists").start;

    let spw = config.steps_per_week as usize;
    let total = config.total_steps();
    let poisson = Poisson::new(config.visit_rate[b]).expect("validated rate");
    let mut counts: Vec<u32> = (0..total).map(|_| poisson.sample(rng) as u32).collect();

    // adjust coverage on weeks >= 2 so the label rule reproduces `label`
    let need = config.completer_steps();
    let covered = counts.iter().filter(|&&c| c > 0).count();
    if label == 1 && covered < need {
        let mut empty: Vec<usize> = (spw..total).filter(|&s| counts[s] == 0).collect();
        empty.shuffle(rng);
        for &s in &empty[..need - covered] {
            counts[s] = 1;
        }
    } else if label == 0 && covered >= need {
        let mut visited: Vec<usize> = (spw..total).filter(|&s| counts[s] > 0).collect();
        visited.shuffle(rng);
        for &s in &visited[..covered - need + 1] {
            counts[s] = 0;
        }
    }

    let durations =
        LogNormal::new(config.duration_median[b].ln(), config.duration_sigma).expect("validated");
    let mut activities = Vec::new();
    for week in 0..config.weeks as usize {
        let mut order: Vec<usize> = (week * spw..(week + 1) * spw)
            .flat_map(|s| std::iter::repeat_n(s, counts[s] as usize))
            .collect();
        if order.is_empty() {
            continue;
        }
        order.shuffle(rng);
        let visits: Vec<(usize, i64, i64)> = order
            .into_iter()
            .map(|s| {
                let d = durations.sample(rng).clamp(1.0, MAX_DURATION).round() as i64;
                let gap = rng.random_range(5..=120);
                (s, d, gap)
            })
            .collect();
        let session: i64 = visits.iter().map(|(_, d, g)| d + g).sum();
        let latest = (SECONDS_PER_WEEK - session).max(1);
        let mut t = run_start + week as i64 * SECONDS_PER_WEEK + rng.random_range(0..latest);
        for (s, d, gap) in visits {
            let step = spec.steps()[s];
            let open = rng.random_bool(config.open_fraction);
            let quiz = match config.quiz {
                Some(rates) if step.step == config.steps_per_week => {
                    let correct = (0..QUIZ_QUESTIONS)
                        .filter(|_| rng.random_bool(rates[b]))
                        .count() as u32;
                    Some((correct, QUIZ_QUESTIONS - correct))
                }
                _ => None,
            };
            activities.push(StepActivity {
                learner_id: id.to_string(),
                course_id: config.course_id.clone(),
                run,
                week_number: step.week,
                step_number: step.step,
                visit_start: t,
                visit_end: (!open).then_some(t + d),
                quiz_correct: quiz.map(|q| q.0),
                quiz_wrong: quiz.map(|q| q.1),
            });
            t += d + gap;
        }
    }
    Learner { activities, label }
}

pub fn write_labels_csv<W: Write>(writer: W, labels: &[GroundTruth]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for l in labels {
        w.serialize(l)?;
    }
    w.flush().map_err(|e| Error::io("<labels>", e))?;
    Ok(())
}

pub fn read_labels_csv<R: Read>(reader: R) -> Result<Vec<GroundTruth>> {
    let mut r = csv::Reader::from_reader(reader);
    let labels: Vec<GroundTruth> = r.deserialize().collect::<std::result::Result<_, _>>()?;
    if let Some(bad) = labels.iter().find(|l| l.label > 1) {
        return Err(Error::Schema(format!(
            "label of {} must be 0 or 1",
            bad.learner_id
        )));
    }
    Ok(labels)
}

/// Files written by [`SyntheticCohort::write_to_dir`].
pub const ACTIVITY_FILE: &str = "activity.csv";
pub const COURSE_FILE: &str = "course.toml";
pub const LABELS_FILE: &str = "labels.csv";

impl SyntheticCohort {
    pub fn activity_csv(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        write_activity_csv(&mut buf, &self.activities)?;
        Ok(buf)
    }

    pub fn labels_csv(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        write_labels_csv(&mut buf, &self.labels)?;
        Ok(buf)
    }

    /// Writes the activity log, course spec and ground-truth labels.
    pub fn write_to_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, bytes: &[u8]| {
            let path = dir.join(name);
            std::fs::write(&path, bytes).map_err(|e| Error::io(path, e))
        };
        write(ACTIVITY_FILE, &self.activity_csv()?)?;
        write(COURSE_FILE, self.spec.to_toml_string().as_bytes())?;
        write(LABELS_FILE, &self.labels_csv()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{label_activities, read_activity_csv};

    fn small() -> SynthConfig {
        SynthConfig {
            learners: 400,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = generate_cohort(&small()).unwrap();
        let b = generate_cohort(&small()).unwrap();
        assert_eq!(a.activity_csv().unwrap(), b.activity_csv().unwrap());
        assert_eq!(a.labels_csv().unwrap(), b.labels_csv().unwrap());
        let c = generate_cohort(&SynthConfig { seed: 4, ..small() }).unwrap();
        assert_ne!(a.activity_csv().unwrap(), c.activity_csv().unwrap());
    }

    #[test]
    fn csv_round_trip_is_lossless() {
        let cohort = generate_cohort(&small()).unwrap();
        let parsed = read_activity_csv(&cohort.activity_csv().unwrap()[..], &cohort.spec).unwrap();
        assert_eq!(parsed, cohort.activities);
        let labels = read_labels_csv(&cohort.labels_csv().unwrap()[..]).unwrap();
        assert_eq!(labels, cohort.labels);
        let spec = CourseSpec::from_toml_str(&cohort.spec.to_toml_string()).unwrap();
        assert_eq!(spec, cohort.spec);
    }

    #[test]
    fn labelling_reproduces_ground_truth() {
        let cohort = generate_cohort(&SynthConfig {
            noise: 0.2,
            ..small()
        })
        .unwrap();
        let labeled = label_activities(cohort.activities.clone(), &cohort.spec, 0.8).unwrap();
        let mut truth: Vec<(String, u8)> = cohort
            .labels
            .iter()
            .map(|l| (l.learner_id.clone(), l.label))
            .collect();
        truth.sort();
        let got: Vec<(String, u8)> = labeled
            .iter()
            .map(|l| (l.timeline.key.learner_id.clone(), l.label.label))
            .collect();
        assert_eq!(got, truth);
    }

    #[test]
    fn week_one_visits_stay_in_week_one() {
        let cohort = generate_cohort(&small()).unwrap();
        for a in &cohort.activities {
            let start = cohort.spec.run(a.run).unwrap().start;
            let week = (a.visit_start - start) / SECONDS_PER_WEEK + 1;
            assert_eq!(week, i64::from(a.week_number), "{a:?}");
        }
    }

    #[test]
    fn quizzes_only_when_configured() {
        let with = generate_cohort(&small()).unwrap();
        assert!(with.activities.iter().any(|a| a.quiz_correct.is_some()));
        let without = generate_cohort(&SynthConfig {
            quiz: None,
            ..small()
        })
        .unwrap();
        assert!(without
            .activities
            .iter()
            .all(|a| a.quiz_correct.is_none() && a.quiz_wrong.is_none()));
    }

    #[test]
    fn infeasible_coverage_is_rejected() {
        let too_short = SynthConfig {
            weeks: 4,
            ..small()
        };
        assert!(matches!(generate_cohort(&too_short), Err(Error::Config(_))));
        let week_one_heavy = SynthConfig {
            weeks: 1,
            ..small()
        };
        assert!(matches!(week_one_heavy.validate(), Err(Error::Config(_))));
        assert!(SynthConfig {
            noise: 0.5,
            ..small()
        }
        .validate()
        .is_err());
        assert!(SynthConfig {
            completer_prior: 1.0,
            ..small()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn completer_count_concentrates() {
        let cohort = generate_cohort(&SynthConfig {
            learners: 10_000,
            ..small()
        })
        .unwrap();
        let completers = cohort.labels.iter().filter(|l| l.label == 1).count() as f64;
        let sd = (10_000.0 * 0.146 * 0.854f64).sqrt();
        assert!((completers - 1460.0).abs() <= 3.0 * sd, "{completers}");
    }

    #[test]
    fn thread_count_does_not_change_output() {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let a = pool.install(|| generate_cohort(&small()).unwrap());
        let b = generate_cohort(&small()).unwrap();
        assert_eq!(a, b);
    }
}
