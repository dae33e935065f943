use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::course::{CourseSpec, StepId};
use super::timeline::{derive_time_spent, LabeledLearner, LearnerKey, DEFAULT_CAP_SECONDS};
use crate::error::{Error, Result};

pub const SECONDS_PER_WEEK: i64 = 7 * 24 * 3600;

pub const AGGREGATE_COLUMNS: [&str; 4] = [
    "number_of_accesses",
    "time_spent",
    "correct_answers",
    "wrong_answers",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMode {
    /// Four window totals: accesses, time, correct and wrong quiz answers.
    Aggregate,
    /// Accesses and time for every step of the window.
    #[default]
    PerStep,
}

impl std::fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FeatureMode::Aggregate => "aggregate",
            FeatureMode::PerStep => "per-step",
        })
    }
}

impl std::str::FromStr for FeatureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aggregate" => Ok(FeatureMode::Aggregate),
            "per-step" => Ok(FeatureMode::PerStep),
            other => Err(Error::Config(format!("unknown feature mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureOptions {
    pub mode: FeatureMode,
    pub window_weeks: u32,
    pub cap_seconds: f64,
}

impl Default for FeatureOptions {
    fn default() -> Self {
        FeatureOptions {
            mode: FeatureMode::PerStep,
            window_weeks: 1,
            cap_seconds: DEFAULT_CAP_SECONDS,
        }
    }
}

/// Learners × named non-negative features, with binary labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    columns: Vec<String>,
    /// Row-major values.
    values: Vec<f64>,
    labels: Vec<u8>,
    keys: Vec<LearnerKey>,
    mode: FeatureMode,
}

impl FeatureMatrix {
    pub fn new(
        columns: Vec<String>,
        values: Vec<f64>,
        labels: Vec<u8>,
        keys: Vec<LearnerKey>,
        mode: FeatureMode,
    ) -> Result<Self> {
        let d = columns.len();
        if values.len() != labels.len() * d {
            return Err(Error::Dimension {
                expected: labels.len() * d,
                got: values.len(),
            });
        }
        if keys.len() != labels.len() {
            return Err(Error::Dimension {
                expected: labels.len(),
                got: keys.len(),
            });
        }
        let mut seen = HashSet::new();
        if let Some(dup) = columns.iter().find(|c| !seen.insert(c.as_str())) {
            return Err(Error::Schema(format!("duplicate column {dup:?}")));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Schema(format!(
                "feature values must be finite and >= 0, found {v}"
            )));
        }
        if let Some(l) = labels.iter().find(|l| **l > 1) {
            return Err(Error::Schema(format!("labels must be 0 or 1, found {l}")));
        }
        Ok(FeatureMatrix {
            columns,
            values,
            labels,
            keys,
            mode,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn keys(&self) -> &[LearnerKey] {
        &self.keys
    }

    pub fn mode(&self) -> FeatureMode {
        self.mode
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.n_features();
        &self.values[i * d..(i + 1) * d]
    }

    pub fn value(&self, row: usize, feature: usize) -> f64 {
        self.values[row * self.n_features() + feature]
    }

    /// Row-major feature values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.n_rows()).map(move |i| self.row(i))
    }

    /// `[count of label 0, count of label 1]`.
    pub fn class_counts(&self) -> [usize; 2] {
        let ones = self.labels.iter().filter(|&&l| l == 1).count();
        [self.labels.len() - ones, ones]
    }

    /// Rows picked by index, in the given order; indices may repeat.
    pub fn select(&self, indices: &[usize]) -> FeatureMatrix {
        let d = self.n_features();
        let mut values = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            columns: self.columns.clone(),
            values,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            keys: indices.iter().map(|&i| self.keys[i].clone()).collect(),
            mode: self.mode,
        }
    }

    /// CSV with `learner_id,run,<features…>,label`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(writer);
        let mut header = vec!["learner_id".to_string(), "run".to_string()];
        header.extend(self.columns.iter().cloned());
        header.push("label".into());
        csv.write_record(&header)?;
        for i in 0..self.n_rows() {
            let mut record = vec![
                self.keys[i].learner_id.clone(),
                self.keys[i].run.to_string(),
            ];
            record.extend(self.row(i).iter().map(|v| v.to_string()));
            record.push(self.labels[i].to_string());
            csv.write_record(&record)?;
        }
        csv.flush().map_err(|e| Error::io("<feature csv>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut csv = csv::Reader::from_reader(reader);
        let header: Vec<String> = csv.headers()?.iter().map(str::to_string).collect();
        let n = header.len();
        if n < 3 || header[0] != "learner_id" || header[1] != "run" || header[n - 1] != "label" {
            return Err(Error::Parse {
                line: 1,
                message: "expected header learner_id,run,<features...>,label".into(),
            });
        }
        let columns = header[2..n - 1].to_vec();
        let mut values = Vec::new();
        let mut labels = Vec::new();
        let mut keys = Vec::new();
        for record in csv.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            let bad = |message: String| Error::Parse { line, message };
            keys.push(LearnerKey {
                learner_id: record[0].to_string(),
                run: record[1]
                    .parse()
                    .map_err(|_| bad(format!("bad run {:?}", &record[1])))?,
            });
            for field in record.iter().take(n - 1).skip(2) {
                values.push(
                    field
                        .parse::<f64>()
                        .map_err(|_| bad(format!("bad value {field:?}")))?,
                );
            }
            labels.push(
                record[n - 1]
                    .parse::<u8>()
                    .map_err(|_| bad(format!("bad label {:?}", &record[n - 1])))?,
            );
        }
        let mode = if columns.iter().map(String::as_str).eq(AGGREGATE_COLUMNS) {
            FeatureMode::Aggregate
        } else {
            FeatureMode::PerStep
        };
        FeatureMatrix::new(columns, values, labels, keys, mode)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(file))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: FeatureMatrix = serde_json::from_str(text)?;
        FeatureMatrix::new(raw.columns, raw.values, raw.labels, raw.keys, raw.mode)
    }
}

#[derive(Default, Clone, Copy)]
struct StepTotals {
    visits: f64,
    seconds: f64,
}

/// Builds the learner × feature matrix over the first `window_weeks` weeks.
///
/// Only visits with run offset in `[0, window_weeks × 7 days)` contribute.
/// Durations are derived on the whole timeline, so an open visit at the end
/// of the window is closed by the learner's next visit even if that visit
/// falls outside it.
pub fn build_features(
    labeled: &[LabeledLearner],
    spec: &CourseSpec,
    options: &FeatureOptions,
) -> Result<FeatureMatrix> {
    if options.window_weeks == 0 {
        return Err(Error::Config("window_weeks must be >= 1".into()));
    }
    if options.window_weeks > spec.weeks() {
        return Err(Error::Config(format!(
            "window of {} weeks exceeds the {}-week course",
            options.window_weeks,
            spec.weeks()
        )));
    }
    if !(options.cap_seconds >= 0.0 && options.cap_seconds.is_finite()) {
        return Err(Error::Config(format!(
            "cap must be a non-negative number of seconds, got {}",
            options.cap_seconds
        )));
    }
    let window_end = i64::from(options.window_weeks) * SECONDS_PER_WEEK;
    let window_steps: Vec<StepId> = spec.steps_through_week(options.window_weeks).collect();

    let columns: Vec<String> = match options.mode {
        FeatureMode::Aggregate => AGGREGATE_COLUMNS.iter().map(|c| c.to_string()).collect(),
        FeatureMode::PerStep => window_steps
            .iter()
            .flat_map(|s| [format!("acc_{s}"), format!("time_{s}")])
            .collect(),
    };

    let mut values = Vec::with_capacity(labeled.len() * columns.len());
    for learner in labeled {
        let durations = derive_time_spent(&learner.timeline, options.cap_seconds);
        let in_window = learner
            .timeline
            .visits
            .iter()
            .zip(&durations)
            .filter(|(v, _)| (0..window_end).contains(&v.offset));
        match options.mode {
            FeatureMode::Aggregate => {
                let mut totals = [0.0; 4];
                for (v, &seconds) in in_window {
                    totals[0] += 1.0;
                    totals[1] += seconds;
                    totals[2] += f64::from(v.activity.quiz_correct.unwrap_or(0));
                    totals[3] += f64::from(v.activity.quiz_wrong.unwrap_or(0));
                }
                values.extend_from_slice(&totals);
            }
            FeatureMode::PerStep => {
                let mut per_step: BTreeMap<StepId, StepTotals> = BTreeMap::new();
                for (v, &seconds) in in_window {
                    let t = per_step.entry(v.activity.step()).or_default();
                    t.visits += 1.0;
                    t.seconds += seconds;
                }
                for step in &window_steps {
                    let t = per_step.get(step).copied().unwrap_or_default();
                    values.push(t.visits);
                    values.push(t.seconds);
                }
            }
        }
    }

    FeatureMatrix::new(
        columns,
        values,
        labeled.iter().map(|l| l.label.label).collect(),
        labeled.iter().map(|l| l.timeline.key.clone()).collect(),
        options.mode,
    )
}
