use std::collections::HashSet;
use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A course step addressed as `week.step`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StepId {
    pub week: u32,
    pub step: u32,
}

impl StepId {
    pub fn new(week: u32, step: u32) -> Self {
        StepId { week, step }
    }
}

impl std::fmt::Display for StepId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}.{}", self.week, self.step)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSpec {
    pub id: u32,
    /// Run start, UTC seconds.
    pub start: i64,
}

/// Course structure shared by all runs of one course.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CourseSpec {
    course_id: String,
    runs: Vec<RunSpec>,
    weeks: u32,
    /// Sorted by `(week, step)`, unique.
    steps: Vec<StepId>,
}

#[derive(Serialize, Deserialize)]
struct CourseSpecFile {
    course_id: String,
    weeks: u32,
    steps: Vec<[u32; 2]>,
    runs: Vec<RunFile>,
}

#[derive(Serialize, Deserialize)]
struct RunFile {
    id: u32,
    start: String,
}

impl CourseSpec {
    pub fn new(
        course_id: impl Into<String>,
        runs: Vec<RunSpec>,
        weeks: u32,
        steps: Vec<StepId>,
    ) -> Result<Self> {
        let course_id = course_id.into();
        if runs.is_empty() {
            return Err(Error::Schema("course spec lists no runs".into()));
        }
        let mut run_ids = HashSet::new();
        for run in &runs {
            if run.id == 0 {
                return Err(Error::Schema("run ids must be positive".into()));
            }
            if !run_ids.insert(run.id) {
                return Err(Error::Schema(format!("duplicate run id {}", run.id)));
            }
        }
        let mut sorted = steps;
        sorted.sort_unstable();
        for pair in sorted.windows(2) {
            if pair[0] == pair[1] {
                return Err(Error::Schema(format!("duplicate step {}", pair[0])));
            }
        }
        if let Some(bad) = sorted.iter().find(|s| s.week == 0 || s.step == 0) {
            return Err(Error::Schema(format!(
                "step {bad}: week and step must be >= 1"
            )));
        }
        let max_week = sorted.iter().map(|s| s.week).max().unwrap_or(0);
        if max_week != weeks || weeks == 0 {
            return Err(Error::Schema(format!(
                "weeks = {weeks} but the highest week among steps is {max_week}"
            )));
        }
        Ok(CourseSpec {
            course_id,
            runs,
            weeks,
            steps: sorted,
        })
    }

    /// Reads the TOML course description.
    ///
    /// ```toml
    /// course_id = "bigdata"
    /// weeks = 2
    /// steps = [[1, 1], [1, 2], [2, 1]]
    ///
    /// [[runs]]
    /// id = 1
    /// start = "2015-01-05T00:00:00Z"
    /// ```
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: CourseSpecFile =
            toml::from_str(text).map_err(|e| Error::Schema(format!("course spec: {e}")))?;
        let runs = file
            .runs
            .iter()
            .map(|r| {
                Ok(RunSpec {
                    id: r.id,
                    start: parse_timestamp(&r.start)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let steps = file.steps.iter().map(|&[w, s]| StepId::new(w, s)).collect();
        CourseSpec::new(file.course_id, runs, file.weeks, steps)
    }

    pub fn to_toml_string(&self) -> String {
        let file = CourseSpecFile {
            course_id: self.course_id.clone(),
            weeks: self.weeks,
            steps: self.steps.iter().map(|s| [s.week, s.step]).collect(),
            runs: self
                .runs
                .iter()
                .map(|r| RunFile {
                    id: r.id,
                    start: format_timestamp(r.start),
                })
                .collect(),
        };
        toml::to_string(&file).expect("course spec always serialises")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn course_id(&self) -> &str {
        &self.course_id
    }

    pub fn runs(&self) -> &[RunSpec] {
        &self.runs
    }

    pub fn run(&self, id: u32) -> Option<&RunSpec> {
        self.runs.iter().find(|r| r.id == id)
    }

    pub fn weeks(&self) -> u32 {
        self.weeks
    }

    pub fn steps(&self) -> &[StepId] {
        &self.steps
    }

    pub fn contains_step(&self, step: StepId) -> bool {
        self.steps.binary_search(&step).is_ok()
    }

    /// Steps belonging to weeks `1..=weeks`, in `(week, step)` order.
    pub fn steps_through_week(&self, weeks: u32) -> impl Iterator<Item = StepId> + '_ {
        self.steps.iter().copied().filter(move |s| s.week <= weeks)
    }
}

/// Parses an ISO-8601 / RFC 3339 timestamp into UTC seconds.
pub fn parse_timestamp(text: &str) -> Result<i64> {
    DateTime::parse_from_rfc3339(text.trim())
        .map(|t| t.timestamp())
        .map_err(|e| Error::Schema(format!("bad timestamp {text:?}: {e}")))
}

pub fn format_timestamp(seconds: i64) -> String {
    DateTime::<Utc>::from_timestamp(seconds, 0)
        .expect("timestamp in chrono range")
        .to_rfc3339_opts(SecondsFormat::Secs, true)
}
