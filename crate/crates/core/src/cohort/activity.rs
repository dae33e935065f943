use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::course::{format_timestamp, parse_timestamp, CourseSpec, StepId};
use crate::error::{Error, Result};

pub const ACTIVITY_HEADER: [&str; 9] = [
    "learner_id",
    "course_id",
    "run",
    "week_number",
    "step_number",
    "visit_start",
    "visit_end",
    "quiz_correct",
    "quiz_wrong",
];

/// One learner visit to one course step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepActivity {
    pub learner_id: String,
    pub course_id: String,
    pub run: u32,
    pub week_number: u32,
    pub step_number: u32,
    /// UTC seconds.
    pub visit_start: i64,
    pub visit_end: Option<i64>,
    pub quiz_correct: Option<u32>,
    pub quiz_wrong: Option<u32>,
}

impl StepActivity {
    pub fn step(&self) -> StepId {
        StepId::new(self.week_number, self.step_number)
    }

    /// Explicit visit span in seconds, when the log recorded an end time.
    pub fn span(&self) -> Option<i64> {
        self.visit_end.map(|end| end - self.visit_start)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.learner_id.is_empty() {
            return Err("empty learner_id".into());
        }
        if self.run == 0 {
            return Err("run must be >= 1".into());
        }
        if self.week_number == 0 || self.step_number == 0 {
            return Err("week_number and step_number must be >= 1".into());
        }
        if let Some(end) = self.visit_end {
            if end < self.visit_start {
                return Err(format!(
                    "visit_end {} precedes visit_start {}",
                    format_timestamp(end),
                    format_timestamp(self.visit_start)
                ));
            }
        }
        Ok(())
    }
}

/// Reads an activity log from disk and checks every row against `spec`.
pub fn parse_activity_log(path: impl AsRef<Path>, spec: &CourseSpec) -> Result<Vec<StepActivity>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_activity_csv(file, spec)
}

pub fn read_activity_csv<R: Read>(reader: R, spec: &CourseSpec) -> Result<Vec<StepActivity>> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header = csv.headers().map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    let header: Vec<&str> = header.iter().map(str::trim).collect();
    if header != ACTIVITY_HEADER {
        return Err(Error::Parse {
            line: 1,
            message: format!(
                "expected header {:?}, found {:?}",
                ACTIVITY_HEADER.join(","),
                header.join(",")
            ),
        });
    }

    let mut out = Vec::new();
    for record in csv.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let activity = parse_record(&record).map_err(|message| Error::Parse { line, message })?;
        if !spec.contains_step(activity.step()) {
            return Err(Error::Schema(format!(
                "line {line}: step {} is not part of course {}",
                activity.step(),
                spec.course_id()
            )));
        }
        if activity.course_id != spec.course_id() {
            return Err(Error::Schema(format!(
                "line {line}: course {:?} does not match spec course {:?}",
                activity.course_id,
                spec.course_id()
            )));
        }
        out.push(activity);
    }
    Ok(out)
}

fn parse_record(record: &csv::StringRecord) -> std::result::Result<StepActivity, String> {
    let field = |i: usize| record.get(i).unwrap_or("").trim();
    fn number<T: std::str::FromStr>(name: &str, text: &str) -> std::result::Result<T, String> {
        text.parse()
            .map_err(|_| format!("{name}: expected a non-negative integer, found {text:?}"))
    }
    fn optional<T: std::str::FromStr>(
        name: &str,
        text: &str,
    ) -> std::result::Result<Option<T>, String> {
        if text.is_empty() {
            Ok(None)
        } else {
            number(name, text).map(Some)
        }
    }
    let timestamp =
        |name: &str, text: &str| parse_timestamp(text).map_err(|e| format!("{name}: {e}"));

    let visit_end = match field(6) {
        "" => None,
        text => Some(timestamp("visit_end", text)?),
    };
    let activity = StepActivity {
        learner_id: field(0).to_string(),
        course_id: field(1).to_string(),
        run: number("run", field(2))?,
        week_number: number("week_number", field(3))?,
        step_number: number("step_number", field(4))?,
        visit_start: timestamp("visit_start", field(5))?,
        visit_end,
        quiz_correct: optional("quiz_correct", field(7))?,
        quiz_wrong: optional("quiz_wrong", field(8))?,
    };
    activity.validate()?;
    Ok(activity)
}

pub fn write_activity_csv<W: Write>(writer: W, activities: &[StepActivity]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(ACTIVITY_HEADER)?;
    let opt = |v: Option<u32>| v.map(|x| x.to_string()).unwrap_or_default();
    for a in activities {
        csv.write_record([
            a.learner_id.clone(),
            a.course_id.clone(),
            a.run.to_string(),
            a.week_number.to_string(),
            a.step_number.to_string(),
            format_timestamp(a.visit_start),
            a.visit_end.map(format_timestamp).unwrap_or_default(),
            opt(a.quiz_correct),
            opt(a.quiz_wrong),
        ])?;
    }
    csv.flush().map_err(|e| Error::io("<activity csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::course::RunSpec;

    fn spec() -> CourseSpec {
        let steps = (1..=5).map(|s| StepId::new(1, s)).collect();
        CourseSpec::new(
            "bigdata",
            vec![RunSpec {
                id: 1,
                start: parse_timestamp("2015-01-05T00:00:00Z").unwrap(),
            }],
            1,
            steps,
        )
        .unwrap()
    }

    fn parse(body: &str) -> Result<Vec<StepActivity>> {
        let text = format!("{}\n{body}", ACTIVITY_HEADER.join(","));
        read_activity_csv(text.as_bytes(), &spec())
    }

    #[test]
    fn maps_fields_directly() {
        let rows = parse("L1,bigdata,1,1,3,2015-01-05T10:00:00Z,2015-01-05T10:05:00Z,,").unwrap();
        assert_eq!(rows.len(), 1);
        let a = &rows[0];
        assert_eq!(a.learner_id, "L1");
        assert_eq!((a.week_number, a.step_number), (1, 3));
        assert_eq!(a.span(), Some(300));
        assert_eq!(a.quiz_correct, None);
        assert_eq!(a.quiz_wrong, None);
    }

    #[test]
    fn end_before_start_is_a_parse_error() {
        let err =
            parse("L1,bigdata,1,1,3,2015-01-05T10:05:00Z,2015-01-05T10:00:00Z,,").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn preserves_row_count() {
        let body: Vec<String> = (0..10)
            .map(|i| {
                format!(
                    "L{i},bigdata,1,1,{},2015-01-05T10:00:{:02}Z,,2,1",
                    i % 5 + 1,
                    i
                )
            })
            .collect();
        let rows = parse(&body.join("\n")).unwrap();
        assert_eq!(rows.len(), 10);
        assert_eq!(rows[9].quiz_correct, Some(2));
    }

    #[test]
    fn unknown_step_is_a_schema_error() {
        let err = parse("L1,bigdata,1,2,1,2015-01-05T10:00:00Z,,,").unwrap_err();
        assert!(matches!(err, Error::Schema(_)), "{err}");
    }

    #[test]
    fn malformed_rows_report_their_line() {
        let err = parse(
            "L1,bigdata,1,1,1,2015-01-05T10:00:00Z,,,\nL2,bigdata,x,1,1,2015-01-05T10:00:00Z,,,",
        )
        .unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let short = parse("L1,bigdata,1").unwrap_err();
        assert!(matches!(short, Error::Parse { .. }), "{short}");
    }

    #[test]
    fn wrong_header_is_rejected() {
        let err = read_activity_csv("a,b,c\n1,2,3".as_bytes(), &spec()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let err = parse_activity_log("/nonexistent/activity.csv", &spec()).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn quoted_fields_are_accepted() {
        let rows = parse("\"L,1\",bigdata,1,1,1,2015-01-05T10:00:00Z,,,").unwrap();
        assert_eq!(rows[0].learner_id, "L,1");
        let mut buf = Vec::new();
        write_activity_csv(&mut buf, &rows).unwrap();
        let back = read_activity_csv(buf.as_slice(), &spec()).unwrap();
        assert_eq!(back, rows);
    }
}
