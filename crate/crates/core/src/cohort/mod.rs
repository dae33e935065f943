//! Activity-log ingestion, labelling and week-1 feature extraction.
//!
//! The flow is `parse_activity_log` → `group_by_run` → `merge_runs` →
//! `filter_and_label` → `build_features`. Learners are keyed by
//! `(learner_id, run)` once runs are merged.

mod activity;
mod course;
mod features;
mod timeline;

pub use activity::{
    parse_activity_log, read_activity_csv, write_activity_csv, StepActivity, ACTIVITY_HEADER,
};
pub use course::{format_timestamp, parse_timestamp, CourseSpec, RunSpec, StepId};
pub use features::{
    build_features, FeatureMatrix, FeatureMode, FeatureOptions, AGGREGATE_COLUMNS, SECONDS_PER_WEEK,
};
pub use timeline::{
    derive_time_spent, filter_and_label, group_by_run, label_activities, merge_runs,
    CompletionLabel, LabeledLearner, LearnerKey, LearnerTimeline, RunActivity, DEFAULT_CAP_SECONDS,
    DEFAULT_COMPLETION_THRESHOLD,
};
