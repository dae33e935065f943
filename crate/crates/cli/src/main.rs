use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use dropout_core::cohort::{
    build_features, label_activities, parse_activity_log, CourseSpec, FeatureMatrix, FeatureMode,
    FeatureOptions, LabeledLearner, DEFAULT_CAP_SECONDS, DEFAULT_COMPLETION_THRESHOLD,
};
use dropout_core::ensembles::{ensemble_gini_importance, train, LearnerConfig, LearnerKind};
use dropout_core::eval::{cross_validate, format_table, repeated_holdout, EvalReport};
use dropout_core::stats::{first_step_extract, stat_report, Group, GroupSample};
use dropout_core::synth::{generate_cohort, SynthConfig};
use dropout_core::Error;
use serde_json::json;

/// Writes to stdout, ignoring a closed pipe.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = write!(std::io::stdout().lock(), $($arg)*);
    }};
}

macro_rules! sayln {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

#[derive(Parser, Debug)]
#[command(
    name = "dropout",
    version,
    about = "First-week MOOC dropout prediction pipeline"
)]
struct Cli {
    /// Worker threads; defaults to the number of available cores.
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    threads: Option<u16>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic cohort: activity.csv, course.toml and labels.csv.
    Synth(SynthArgs),
    /// Parse, merge and label an activity log; writes one CSV row per learner.
    Ingest(IngestArgs),
    /// Build the week-1 feature matrix as CSV.
    Features(FeatureArgs),
    /// Fit one learner on all rows and save the model as JSON.
    Train(TrainArgs),
    /// Repeated stratified hold-out with training-side oversampling.
    Evaluate(EvaluateArgs),
    /// Stratified k-fold cross-validation with training-side oversampling.
    Cv(CvArgs),
    /// First-step time analysis: normality, rank-sum test and median ratio.
    Stats(StatsArgs),
    /// Print the results table of saved evaluation reports.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5000)]
    learners: usize,
    /// Fraction of completers.
    #[arg(long, default_value_t = 0.146)]
    prior: f64,
    #[arg(long, default_value_t = 5)]
    weeks: u32,
    #[arg(long, default_value_t = 8)]
    steps_per_week: u32,
    #[arg(long, default_value_t = 2)]
    runs: u32,
    /// Mean visits per step of non-completers.
    #[arg(long, default_value_t = 0.6)]
    visit_rate: f64,
    /// Completer over non-completer visit rate.
    #[arg(long, default_value_t = 2.0)]
    visit_ratio: f64,
    /// Median visit duration of non-completers, in seconds.
    #[arg(long, default_value_t = 120.0)]
    duration_median: f64,
    /// Completer over non-completer median duration.
    #[arg(long, default_value_t = 2.0)]
    ratio: f64,
    /// Log-scale standard deviation of durations.
    #[arg(long, default_value_t = 0.6)]
    sigma: f64,
    /// Fraction of learners showing the other class's behaviour.
    #[arg(long, default_value_t = 0.02)]
    noise: f64,
    /// Fraction of visits logged without an end time.
    #[arg(long, default_value_t = 0.1)]
    open_fraction: f64,
    /// Generate a course without quiz steps.
    #[arg(long)]
    no_quiz: bool,
    #[arg(long, default_value_t = DEFAULT_COMPLETION_THRESHOLD)]
    threshold: f64,
    #[arg(long, default_value = "synth-course")]
    course_id: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct LogArgs {
    /// Activity log CSV.
    #[arg(long)]
    input: PathBuf,
    /// Course spec TOML.
    #[arg(long)]
    spec: PathBuf,
    /// Completion coverage threshold.
    #[arg(long, default_value_t = DEFAULT_COMPLETION_THRESHOLD)]
    threshold: f64,
}

#[derive(Args, Debug)]
struct IngestArgs {
    #[command(flatten)]
    log: LogArgs,
    /// Labelled learners CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FeatureFlags {
    /// Feature layout.
    #[arg(long, default_value_t = FeatureMode::PerStep)]
    mode: FeatureMode,
    /// Cap on gap-derived visit durations, in seconds.
    #[arg(long, default_value_t = DEFAULT_CAP_SECONDS)]
    cap_seconds: f64,
}

#[derive(Args, Debug)]
struct FeatureArgs {
    #[command(flatten)]
    log: LogArgs,
    #[command(flatten)]
    features: FeatureFlags,
    /// Feature matrix CSV.
    #[arg(long)]
    out: PathBuf,
}

/// A feature matrix CSV, or an activity log when `--spec` is given.
#[derive(Args, Debug)]
struct MatrixInput {
    /// Feature matrix CSV, or activity log CSV together with --spec.
    #[arg(long)]
    input: PathBuf,
    /// Course spec TOML; makes --input an activity log.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_COMPLETION_THRESHOLD)]
    threshold: f64,
    #[command(flatten)]
    features: FeatureFlags,
}

#[derive(Args, Debug)]
struct Hyper {
    /// Random forest trees.
    #[arg(long, default_value_t = 100)]
    trees: usize,
    /// Boosting rounds.
    #[arg(long, default_value_t = 100)]
    rounds: usize,
    /// Shrinkage of gb and xgb.
    #[arg(long, default_value_t = 0.1)]
    learning_rate: f64,
    /// Tree depth limit [default: rf 12, gb 3, ada 1, xgb 3].
    #[arg(long)]
    max_depth: Option<usize>,
    /// Minimum rows per leaf [default: rf 5, gb 5, ada 1, xgb 5].
    #[arg(long)]
    min_samples_leaf: Option<usize>,
    /// Features tried per forest node [default: floor(sqrt(d))].
    #[arg(long)]
    mtry: Option<usize>,
    /// L2 leaf penalty of xgb.
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Split penalty of xgb.
    #[arg(long, default_value_t = 0.0)]
    gamma: f64,
}

impl Hyper {
    fn config(&self, kind: LearnerKind) -> LearnerConfig {
        let mut config = LearnerConfig::default_for(kind);
        match &mut config {
            LearnerConfig::RandomForest(p) => {
                p.n_trees = self.trees;
                p.mtry = self.mtry;
                p.max_depth = self.max_depth.unwrap_or(p.max_depth);
                p.min_samples_leaf = self.min_samples_leaf.unwrap_or(p.min_samples_leaf);
            }
            LearnerConfig::GradientBoosting(p) => {
                p.n_rounds = self.rounds;
                p.learning_rate = self.learning_rate;
                p.max_depth = self.max_depth.unwrap_or(p.max_depth);
                p.min_samples_leaf = self.min_samples_leaf.unwrap_or(p.min_samples_leaf);
            }
            LearnerConfig::AdaBoost(p) => {
                p.n_rounds = self.rounds;
                p.max_depth = self.max_depth.unwrap_or(p.max_depth);
                p.min_samples_leaf = self.min_samples_leaf.unwrap_or(p.min_samples_leaf);
            }
            LearnerConfig::SecondOrderBoosting(p) => {
                p.n_rounds = self.rounds;
                p.learning_rate = self.learning_rate;
                p.lambda = self.lambda;
                p.gamma = self.gamma;
                p.max_depth = self.max_depth.unwrap_or(p.max_depth);
                p.min_samples_leaf = self.min_samples_leaf.unwrap_or(p.min_samples_leaf);
            }
        }
        config
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    input: MatrixInput,
    /// Learner: rf, gb, ada or xgb.
    #[arg(long, default_value_t = LearnerKind::RandomForest)]
    model: LearnerKind,
    #[command(flatten)]
    hyper: Hyper,
    /// Model JSON.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    input: MatrixInput,
    /// Comma-separated learners (rf, gb, ada, xgb) or "all".
    #[arg(long, default_value = "rf")]
    model: String,
    #[command(flatten)]
    hyper: Hyper,
    #[arg(long, default_value_t = 100)]
    repeats: usize,
    #[arg(long, default_value_t = 0.3)]
    test_fraction: f64,
    /// Report JSON.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct CvArgs {
    #[command(flatten)]
    input: MatrixInput,
    /// Comma-separated learners (rf, gb, ada, xgb) or "all".
    #[arg(long, default_value = "rf")]
    model: String,
    #[command(flatten)]
    hyper: Hyper,
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Report JSON.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct StatsArgs {
    #[command(flatten)]
    log: LogArgs,
    #[arg(long, default_value_t = DEFAULT_CAP_SECONDS)]
    cap_seconds: f64,
    /// Output directory for stats.json, stats.txt and medians.csv.
    #[arg(long)]
    out: PathBuf,
    /// Seed of the Shapiro-Wilk subsample for groups above 5000.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Report JSON written by evaluate or cv; repeatable.
    #[arg(long, required = true)]
    input: Vec<PathBuf>,
    /// Also write the table to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Exit code 1: invalid input or configuration. Exit code 2: failure while running.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::Io { .. } | Error::Training(_) | Error::Repeat { .. }) => 2,
        Some(_) => 1,
        None if err.chain().any(|e| e.is::<std::io::Error>()) => 2,
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(usize::from(n))
            .build_global()
        {
            eprintln!("error: cannot start {n} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Ingest(a) => ingest(a),
        Command::Features(a) => features(a),
        Command::Train(a) => train_cmd(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Cv(a) => cv(a),
        Command::Stats(a) => stats(a),
        Command::Report(a) => report(a),
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    fs::write(path, contents).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let config = SynthConfig {
        course_id: a.course_id,
        learners: a.learners,
        completer_prior: a.prior,
        weeks: a.weeks,
        steps_per_week: a.steps_per_week,
        runs: a.runs,
        visit_rate: [a.visit_rate, a.visit_rate * a.visit_ratio],
        duration_median: [a.duration_median, a.duration_median * a.ratio],
        duration_sigma: a.sigma,
        quiz: if a.no_quiz {
            None
        } else {
            SynthConfig::default().quiz
        },
        open_fraction: a.open_fraction,
        noise: a.noise,
        completion_threshold: a.threshold,
        seed: a.seed,
    };
    let cohort = generate_cohort(&config)?;
    cohort.write_to_dir(&a.out)?;
    let completers = cohort.labels.iter().filter(|l| l.label == 1).count();
    sayln!(
        "wrote {} visits by {} learners ({} completers) to {}",
        cohort.activities.len(),
        cohort.labels.len(),
        completers,
        a.out.display()
    );
    Ok(())
}

fn load_labeled(log: &LogArgs) -> Result<(CourseSpec, Vec<LabeledLearner>)> {
    let spec = CourseSpec::load(&log.spec)?;
    let activities = parse_activity_log(&log.input, &spec)?;
    let labeled = label_activities(activities, &spec, log.threshold)?;
    Ok((spec, labeled))
}

fn feature_options(flags: &FeatureFlags) -> FeatureOptions {
    FeatureOptions {
        mode: flags.mode,
        cap_seconds: flags.cap_seconds,
        ..FeatureOptions::default()
    }
}

fn ingest(a: IngestArgs) -> Result<()> {
    let (spec, labeled) = load_labeled(&a.log)?;
    let mut out = csv::Writer::from_writer(Vec::new());
    out.write_record([
        "learner_id",
        "run",
        "visits",
        "distinct_steps",
        "coverage",
        "label",
    ])?;
    for l in &labeled {
        out.write_record([
            l.timeline.key.learner_id.clone(),
            l.timeline.key.run.to_string(),
            l.timeline.visits.len().to_string(),
            l.timeline.distinct_steps(&spec).to_string(),
            l.label.coverage.to_string(),
            l.label.label.to_string(),
        ])?;
    }
    write(&a.out, out.into_inner().map_err(|e| e.into_error())?)?;
    let completers = labeled.iter().filter(|l| l.label.label == 1).count();
    sayln!(
        "{} learners, {} completers, {} non-completers",
        labeled.len(),
        completers,
        labeled.len() - completers
    );
    Ok(())
}

fn features(a: FeatureArgs) -> Result<()> {
    let (spec, labeled) = load_labeled(&a.log)?;
    let matrix = build_features(&labeled, &spec, &feature_options(&a.features))?;
    let mut buf = Vec::new();
    matrix.write_csv(&mut buf)?;
    write(&a.out, buf)?;
    let [zeros, ones] = matrix.class_counts();
    sayln!(
        "{} rows x {} features ({} mode); class 0: {zeros}, class 1: {ones}",
        matrix.n_rows(),
        matrix.n_features(),
        matrix.mode()
    );
    Ok(())
}

fn load_matrix(input: &MatrixInput) -> Result<(Option<String>, FeatureMatrix)> {
    match &input.spec {
        Some(spec_path) => {
            let log = LogArgs {
                input: input.input.clone(),
                spec: spec_path.clone(),
                threshold: input.threshold,
            };
            let (spec, labeled) = load_labeled(&log)?;
            let matrix = build_features(&labeled, &spec, &feature_options(&input.features))?;
            Ok((Some(spec.course_id().to_string()), matrix))
        }
        None => Ok((None, FeatureMatrix::load_csv(&input.input)?)),
    }
}

fn parse_models(list: &str) -> Result<Vec<LearnerKind>> {
    if list.trim() == "all" {
        return Ok(LearnerKind::ALL.to_vec());
    }
    let mut kinds = Vec::new();
    for name in list.split(',') {
        let kind: LearnerKind = name.trim().parse()?;
        if !kinds.contains(&kind) {
            kinds.push(kind);
        }
    }
    Ok(kinds)
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let config = a.hyper.config(a.model);
    config.validate()?;
    let (_, matrix) = load_matrix(&a.input)?;
    let model = train(&matrix, &config, a.seed)?;
    model.save(&a.out)?;
    sayln!(
        "{} with {} trees; feature importance:",
        a.model.display_name(),
        model.trees.len()
    );
    let mut importance = ensemble_gini_importance(&model);
    importance.sort_by(|x, y| y.1.total_cmp(&x.1).then_with(|| x.0.cmp(&y.0)));
    for (name, value) in importance {
        sayln!("  {name:<24} {value:.4}");
    }
    Ok(())
}

fn emit_reports(out: &Path, reports: &[EvalReport]) -> Result<()> {
    let doc = json!({ "reports": reports });
    write(out, serde_json::to_string_pretty(&doc)? + "\n")?;
    say!("{}", format_table(reports));
    Ok(())
}

/// Learners named by `--model`, with each configuration validated up front.
fn learner_configs(list: &str, hyper: &Hyper) -> Result<Vec<(LearnerKind, LearnerConfig)>> {
    parse_models(list)?
        .into_iter()
        .map(|kind| {
            let config = hyper.config(kind);
            config.validate()?;
            Ok((kind, config))
        })
        .collect()
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    if a.repeats == 0 {
        return Err(Error::Config("--repeats must be >= 1".into()).into());
    }
    if !(a.test_fraction > 0.0 && a.test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "--test-fraction must lie in (0, 1), got {}",
            a.test_fraction
        ))
        .into());
    }
    let learners = learner_configs(&a.model, &a.hyper)?;
    let (course_id, matrix) = load_matrix(&a.input)?;
    let mut reports = Vec::new();
    for (kind, config) in learners {
        let mut r = repeated_holdout(&matrix, &config, a.repeats, a.test_fraction, a.seed)
            .with_context(|| format!("evaluating {kind}"))?;
        r.course_id = course_id.clone();
        reports.push(r);
    }
    emit_reports(&a.out, &reports)
}

fn cv(a: CvArgs) -> Result<()> {
    if a.k < 2 {
        return Err(Error::Config(format!("--k must be >= 2, got {}", a.k)).into());
    }
    let learners = learner_configs(&a.model, &a.hyper)?;
    let (course_id, matrix) = load_matrix(&a.input)?;
    let mut reports = Vec::new();
    for (kind, config) in learners {
        let mut r = cross_validate(&matrix, &config, a.k, a.seed)
            .with_context(|| format!("cross-validating {kind}"))?;
        r.course_id = course_id.clone();
        reports.push(r);
    }
    emit_reports(&a.out, &reports)
}

fn stats(a: StatsArgs) -> Result<()> {
    let (spec, labeled) = load_labeled(&a.log)?;
    let (completers, non_completers) = first_step_extract(&labeled, &spec, a.cap_seconds)?;
    let completers = GroupSample::new(Group::Completer, completers)?;
    let non_completers = GroupSample::new(Group::NonCompleter, non_completers)?;
    let mut report = stat_report(&completers, &non_completers, a.seed)?;
    report.course_id = Some(spec.course_id().to_string());
    write(&a.out.join("stats.json"), report.to_json()? + "\n")?;
    let text = report.to_text();
    write(&a.out.join("stats.txt"), &text)?;
    write(&a.out.join("medians.csv"), report.medians_csv()?)?;
    say!("{text}");
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let mut reports: Vec<EvalReport> = Vec::new();
    for path in &a.input {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(Error::from)?;
        let list = match value.get("reports") {
            Some(list) => serde_json::from_value::<Vec<EvalReport>>(list.clone()),
            None => serde_json::from_value::<EvalReport>(value).map(|r| vec![r]),
        }
        .map_err(Error::from)
        .with_context(|| format!("{} is not an evaluation report", path.display()))?;
        reports.extend(list);
    }
    let table = format_table(&reports);
    if let Some(out) = &a.out {
        write(out, &table)?;
    }
    say!("{table}");
    Ok(())
}
