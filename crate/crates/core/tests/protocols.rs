use dropout_core::cohort::{
    build_features, label_activities, FeatureMatrix, FeatureMode, FeatureOptions,
};
use dropout_core::ensembles::{AdaBoostParams, LearnerConfig, LearnerKind};
use dropout_core::eval::{cross_validate, repeated_holdout};
use dropout_core::synth::{generate_cohort, SynthConfig};

fn cohort_matrix(config: &SynthConfig, mode: FeatureMode) -> FeatureMatrix {
    let cohort = generate_cohort(config).unwrap();
    let labeled = label_activities(cohort.activities, &cohort.spec, 0.8).unwrap();
    let options = FeatureOptions {
        mode,
        ..FeatureOptions::default()
    };
    build_features(&labeled, &cohort.spec, &options).unwrap()
}

#[test]
fn margins_shrink_with_more_repeats() {
    let matrix = cohort_matrix(
        &SynthConfig {
            learners: 600,
            seed: 17,
            ..SynthConfig::default()
        },
        FeatureMode::Aggregate,
    );
    let stumps = LearnerConfig::AdaBoost(AdaBoostParams {
        n_rounds: 5,
        ..AdaBoostParams::default()
    });
    let mut held = 0;
    for pair in 0..20u64 {
        let few = repeated_holdout(&matrix, &stumps, 100, 0.3, 1000 + pair).unwrap();
        let many = repeated_holdout(&matrix, &stumps, 400, 0.3, 2000 + pair).unwrap();
        if many.accuracy.margin <= few.accuracy.margin {
            held += 1;
        }
    }
    assert!(held >= 19, "margin shrank in only {held} of 20 seed pairs");
}

#[test]
fn cross_validation_agrees_with_holdout() {
    let matrix = cohort_matrix(&SynthConfig::default(), FeatureMode::PerStep);
    let config = LearnerConfig::default_for(LearnerKind::GradientBoosting);
    let cv = cross_validate(&matrix, &config, 10, 3).unwrap();
    let holdout = repeated_holdout(&matrix, &config, 20, 0.3, 3).unwrap();
    let gap = (cv.accuracy.mean - holdout.accuracy.mean).abs();
    assert!(
        gap <= 0.02,
        "cv {} vs holdout {}",
        cv.accuracy.mean,
        holdout.accuracy.mean
    );
}

// about a hundred forest fits on ~6k oversampled rows; the slowest test here
#[test]
fn forest_hundred_repeats_on_default_cohort() {
    let matrix = cohort_matrix(&SynthConfig::default(), FeatureMode::PerStep);
    let config = LearnerConfig::default_for(LearnerKind::RandomForest);
    let report = repeated_holdout(&matrix, &config, 100, 0.3, 7).unwrap();
    assert_eq!(report.per_repeat.len(), 100);
    assert!(report.per_repeat.iter().all(|r| r.leaked_rows == 0));
    assert!(
        report.accuracy.margin <= 0.01,
        "margin {}",
        report.accuracy.margin
    );
    assert!(
        (0.85..=0.97).contains(&report.accuracy.mean),
        "accuracy {}",
        report.accuracy.mean
    );
}
