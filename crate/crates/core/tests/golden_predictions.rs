//! Probabilities on a fixed 5-row fixture, frozen as f64 bit patterns.
//!
//! Regenerate with `DROPOUT_BLESS=1 cargo test -p dropout-core --test golden_predictions`
//! only when a change to the learners is intended.

use std::collections::BTreeMap;
use std::path::PathBuf;

use dropout_core::cohort::{FeatureMatrix, FeatureMode, LearnerKey};
use dropout_core::ensembles::{train, LearnerConfig, LearnerKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn matrix(n: usize, seed: u64) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..n {
        let time: f64 = rng.random_range(0.0..600.0);
        let visits = f64::from(rng.random_range(0..12u32));
        let quiz = f64::from(rng.random_range(0..4u32));
        let noise: f64 = rng.random_range(-120.0..120.0);
        labels.push(u8::from(time + 20.0 * visits + noise > 400.0));
        values.extend([time, visits, quiz]);
    }
    let keys = (0..n)
        .map(|i| LearnerKey {
            learner_id: format!("g{i}"),
            run: 1,
        })
        .collect();
    let columns = ["time_spent", "number_of_accesses", "correct_answers"]
        .map(String::from)
        .to_vec();
    FeatureMatrix::new(columns, values, labels, keys, FeatureMode::Aggregate).unwrap()
}

fn small_config(kind: LearnerKind) -> LearnerConfig {
    let mut config = LearnerConfig::default_for(kind);
    match &mut config {
        LearnerConfig::RandomForest(p) => p.n_trees = 15,
        LearnerConfig::GradientBoosting(p) => p.n_rounds = 20,
        LearnerConfig::AdaBoost(p) => p.n_rounds = 20,
        LearnerConfig::SecondOrderBoosting(p) => p.n_rounds = 20,
    }
    config
}

fn current() -> BTreeMap<String, Vec<[String; 2]>> {
    let train_set = matrix(80, 3);
    let probe = matrix(5, 4);
    LearnerKind::ALL
        .iter()
        .map(|&kind| {
            let model = train(&train_set, &small_config(kind), 21).unwrap();
            let rows = (0..probe.n_rows())
                .map(|i| {
                    let p = model.predict_proba(probe.row(i)).unwrap();
                    p.map(|v| format!("{:016x}", v.to_bits()))
                })
                .collect();
            (kind.short_name().to_string(), rows)
        })
        .collect()
}

#[test]
fn probabilities_match_frozen_bits() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden_proba.json");
    let got = current();
    if std::env::var_os("DROPOUT_BLESS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, serde_json::to_string_pretty(&got).unwrap() + "\n").unwrap();
    }
    let frozen: BTreeMap<String, Vec<[String; 2]>> =
        serde_json::from_str(&std::fs::read_to_string(&path).expect("golden file present"))
            .unwrap();
    assert_eq!(got, frozen);
}
