use nalgebra::DMatrix;
use proptest::prelude::*;

use cswm_core::data::{generate_synthetic, SyntheticShiftSpec};
use cswm_core::eval::{
    accuracy, baseline_source_only, run_cv, run_cv_on, stratified_folds, ExperimentConfig, Method,
};
use cswm_core::model::HyperParams;
use cswm_core::{DomainDataset, Error};

fn quick_hp() -> HyperParams {
    HyperParams {
        outer_iters: 5,
        subgrad_iters: 50,
        ..HyperParams::default()
    }
}

#[test]
fn separable_pair_is_classified_perfectly() {
    let spec = SyntheticShiftSpec {
        dim: 2,
        n: 200,
        separation: 12.0,
        angle: 0.0,
        translation: Vec::new(),
        noise: 0.0,
        seed: 4,
    };
    let mut config = ExperimentConfig::synthetic(spec);
    config.hp = quick_hp();
    let report = run_cv(&config, 2).unwrap();
    assert_eq!(report.methods.len(), 5);
    for m in &report.methods {
        assert_eq!(m.fold_accuracies, vec![1.0; 10], "{}", m.method.name());
        assert_eq!(m.mean_accuracy, 1.0);
    }
    assert_eq!(report.fold_sizes.iter().sum::<usize>(), 20);
}

#[test]
fn coin_flip_labels_give_chance_accuracy() {
    // 200 labeled target points; 100 source points keep the QP small.
    let spec = SyntheticShiftSpec {
        dim: 3,
        n: 2000,
        separation: 2.0,
        angle: 0.3,
        translation: Vec::new(),
        noise: 0.5,
        seed: 21,
    };
    let pair = generate_synthetic(&spec).unwrap();
    let source_rows: Vec<usize> = (0..100).collect();
    let source = pair.source.select(&source_rows, 100).unwrap();
    let mut config = ExperimentConfig::synthetic(spec);
    config.hp = HyperParams {
        outer_iters: 3,
        subgrad_iters: 30,
        ..HyperParams::default()
    };
    let report = run_cv_on(&config, &source, &pair.target, 4).unwrap();
    for m in &report.methods {
        assert!(
            (0.35..=0.65).contains(&m.mean_accuracy),
            "{}: {}",
            m.method.name(),
            m.mean_accuracy
        );
    }
}

#[test]
fn too_few_labels_for_the_folds() {
    let spec = SyntheticShiftSpec {
        dim: 2,
        n: 90,
        separation: 3.0,
        angle: 0.0,
        translation: Vec::new(),
        noise: 0.0,
        seed: 0,
    };
    let config = ExperimentConfig::synthetic(spec);
    let err = run_cv(&config, 1).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}

fn target_accuracy(angle: f64, seed: u64) -> (f64, f64) {
    let spec = SyntheticShiftSpec {
        dim: 2,
        n: 400,
        separation: 4.0,
        angle,
        translation: Vec::new(),
        noise: 0.0,
        seed,
    };
    let pair = generate_synthetic(&spec).unwrap();
    let beta = baseline_source_only(&pair.source, &HyperParams::default()).unwrap();
    let source_acc = accuracy((pair.source.features() * &beta).as_slice(), pair.source.labels()).unwrap();
    let target_acc = accuracy((pair.target.features() * &beta).as_slice(), &pair.target_truth).unwrap();
    (source_acc, target_acc)
}

#[test]
fn zero_shift_baseline_transfers() {
    for seed in 0..5 {
        let (s, t) = target_accuracy(0.0, seed);
        assert!((s - t).abs() <= 0.05, "seed {seed}: source {s}, target {t}");
    }
}

#[test]
fn half_turn_inverts_the_baseline() {
    for seed in 0..5 {
        let (_, t) = target_accuracy(std::f64::consts::PI, seed);
        assert!(t < 0.5, "seed {seed}: target {t}");
    }
}

#[test]
fn separable_source_is_fit_exactly() {
    let x = DMatrix::from_row_slice(6, 2, &[2.0, 1.0, 3.0, -2.0, 2.5, 0.0, -2.0, 1.0, -3.0, 0.5, -2.2, -1.0]);
    let source = DomainDataset::new(x, vec![1.0, 1.0, 1.0, -1.0, -1.0, -1.0]).unwrap();
    let beta = baseline_source_only(&source, &HyperParams::default()).unwrap();
    let acc = accuracy((source.features() * &beta).as_slice(), source.labels()).unwrap();
    assert_eq!(acc, 1.0);
}

#[test]
fn report_means_and_json_round_trip() {
    let spec = SyntheticShiftSpec {
        dim: 3,
        n: 100,
        separation: 3.0,
        angle: 0.4,
        translation: Vec::new(),
        noise: 0.1,
        seed: 2,
    };
    let mut config = ExperimentConfig::synthetic(spec);
    config.hp = quick_hp();
    config.folds = 5;
    config.baselines = vec![Method::SourceOnly];
    let report = run_cv(&config, 1).unwrap();
    assert_eq!(report.methods.len(), 2);
    for m in &report.methods {
        assert_eq!(m.fold_accuracies.len(), 5);
        assert_eq!(m.mean_accuracy, m.fold_accuracies.iter().sum::<f64>() / 5.0);
        assert_eq!(m.objective_traces.len(), 5);
    }
    assert!(report.method(Method::Proposed).unwrap().objective_traces.iter().all(|t| !t.is_empty()));
    assert_eq!(report.config.hp.r, Some(3));
    let text = report.to_json().unwrap();
    let back: cswm_core::eval::ExperimentReport = serde_json::from_str(&text).unwrap();
    assert_eq!(back, report);
}

proptest! {
    #[test]
    fn folds_form_a_stratified_partition(
        labels in prop::collection::vec(prop::bool::ANY, 10..120),
        folds in 2usize..10,
        seed in 0u64..1000,
    ) {
        let labels: Vec<f64> = labels.iter().map(|&b| if b { 1.0 } else { -1.0 }).collect();
        prop_assume!(labels.len() >= folds);
        let assignment = stratified_folds(&labels, folds, seed).unwrap();
        prop_assert_eq!(assignment.len(), labels.len());
        prop_assert!(assignment.iter().all(|&f| f < folds));
        let pos_total = labels.iter().filter(|&&y| y > 0.0).count();
        for f in 0..folds {
            let members: Vec<usize> = (0..labels.len()).filter(|&i| assignment[i] == f).collect();
            let pos = members.iter().filter(|&&i| labels[i] > 0.0).count();
            let lo = pos_total / folds;
            prop_assert!(pos == lo || pos == lo + 1);
            let size_lo = labels.len() / folds;
            prop_assert!(members.len() == size_lo || members.len() == size_lo + 1);
        }
    }
}
