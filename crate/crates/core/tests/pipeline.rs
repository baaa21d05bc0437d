//! Library-level pipeline: generate, persist, reload, score, calibrate,
//! evaluate — everything through public API and real files.

use std::collections::BTreeMap;
use std::path::PathBuf;

use ovcal::calibrate::{apply_dac, compose, fit_temperature, CalibratorModel};
use ovcal::dataset::{
    normalize_rows, softmax, tensor_file, validate_artifacts, ArtifactManifest, ArtifactRole,
    SplitDescriptor,
};
use ovcal::metrics::{ece, metrics_report, reliability_table};
use ovcal::proximity::{td_scores, ProximityConfig};
use ovcal::synth::{generate_scenario, ScenarioConfig};

fn small_cfg() -> ScenarioConfig {
    ScenarioConfig {
        num_base_classes: 14,
        num_new_classes: 12,
        dim: 24,
        samples_per_class: 15,
        gap_strength: 0.8,
        sharpness_slope: 2.0,
        tau: 100.0,
        seed: 21,
    }
}

#[test]
fn bundle_survives_disk_round_trip_within_f32_precision() {
    let bundle = generate_scenario(&small_cfg()).unwrap();
    let dir = tempfile::tempdir().unwrap();

    let mut entries = BTreeMap::new();
    for (role, set) in [
        (ArtifactRole::PretrainedBase, &bundle.pre_base),
        (ArtifactRole::TunedBase, &bundle.tuned_base),
        (ArtifactRole::PretrainedQuery, &bundle.pre_query),
        (ArtifactRole::TunedQuery, &bundle.tuned_query),
    ] {
        let file = format!("{role}.vcal");
        tensor_file::write_embedding_set(&dir.path().join(&file), set).unwrap();
        entries.insert(role, PathBuf::from(file));
    }
    for (role, preds) in [
        (ArtifactRole::BaseFit, &bundle.base_fit),
        (ArtifactRole::BaseEval, &bundle.base_eval),
        (ArtifactRole::NewEval, &bundle.new_eval),
    ] {
        let file = format!("{role}.vcal");
        tensor_file::write_prediction_set(&dir.path().join(&file), preds).unwrap();
        entries.insert(role, PathBuf::from(file));
    }
    let manifest = ArtifactManifest::new(
        entries,
        SplitDescriptor {
            base_classes: bundle.pre_base.class_names().to_vec(),
            new_classes: bundle.pre_query.class_names().to_vec(),
        },
        String::new(),
        dir.path().to_owned(),
    );
    manifest.save(&dir.path().join("manifest.json")).unwrap();

    let reloaded = ArtifactManifest::load(&dir.path().join("manifest.json")).unwrap();
    assert!(validate_artifacts(&reloaded).unwrap().is_empty());

    // TD scores computed from the reloaded (f32-rounded, renormalized)
    // artifacts agree with the in-memory bundle to well within the export
    // rounding budget.
    let cfg = ProximityConfig { k: 5 };
    let in_memory = td_scores(
        &bundle.pre_base,
        &bundle.tuned_base,
        &bundle.pre_query,
        &bundle.tuned_query,
        &cfg,
        bundle.pre_base.class_names(),
    )
    .unwrap();
    let from_disk = td_scores(
        &normalize_rows(
            &reloaded
                .load_embedding_set(ArtifactRole::PretrainedBase)
                .unwrap(),
        )
        .unwrap(),
        &normalize_rows(
            &reloaded
                .load_embedding_set(ArtifactRole::TunedBase)
                .unwrap(),
        )
        .unwrap(),
        &normalize_rows(
            &reloaded
                .load_embedding_set(ArtifactRole::PretrainedQuery)
                .unwrap(),
        )
        .unwrap(),
        &normalize_rows(
            &reloaded
                .load_embedding_set(ArtifactRole::TunedQuery)
                .unwrap(),
        )
        .unwrap(),
        &cfg,
        &reloaded.split_descriptor.base_classes,
    )
    .unwrap();
    for (a, b) in in_memory.gammas().iter().zip(from_disk.gammas()) {
        assert!((a - b).abs() < 1e-4, "{a} vs {b}");
    }
}

#[test]
fn calibrator_files_reproduce_in_memory_output() {
    let bundle = generate_scenario(&small_cfg()).unwrap();
    let table = td_scores(
        &bundle.pre_base,
        &bundle.tuned_base,
        &bundle.pre_query,
        &bundle.tuned_query,
        &ProximityConfig { k: 5 },
        bundle.pre_base.class_names(),
    )
    .unwrap();
    let ts = fit_temperature(&bundle.base_fit).unwrap();
    let model = compose(CalibratorModel::Dac { table }, ts).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    std::fs::write(&path, serde_json::to_string_pretty(&model).unwrap()).unwrap();
    let reloaded: CalibratorModel =
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();

    assert_eq!(
        model.apply(&bundle.new_eval).unwrap(),
        reloaded.apply(&bundle.new_eval).unwrap()
    );
}

#[test]
fn rectification_improves_new_split_and_reports_are_consistent() {
    let bundle = generate_scenario(&small_cfg()).unwrap();
    let table = td_scores(
        &bundle.pre_base,
        &bundle.tuned_base,
        &bundle.pre_query,
        &bundle.tuned_query,
        &ProximityConfig { k: 5 },
        bundle.pre_base.class_names(),
    )
    .unwrap();

    let labels = bundle.new_eval.labels();
    let raw = softmax(&bundle.new_eval);
    let rectified = apply_dac(&bundle.new_eval, &table).unwrap();
    assert!(ece(&rectified, labels, 10).unwrap() < ece(&raw, labels, 10).unwrap());

    // A full report agrees with the direct scalar and its own table.
    let prox: Vec<f64> = bundle
        .new_eval
        .predicted()
        .iter()
        .map(|&c| bundle.ground_truth.new_proximity[c])
        .collect();
    let report = metrics_report(&rectified, labels, &prox, 10, 4).unwrap();
    assert_eq!(report.ece, ece(&rectified, labels, 10).unwrap());
    let table_bins = reliability_table(&rectified, labels, 10).unwrap();
    assert_eq!(report.bins, table_bins);
    let n = labels.len() as f64;
    let from_table: f64 = table_bins
        .iter()
        .map(|b| b.count as f64 / n * b.gap.abs())
        .sum();
    assert!((from_table - report.ece).abs() < 1e-15);
    assert!(report.ece <= report.mce + 1e-12);
    assert!(report.ece <= report.piece + 1e-12);
}
