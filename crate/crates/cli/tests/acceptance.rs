//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with the measured numbers (visible with `--nocapture`).
//!
//! Run with `cargo test --test acceptance` (add `-- --ignored` for the
//! opt-in real-artifact reproduction, which needs exported artifacts).

use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

/// Criteria with wall-clock bounds take this lock so they never contend
/// with each other for cores.
static TIMING_GATE: Mutex<()> = Mutex::new(());

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ovcal::calibrate::{
    apply_dac, fit_isotonic, fit_temperature, nll_at_temperature, CalibratorModel,
};
use ovcal::dataset::{softmax, softmax_row, EmbeddingSet, PredictionSet, Role};
use ovcal::matrix::{argmax, Matrix};
use ovcal::metrics::{ece, ece_star, mce, metrics_report, spearman};
use ovcal::proximity::{knn_mean_distance, td_scores, ProximityConfig, TDScoreTable};
use ovcal::synth::{generate_scenario, ScenarioConfig};

fn two_class_probs(confs: &[f64], correct: &[bool]) -> (Matrix, Vec<usize>) {
    let rows: Vec<Vec<f64>> = confs.iter().map(|&c| vec![c, 1.0 - c]).collect();
    let labels = correct.iter().map(|&ok| if ok { 0 } else { 1 }).collect();
    (Matrix::from_rows(&rows), labels)
}

#[test]
fn criterion_01_hand_fixture_scalars() {
    let _gate = TIMING_GATE.lock().unwrap();
    let (probs, labels) = two_class_probs(&[0.9, 0.8, 0.6, 0.55], &[true, false, true, true]);
    // Untimed warm-up so the timed region measures the metric, not the
    // one-time worker-pool bootstrap.
    ece(&probs, &labels, 4).unwrap();
    let start = Instant::now();
    let e = ece(&probs, &labels, 4).unwrap();
    let m = mce(&probs, &labels, 4).unwrap();
    let s = ece_star(&probs, &labels, 4).unwrap();
    let elapsed = start.elapsed();
    assert!((e - 0.3875).abs() < 1e-12, "ece = {e}");
    assert!((m - 0.425).abs() < 1e-12, "mce = {m}");
    assert!((s - (-0.0375)).abs() < 1e-12, "ece* = {s}");
    assert!(
        elapsed < Duration::from_millis(1),
        "hand fixture took {elapsed:?}"
    );
    println!("acceptance 1 PASS: ece={e} mce={m} ece*={s} in {elapsed:?}");
}

#[test]
fn criterion_02_knn_matches_exhaustive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(20240207);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=200);
        let dim = rng.gen_range(1..=32);
        let k = rng.gen_range(1..=n.min(10));
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let query: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let names = (0..n).map(|i| format!("r{i}")).collect();
        let refs =
            EmbeddingSet::new(names, Matrix::from_rows(&rows), Role::PretrainedBase).unwrap();

        let got = knn_mean_distance(&query, &refs, k).unwrap();

        // Oracle: sort every distance, average the first k.
        let mut all: Vec<f64> = rows
            .iter()
            .map(|r| {
                query
                    .iter()
                    .zip(r)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        all.sort_by(f64::total_cmp);
        let expected = all[..k].iter().sum::<f64>() / k as f64;
        worst = worst.max((got - expected).abs());
        assert!(
            (got - expected).abs() < 1e-9,
            "n={n} dim={dim} k={k}: {got} vs {expected}"
        );
    }
    println!("acceptance 2 PASS: 1000 knn trials, worst abs diff {worst:.2e}");
}

/// Least-squares error of the best monotone fit, by enumerating every
/// contiguous level-set partition with non-decreasing block means.
fn brute_force_monotone_sse(points: &[(f64, f64)]) -> f64 {
    let n = points.len();
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << (n - 1)) {
        let mut prev_mean = f64::NEG_INFINITY;
        let mut total = 0.0;
        let mut start = 0;
        let mut feasible = true;
        for i in 0..n {
            let block_ends = i == n - 1 || (mask >> i) & 1 == 1;
            if !block_ends {
                continue;
            }
            let block = &points[start..=i];
            let mean = block.iter().map(|p| p.1).sum::<f64>() / block.len() as f64;
            if mean < prev_mean {
                feasible = false;
                break;
            }
            prev_mean = mean;
            total += block
                .iter()
                .map(|p| (p.1 - mean) * (p.1 - mean))
                .sum::<f64>();
            start = i + 1;
        }
        if feasible {
            best = best.min(total);
        }
    }
    best
}

#[test]
fn criterion_03_isotonic_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.gen_range(1..=6);
        let mut confs: Vec<f64> = Vec::with_capacity(n);
        while confs.len() < n {
            let c: f64 = rng.gen_range(0.51..0.99);
            if !confs.contains(&c) {
                confs.push(c);
            }
        }
        let correct: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();

        // Two-class logits whose softmax top-label confidence is exactly
        // the drawn value.
        let rows: Vec<Vec<f64>> = confs
            .iter()
            .map(|&c| vec![(c / (1.0 - c)).ln(), 0.0])
            .collect();
        let labels: Vec<usize> = correct.iter().map(|&ok| if ok { 0 } else { 1 }).collect();
        let names = vec!["a".to_string(), "b".to_string()];
        let fit_set = PredictionSet::new(names, Matrix::from_rows(&rows), labels, 100.0).unwrap();
        if fit_set.num_samples() < 2 {
            continue;
        }
        let model = fit_isotonic(&fit_set).unwrap();
        let map = match &model {
            CalibratorModel::Isotonic { map, .. } => map,
            other => panic!("unexpected model {other:?}"),
        };
        assert!(map.is_non_decreasing());

        let mut points: Vec<(f64, f64)> = confs
            .iter()
            .zip(&correct)
            .map(|(&c, &ok)| {
                // Recover the exact confidence the fit saw.
                let p = softmax_row(&[(c / (1.0 - c)).ln(), 0.0]);
                (p[0], ok as u8 as f64)
            })
            .collect();
        points.sort_by(|a, b| a.0.total_cmp(&b.0));

        let fitted_sse: f64 = points
            .iter()
            .map(|&(x, y)| {
                let v = map.eval(x);
                (v - y) * (v - y)
            })
            .sum();
        let oracle_sse = brute_force_monotone_sse(&points);
        worst = worst.max(fitted_sse - oracle_sse);
        assert!(
            (fitted_sse - oracle_sse).abs() < 1e-10,
            "points {points:?}: fitted {fitted_sse} vs oracle {oracle_sse}"
        );
    }
    println!("acceptance 3 PASS: 200 isotonic instances, worst sse excess {worst:.2e}");
}

/// Logits with labels drawn from their own softmax: calibrated by
/// construction.
fn calibrated_logits(
    rng: &mut ChaCha8Rng,
    samples: usize,
    classes: usize,
    spread: f64,
) -> PredictionSet {
    let mut rows = Vec::with_capacity(samples);
    let mut labels = Vec::with_capacity(samples);
    for _ in 0..samples {
        let row: Vec<f64> = (0..classes)
            .map(|_| rng.gen_range(-spread..spread))
            .collect();
        let p = softmax_row(&row);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut label = classes - 1;
        for (j, &pj) in p.iter().enumerate() {
            acc += pj;
            if u <= acc {
                label = j;
                break;
            }
        }
        rows.push(row);
        labels.push(label);
    }
    let names = (0..classes).map(|c| format!("c{c}")).collect();
    PredictionSet::new(names, Matrix::from_rows(&rows), labels, 100.0).unwrap()
}

#[test]
fn criterion_04_temperature_recovery_and_grid_optimality() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let base = calibrated_logits(&mut rng, 10_000, 20, 4.0);
    for &t_true in &[0.5, 2.0, 3.0, 5.0] {
        let mut logits = base.logits().clone();
        for v in logits.as_mut_slice() {
            *v *= t_true;
        }
        let scaled = base.with_logits(logits).unwrap();
        let t_fit = match fit_temperature(&scaled).unwrap() {
            CalibratorModel::Temperature { temperature } => temperature,
            other => panic!("unexpected model {other:?}"),
        };
        let rel = (t_fit - t_true).abs() / t_true;
        assert!(rel < 0.05, "t_true={t_true} fitted={t_fit} rel err {rel}");

        let fitted_nll = nll_at_temperature(&scaled, t_fit);
        for i in 0..100 {
            let t = 0.05 + i as f64 * (20.0 - 0.05) / 99.0;
            let grid_nll = nll_at_temperature(&scaled, t);
            assert!(
                fitted_nll <= grid_nll + 1e-8,
                "t_true={t_true}: grid point t={t} beats fit ({grid_nll} < {fitted_nll})"
            );
        }
        println!("acceptance 4 PASS: t_true={t_true} fitted={t_fit:.4} rel_err={rel:.4}");
    }
}

#[test]
fn criterion_05_dac_degeneracy_and_argmax_safety() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let classes = 25;
    let samples = 10_000;
    let mut logits = Matrix::zeros(samples, classes);
    for v in logits.as_mut_slice() {
        *v = rng.gen_range(-8.0..8.0);
    }
    let labels: Vec<usize> = (0..samples).map(|i| i % classes).collect();
    let names: Vec<String> = (0..classes).map(|c| format!("c{c}")).collect();
    let preds = PredictionSet::new(names.clone(), logits, labels, 100.0).unwrap();

    let ones = TDScoreTable::all_ones(names.clone(), 5, 10).unwrap();
    let via_dac = apply_dac(&preds, &ones).unwrap();
    assert_eq!(
        via_dac,
        softmax(&preds),
        "all-ones table must be bit-identical"
    );

    let gammas: Vec<f64> = (0..classes).map(|_| rng.gen_range(0.01..4.0)).collect();
    let table = TDScoreTable::new(names, gammas, 5, 10).unwrap();
    let out = apply_dac(&preds, &table).unwrap();
    let raw = preds.predicted();
    for (i, row) in out.iter_rows().enumerate() {
        assert_eq!(argmax(row), raw[i], "argmax changed at sample {i}");
    }
    println!("acceptance 5 PASS: bit-identical degeneracy and {samples} argmax checks");
}

fn acceptance_scenario() -> ScenarioConfig {
    ScenarioConfig {
        num_base_classes: 40,
        num_new_classes: 40,
        dim: 64,
        samples_per_class: 50,
        gap_strength: 0.8,
        sharpness_slope: 2.0,
        tau: 100.0,
        seed: 7,
    }
}

fn accuracy(probs: &Matrix, labels: &[usize]) -> f64 {
    probs
        .iter_rows()
        .zip(labels)
        .filter(|(row, &l)| argmax(row) == l)
        .count() as f64
        / labels.len() as f64
}

#[test]
fn criterion_06_end_to_end_mechanism() {
    let _gate = TIMING_GATE.lock().unwrap();
    let start = Instant::now();
    let bundle = generate_scenario(&acceptance_scenario()).unwrap();
    let table = td_scores(
        &bundle.pre_base,
        &bundle.tuned_base,
        &bundle.pre_query,
        &bundle.tuned_query,
        &ProximityConfig { k: 5 },
        bundle.pre_base.class_names(),
    )
    .unwrap();

    let raw_new = softmax(&bundle.new_eval);
    let raw_base = softmax(&bundle.base_eval);
    let dac_new = apply_dac(&bundle.new_eval, &table).unwrap();
    let base_table = TDScoreTable::all_ones(bundle.pre_base.class_names().to_vec(), 5, 40).unwrap();
    let dac_base = apply_dac(&bundle.base_eval, &base_table).unwrap();

    let labels_new = bundle.new_eval.labels();
    let labels_base = bundle.base_eval.labels();

    // (a) at least 30% lower calibration error on the new split.
    let raw_ece = ece(&raw_new, labels_new, 10).unwrap();
    let dac_ece = ece(&dac_new, labels_new, 10).unwrap();
    assert!(
        dac_ece <= 0.7 * raw_ece,
        "new-split ece {dac_ece} not 30% below raw {raw_ece}"
    );

    // (b) base split untouched, exactly.
    let raw_base_ece = ece(&raw_base, labels_base, 10).unwrap();
    let dac_base_ece = ece(&dac_base, labels_base, 10).unwrap();
    assert_eq!(raw_base_ece, dac_base_ece, "base ece must be identical");

    // (c) accuracy identical on both splits.
    assert_eq!(
        accuracy(&raw_new, labels_new),
        accuracy(&dac_new, labels_new)
    );
    assert_eq!(
        accuracy(&raw_base, labels_base),
        accuracy(&dac_base, labels_base)
    );

    // (d) low deviation score goes with overconfidence on the raw split.
    let names = bundle.new_eval.class_names();
    let mut count = vec![0usize; names.len()];
    let mut conf_sum = vec![0.0f64; names.len()];
    let mut correct = vec![0usize; names.len()];
    for (i, row) in raw_new.iter_rows().enumerate() {
        let top = argmax(row);
        count[top] += 1;
        conf_sum[top] += row[top];
        correct[top] += (top == labels_new[i]) as usize;
    }
    let mut gammas = Vec::new();
    let mut gaps = Vec::new();
    for (c, name) in names.iter().enumerate() {
        if count[c] == 0 {
            continue;
        }
        let n = count[c] as f64;
        gammas.push(table.gamma_for(name).unwrap());
        gaps.push(conf_sum[c] / n - correct[c] as f64 / n);
    }
    let rho = spearman(&gammas, &gaps);
    assert!(rho <= -0.5, "spearman(gamma, gap) = {rho}");

    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    println!(
        "acceptance 6 PASS: ece {raw_ece:.4} -> {dac_ece:.4} ({:.0}% cut), base equal, \
         accuracy preserved, spearman {rho:.3}, {elapsed:?}",
        100.0 * (1.0 - dac_ece / raw_ece)
    );
}

#[test]
fn criterion_07_k_robustness() {
    let bundle = generate_scenario(&acceptance_scenario()).unwrap();
    let raw_new = softmax(&bundle.new_eval);
    let labels = bundle.new_eval.labels();
    let raw_ece = ece(&raw_new, labels, 10).unwrap();

    let mut eces = Vec::new();
    for k in 1..=10usize {
        let table = td_scores(
            &bundle.pre_base,
            &bundle.tuned_base,
            &bundle.pre_query,
            &bundle.tuned_query,
            &ProximityConfig { k },
            bundle.pre_base.class_names(),
        )
        .unwrap();
        let probs = apply_dac(&bundle.new_eval, &table).unwrap();
        let e = ece(&probs, labels, 10).unwrap();
        assert!(e < raw_ece, "k={k}: dac ece {e} not below raw {raw_ece}");
        eces.push(e);
    }
    let tail = &eces[2..10];
    let max = tail.iter().cloned().fold(f64::MIN, f64::max);
    let min = tail.iter().cloned().fold(f64::MAX, f64::min);
    let variation = (max - min) / min;
    assert!(variation < 0.20, "k=3..10 relative variation {variation}");
    println!(
        "acceptance 7 PASS: all k below raw {raw_ece:.4}, k=3..10 variation {:.2}%",
        100.0 * variation
    );
}

#[test]
fn criterion_08_binning_family_reports_not_applicable() {
    let tmp = tempfile::tempdir().unwrap();
    let art = tmp.path().join("art");
    let status = std::process::Command::new(env!("CARGO_BIN_EXE_ovcal"))
        .args([
            "synth",
            "--out",
            art.to_str().unwrap(),
            "--seed",
            "7",
            "--base-classes",
            "12",
            "--new-classes",
            "10",
            "--dim",
            "16",
            "--samples",
            "10",
        ])
        .status()
        .unwrap();
    assert!(status.success());

    let eval_out = tmp.path().join("eval");
    let output = std::process::Command::new(env!("CARGO_BIN_EXE_ovcal"))
        .args([
            "eval",
            "--manifest",
            art.join("manifest.json").to_str().unwrap(),
            "--method",
            "hb",
            "--method",
            "ir",
            "--method",
            "mir",
            "--out",
            eval_out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "eval must exit 0");
    let stdout = String::from_utf8(output.stdout).unwrap();
    for method in ["hb", "ir", "mir"] {
        assert!(
            stdout
                .lines()
                .any(|l| l.contains(&format!("method={method} split=new_eval not applicable"))),
            "missing not-applicable line for {method}:\n{stdout}"
        );
    }
    println!("acceptance 8 PASS: hb/ir/mir marked not applicable on the new split, exit 0");
}

#[test]
fn criterion_09_dac_apply_and_metrics_throughput() {
    let _gate = TIMING_GATE.lock().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let samples = 25_000;
    let classes = 500;
    let mut logits = Matrix::zeros(samples, classes);
    for v in logits.as_mut_slice() {
        *v = rng.gen_range(-6.0..6.0);
    }
    let labels: Vec<usize> = (0..samples).map(|i| i % classes).collect();
    let names: Vec<String> = (0..classes).map(|c| format!("class_{c:04}")).collect();
    let preds = PredictionSet::new(names.clone(), logits, labels, 100.0).unwrap();
    let gammas: Vec<f64> = (0..classes).map(|_| rng.gen_range(0.3..1.2)).collect();
    let table = TDScoreTable::new(names.clone(), gammas, 5, 250).unwrap();
    let model = CalibratorModel::Dac { table };
    let class_prox: HashMap<String, f64> = names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.clone(), 0.2 + 0.6 * (i as f64 / classes as f64)))
        .collect();
    let prox_by_col: Vec<f64> = names.iter().map(|n| class_prox[n]).collect();

    // Timed region: exactly what the eval command does per split after
    // fitting — apply the model, derive per-sample proximities, score.
    let start = Instant::now();
    let probs = model.apply(&preds).unwrap();
    let prox: Vec<f64> = preds
        .logits()
        .iter_rows()
        .map(|row| prox_by_col[argmax(row)])
        .collect();
    let report = metrics_report(&probs, preds.labels(), &prox, 10, 5).unwrap();
    let elapsed = start.elapsed();

    assert!(report.ece.is_finite());
    assert_eq!(report.sample_count, samples);
    assert!(
        elapsed < Duration::from_secs(2),
        "apply+metrics took {elapsed:?}"
    );
    println!(
        "acceptance 9 PASS: {samples}x{classes} apply+metrics in {elapsed:?} (ece {:.4})",
        report.ece
    );
}

/// Opt-in reproduction against real exported artifacts (for example a
/// prompt-tuned model on ImageNet). Point `OVCAL_REAL_MANIFEST` at a manifest in the toolkit
/// format and run `cargo test --test acceptance -- --ignored --nocapture`.
/// Expects the published ImageNet numbers: the uncalibrated new-split ECE
/// near 10.69% dropping to about 5.67% under the distance-aware method,
/// both within one ECE point.
#[test]
#[ignore = "needs real exported artifacts; see README"]
fn criterion_10_real_artifact_reproduction() {
    let manifest_path = std::env::var("OVCAL_REAL_MANIFEST")
        .expect("set OVCAL_REAL_MANIFEST to a manifest.json of exported artifacts");
    let manifest = ovcal::dataset::ArtifactManifest::load(Path::new(&manifest_path)).unwrap();
    let embeddings = ovcal_cli::artifacts::load_embeddings(&manifest).unwrap();
    let new_eval = manifest
        .load_prediction_set(ovcal::dataset::ArtifactRole::NewEval)
        .unwrap();

    let raw = softmax(&new_eval);
    let raw_ece = 100.0 * ece(&raw, new_eval.labels(), 10).unwrap();

    let table =
        ovcal_cli::artifacts::gamma_table(&embeddings, &manifest.split_descriptor, 5).unwrap();
    let rectified = apply_dac(&new_eval, &table).unwrap();
    let dac_ece = 100.0 * ece(&rectified, new_eval.labels(), 10).unwrap();

    // Bin-count sensitivity, reported alongside the 10-bin comparison.
    let raw_15 = 100.0 * ece(&raw, new_eval.labels(), 15).unwrap();
    let dac_15 = 100.0 * ece(&rectified, new_eval.labels(), 15).unwrap();

    assert!(
        (raw_ece - 10.69).abs() <= 1.0,
        "uncalibrated new-split ECE {raw_ece:.2}% not within 1 point of 10.69%"
    );
    assert!(
        (dac_ece - 5.67).abs() <= 1.0,
        "rectified new-split ECE {dac_ece:.2}% not within 1 point of 5.67%"
    );
    println!(
        "acceptance 10 PASS: ECE {raw_ece:.2}% -> {dac_ece:.2}% (15 bins: {raw_15:.2}% -> {dac_15:.2}%)"
    );
}
