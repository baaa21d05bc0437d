//! One function per subcommand; the binary only parses arguments.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use ovcal::calibrate::{
    compose, fit_histogram_binning, fit_isotonic, fit_multi_isotonic, fit_temperature,
    CalibratorModel,
};
use ovcal::dataset::{tensor_file, validate_artifacts, ArtifactManifest, ArtifactRole};
use ovcal::metrics::{classwise_report, ece, metrics_report, svd_projection};
use ovcal::synth::{generate_scenario, ScenarioConfig};
use ovcal::Error;

use crate::artifacts::{
    class_proximities, gamma_table, load_embeddings, load_manifest, load_validated,
    sample_proximities, write_scenario, Embeddings,
};
use crate::method::Method;
use crate::report::{
    summary_line, summary_table, write_classwise_csv, write_json, write_reliability_csv,
    SplitOutcome,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitSplit {
    BaseFit,
    NewEval,
}

impl FitSplit {
    pub fn role(&self) -> ArtifactRole {
        match self {
            FitSplit::BaseFit => ArtifactRole::BaseFit,
            FitSplit::NewEval => ArtifactRole::NewEval,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            FitSplit::BaseFit => "base_fit",
            FitSplit::NewEval => "new_eval",
        }
    }
}

pub struct SynthOpts {
    pub out: PathBuf,
    pub seed: u64,
    pub base_classes: usize,
    pub new_classes: usize,
    pub dim: usize,
    pub samples: usize,
    pub gap: f64,
    pub sharpness: f64,
    pub tau: f64,
}

pub fn run_synth(opts: &SynthOpts) -> Result<()> {
    let cfg = ScenarioConfig {
        num_base_classes: opts.base_classes,
        num_new_classes: opts.new_classes,
        dim: opts.dim,
        samples_per_class: opts.samples,
        gap_strength: opts.gap,
        sharpness_slope: opts.sharpness,
        tau: opts.tau,
        seed: opts.seed,
    };
    let bundle = generate_scenario(&cfg)?;
    let provenance = format!(
        "synth seed={} base_classes={} new_classes={} dim={} samples={} gap={} sharpness={} tau={}",
        opts.seed,
        opts.base_classes,
        opts.new_classes,
        opts.dim,
        opts.samples,
        opts.gap,
        opts.sharpness,
        opts.tau
    );
    write_scenario(&opts.out, &bundle, &provenance)?;
    println!("{}", opts.out.display());
    Ok(())
}

pub fn run_validate(manifest_path: &Path) -> Result<()> {
    let manifest = load_manifest(manifest_path)?;
    let violations = validate_artifacts(&manifest)?;
    if violations.is_empty() {
        println!(
            "manifest ok ({} base classes, {} new classes)",
            manifest.split_descriptor.base_classes.len(),
            manifest.split_descriptor.new_classes.len()
        );
        Ok(())
    } else {
        for v in &violations {
            println!("violation: {v}");
        }
        bail!("{} violation(s) found", violations.len());
    }
}

pub fn run_td(manifest_path: &Path, k: usize, out: &Path) -> Result<()> {
    let manifest = load_validated(manifest_path)?;
    let embeddings = load_embeddings(&manifest)?;
    let table = ovcal::proximity::td_scores(
        &embeddings.pre_base,
        &embeddings.tuned_base,
        &embeddings.pre_query,
        &embeddings.tuned_query,
        &ovcal::proximity::ProximityConfig { k },
        &manifest.split_descriptor.base_classes,
    )?;
    std::fs::create_dir_all(out)?;
    table.write_files(out)?;
    println!(
        "td k={} base_size={} classes={} -> {}",
        table.k_used(),
        table.base_size(),
        table.len(),
        out.join("td_scores.csv").display()
    );
    Ok(())
}

fn build_model(
    method: Method,
    fit_set: &ovcal::dataset::PredictionSet,
    embeddings: &Embeddings,
    manifest: &ArtifactManifest,
    k: usize,
    bins: usize,
) -> Result<CalibratorModel> {
    Ok(match method {
        Method::Conf => CalibratorModel::Identity,
        Method::Ts => fit_temperature(fit_set)?,
        Method::Hb => fit_histogram_binning(fit_set, bins)?,
        Method::Ir => fit_isotonic(fit_set)?,
        Method::Mir => fit_multi_isotonic(fit_set)?,
        Method::Dac => CalibratorModel::Dac {
            table: gamma_table(embeddings, &manifest.split_descriptor, k)?,
        },
        Method::DacTs => compose(
            CalibratorModel::Dac {
                table: gamma_table(embeddings, &manifest.split_descriptor, k)?,
            },
            fit_temperature(fit_set)?,
        )?,
    })
}

pub struct FitOpts {
    pub manifest: PathBuf,
    pub method: Method,
    pub k: usize,
    pub bins: usize,
    pub fit_split: FitSplit,
    pub out: PathBuf,
}

pub fn run_fit(opts: &FitOpts) -> Result<()> {
    let manifest = load_validated(&opts.manifest)?;
    let embeddings = load_embeddings(&manifest)?;
    let fit_set = manifest.load_prediction_set(opts.fit_split.role())?;
    let model = build_model(
        opts.method,
        &fit_set,
        &embeddings,
        &manifest,
        opts.k,
        opts.bins,
    )?;
    std::fs::create_dir_all(&opts.out)?;
    let path = opts.out.join("model.json");
    write_json(&path, &model)?;
    if let CalibratorModel::Dac { table } = &model {
        table.write_files(&opts.out)?;
    }
    println!("fit method={} -> {}", opts.method, path.display());
    Ok(())
}

pub struct ApplyOpts {
    pub manifest: PathBuf,
    pub model: PathBuf,
    pub split: ArtifactRole,
    pub out: PathBuf,
}

pub fn run_apply(opts: &ApplyOpts) -> Result<()> {
    let manifest = load_validated(&opts.manifest)?;
    let text = std::fs::read_to_string(&opts.model)
        .with_context(|| format!("reading model {}", opts.model.display()))?;
    let model: CalibratorModel = serde_json::from_str(&text)
        .with_context(|| format!("parsing model {}", opts.model.display()))?;
    let preds = manifest.load_prediction_set(opts.split)?;
    let probs = model.apply(&preds)?;
    std::fs::create_dir_all(&opts.out)?;
    let file = opts.out.join(format!("probs_{}.vcal", opts.split));
    tensor_file::write_matrix(&file, &probs)?;
    write_json(
        Path::new(&format!("{}.json", file.display())),
        &serde_json::json!({
            "class_names": preds.class_names(),
            "labels": preds.labels(),
            "model_kind": model.kind_name(),
        }),
    )?;
    println!("apply model={} -> {}", model.kind_name(), file.display());
    Ok(())
}

pub struct EvalOpts {
    pub manifest: PathBuf,
    pub methods: Vec<Method>,
    pub k: usize,
    pub bins: usize,
    pub prox_bins: usize,
    pub fit_split: FitSplit,
    pub out: PathBuf,
}

/// Directory-safe name for a method ("dac+ts" -> "dac_ts").
fn method_dir(method: Method) -> String {
    method.as_str().replace('+', "_")
}

pub fn run_eval(opts: &EvalOpts) -> Result<()> {
    let manifest = load_validated(&opts.manifest)?;
    std::fs::create_dir_all(&opts.out)?;
    let embeddings = load_embeddings(&manifest)?;
    let class_prox = class_proximities(&embeddings, opts.k)?;
    let fit_set = manifest.load_prediction_set(opts.fit_split.role())?;

    let mut methods: Vec<Method> = Vec::new();
    for m in &opts.methods {
        if !methods.contains(m) {
            methods.push(*m);
        }
    }

    let splits = [
        ("base_eval", ArtifactRole::BaseEval),
        ("new_eval", ArtifactRole::NewEval),
    ];
    let mut outcomes: BTreeMap<(String, String), SplitOutcome> = BTreeMap::new();

    for &method in &methods {
        let model = build_model(method, &fit_set, &embeddings, &manifest, opts.k, opts.bins)?;
        let mdir = opts.out.join(method_dir(method));
        std::fs::create_dir_all(&mdir)?;
        write_json(&mdir.join("model.json"), &model)?;
        let gamma_map: Option<HashMap<String, f64>> = match &model {
            CalibratorModel::Dac { table } => Some(gamma_map_of(table)),
            CalibratorModel::Composed { first, .. } => match first.as_ref() {
                CalibratorModel::Dac { table } => {
                    table.write_files(&mdir)?;
                    Some(gamma_map_of(table))
                }
                _ => None,
            },
            _ => None,
        };
        if let CalibratorModel::Dac { table } = &model {
            table.write_files(&mdir)?;
        }

        for (split_name, role) in splits {
            let preds = manifest.load_prediction_set(role)?;
            let outcome = match model.apply(&preds) {
                Ok(probs) => {
                    let prox = sample_proximities(&preds, &class_prox)?;
                    let report =
                        metrics_report(&probs, preds.labels(), &prox, opts.bins, opts.prox_bins)?;
                    write_reliability_csv(
                        &mdir.join(format!("reliability_{split_name}.csv")),
                        &report.bins,
                    )?;
                    // Class-wise analysis: gamma for the distance-aware
                    // methods, tuned-text proximity otherwise.
                    let (scores, score_name) = match &gamma_map {
                        Some(map) => (map.clone(), "gamma"),
                        None => (
                            class_prox
                                .iter()
                                .map(|(k, v)| (k.clone(), *v))
                                .collect::<HashMap<_, _>>(),
                            "proximity",
                        ),
                    };
                    let records =
                        classwise_report(&probs, preds.labels(), preds.class_names(), &scores)?;
                    write_classwise_csv(
                        &mdir.join(format!("classwise_{split_name}.csv")),
                        &records,
                        score_name,
                    )?;
                    SplitOutcome::Report(report)
                }
                Err(Error::ClassListMismatch { .. }) => SplitOutcome::NotApplicable {
                    not_applicable: format!(
                        "{} calibrator fitted on {} does not transfer to {split_name}",
                        method,
                        opts.fit_split.as_str()
                    ),
                },
                Err(e) => return Err(e.into()),
            };
            write_json(&mdir.join(format!("metrics_{split_name}.json")), &outcome)?;
            println!("{}", summary_line(method.as_str(), split_name, &outcome));
            outcomes.insert(
                (method.as_str().to_string(), split_name.to_string()),
                outcome,
            );
        }
    }

    let header = format!(
        "ovcal eval: manifest={} k={} bins={} prox_bins={} fit_split={}",
        opts.manifest.display(),
        opts.k,
        opts.bins,
        opts.prox_bins,
        opts.fit_split.as_str()
    );
    let table = summary_table(&header, &["base_eval", "new_eval"], &outcomes, &methods);
    std::fs::write(opts.out.join("summary.txt"), &table)?;
    Ok(())
}

fn gamma_map_of(table: &ovcal::proximity::TDScoreTable) -> HashMap<String, f64> {
    table
        .class_names()
        .iter()
        .cloned()
        .zip(table.gammas().iter().copied())
        .collect()
}

pub struct SweepKOpts {
    pub manifest: PathBuf,
    pub k_list: Vec<usize>,
    pub bins: usize,
    pub out: PathBuf,
}

pub fn run_sweep_k(opts: &SweepKOpts) -> Result<()> {
    let manifest = load_validated(&opts.manifest)?;
    let embeddings = load_embeddings(&manifest)?;
    let new_eval = manifest.load_prediction_set(ArtifactRole::NewEval)?;
    std::fs::create_dir_all(&opts.out)?;

    let mut ks: Vec<usize> = Vec::new();
    for &k in &opts.k_list {
        if ks.contains(&k) {
            eprintln!("warning: duplicate k={k} ignored");
        } else {
            ks.push(k);
        }
    }

    let path = opts.out.join("sweep_k.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["k", "ece_new"])?;
    for &k in &ks {
        let table = gamma_table(&embeddings, &manifest.split_descriptor, k)?;
        let probs = ovcal::calibrate::apply_dac(&new_eval, &table)?;
        let e = ece(&probs, new_eval.labels(), opts.bins)?;
        w.write_record([k.to_string(), e.to_string()])?;
        println!("sweep-k k={k} ece_new={e:.6}");
    }
    w.flush()?;
    println!("{}", path.display());
    Ok(())
}

pub struct ProjectOpts {
    pub manifest: PathBuf,
    pub out: PathBuf,
    pub include_images: bool,
}

pub fn run_project(opts: &ProjectOpts) -> Result<()> {
    let manifest = load_validated(&opts.manifest)?;
    let embeddings = load_embeddings(&manifest)?;
    let images = if opts.include_images && manifest.has(ArtifactRole::ImageFeatures) {
        Some(manifest.load_image_features()?)
    } else {
        None
    };
    let projection = svd_projection(
        &[
            &embeddings.pre_base,
            &embeddings.tuned_base,
            &embeddings.pre_query,
            &embeddings.tuned_query,
        ],
        images.as_ref(),
    )?;
    std::fs::create_dir_all(&opts.out)?;
    let csv_path = opts.out.join("projection.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(["source", "label", "x", "y"])?;
    for p in &projection.points {
        w.write_record([
            p.source.clone(),
            p.label.clone(),
            p.x.to_string(),
            p.y.to_string(),
        ])?;
    }
    w.flush()?;
    write_json(
        &opts.out.join("projection.json"),
        &serde_json::json!({
            "retained_variance": projection.retained_variance,
            "total_variance": projection.total_variance,
            "retained_fraction": projection.retained_fraction(),
            "points": projection.points.len(),
        }),
    )?;
    println!(
        "project points={} retained_fraction={:.4} -> {}",
        projection.points.len(),
        projection.retained_fraction(),
        csv_path.display()
    );
    Ok(())
}
