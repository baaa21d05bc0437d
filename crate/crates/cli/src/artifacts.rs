//! Manifest-level loading and the normalize-then-score plumbing shared by
//! the commands.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use ovcal::dataset::tensor_file;
use ovcal::dataset::{
    normalize_rows, validate_artifacts, ArtifactManifest, ArtifactRole, EmbeddingSet,
    PredictionSet, SplitDescriptor,
};
use ovcal::matrix::argmax;
use ovcal::proximity::{proximity, td_scores, ProximityConfig, TDScoreTable};
use ovcal::synth::ScenarioBundle;

/// The four text-embedding sets, normalized and ready for scoring.
pub struct Embeddings {
    pub pre_base: EmbeddingSet,
    pub tuned_base: EmbeddingSet,
    pub pre_query: EmbeddingSet,
    pub tuned_query: EmbeddingSet,
}

pub fn load_manifest(path: &Path) -> Result<ArtifactManifest> {
    ArtifactManifest::load(path).with_context(|| format!("loading manifest {}", path.display()))
}

/// Loads the manifest and aborts with the violation list unless it is
/// clean.
pub fn load_validated(path: &Path) -> Result<ArtifactManifest> {
    let manifest = load_manifest(path)?;
    let violations = validate_artifacts(&manifest)?;
    if !violations.is_empty() {
        let list = violations
            .iter()
            .map(|v| format!("  - {v}"))
            .collect::<Vec<_>>()
            .join("\n");
        bail!("manifest failed validation:\n{list}");
    }
    Ok(manifest)
}

pub fn load_embeddings(manifest: &ArtifactManifest) -> Result<Embeddings> {
    let load = |role: ArtifactRole| -> Result<EmbeddingSet> {
        let set = manifest.load_embedding_set(role)?;
        Ok(normalize_rows(&set)?)
    };
    Ok(Embeddings {
        pre_base: load(ArtifactRole::PretrainedBase)?,
        tuned_base: load(ArtifactRole::TunedBase)?,
        pre_query: load(ArtifactRole::PretrainedQuery)?,
        tuned_query: load(ArtifactRole::TunedQuery)?,
    })
}

/// TD table over the new classes plus gamma = 1 entries for every base
/// class, so one table covers both evaluation splits.
pub fn gamma_table(
    embeddings: &Embeddings,
    split: &SplitDescriptor,
    k: usize,
) -> Result<TDScoreTable> {
    let table = td_scores(
        &embeddings.pre_base,
        &embeddings.tuned_base,
        &embeddings.pre_query,
        &embeddings.tuned_query,
        &ProximityConfig { k },
        &split.base_classes,
    )?;
    Ok(table.extend_with_base(&split.base_classes)?)
}

/// Proximity of each class's tuned embedding to the tuned base set, keyed
/// by class name, for both splits.
pub fn class_proximities(embeddings: &Embeddings, k: usize) -> Result<BTreeMap<String, f64>> {
    let cfg = ProximityConfig { k };
    let mut out = BTreeMap::new();
    for (i, name) in embeddings.tuned_base.class_names().iter().enumerate() {
        out.insert(
            name.clone(),
            proximity(embeddings.tuned_base.row(i), &embeddings.tuned_base, &cfg)?,
        );
    }
    for (i, name) in embeddings.tuned_query.class_names().iter().enumerate() {
        out.insert(
            name.clone(),
            proximity(embeddings.tuned_query.row(i), &embeddings.tuned_base, &cfg)?,
        );
    }
    Ok(out)
}

/// Per-sample proximity: each sample inherits the proximity of its
/// predicted class (textual proxy; the artifacts carry no image features).
pub fn sample_proximities(
    preds: &PredictionSet,
    class_proximity: &BTreeMap<String, f64>,
) -> Result<Vec<f64>> {
    let by_col: Vec<f64> = preds
        .class_names()
        .iter()
        .map(|name| {
            class_proximity
                .get(name)
                .copied()
                .with_context(|| format!("no proximity for class '{name}'"))
        })
        .collect::<Result<_>>()?;
    Ok(preds
        .logits()
        .iter_rows()
        .map(|row| by_col[argmax(row)])
        .collect())
}

/// Writes a generated bundle as a full artifact directory and returns the
/// manifest path.
pub fn write_scenario(dir: &Path, bundle: &ScenarioBundle, provenance: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;
    let mut entries = BTreeMap::new();

    for (role, set) in [
        (ArtifactRole::PretrainedBase, &bundle.pre_base),
        (ArtifactRole::TunedBase, &bundle.tuned_base),
        (ArtifactRole::PretrainedQuery, &bundle.pre_query),
        (ArtifactRole::TunedQuery, &bundle.tuned_query),
    ] {
        let file = format!("{role}.vcal");
        tensor_file::write_embedding_set(&dir.join(&file), set)?;
        entries.insert(role, PathBuf::from(file));
    }
    for (role, preds) in [
        (ArtifactRole::BaseFit, &bundle.base_fit),
        (ArtifactRole::BaseEval, &bundle.base_eval),
        (ArtifactRole::NewEval, &bundle.new_eval),
    ] {
        let file = format!("{role}.vcal");
        tensor_file::write_prediction_set(&dir.join(&file), preds)?;
        entries.insert(role, PathBuf::from(file));
    }
    tensor_file::write_matrix(&dir.join("image_features.vcal"), &bundle.image_features)?;
    entries.insert(
        ArtifactRole::ImageFeatures,
        PathBuf::from("image_features.vcal"),
    );

    let manifest = ArtifactManifest::new(
        entries,
        SplitDescriptor {
            base_classes: bundle.pre_base.class_names().to_vec(),
            new_classes: bundle.pre_query.class_names().to_vec(),
        },
        provenance.to_string(),
        dir.to_owned(),
    );
    let manifest_path = dir.join("manifest.json");
    manifest.save(&manifest_path)?;
    Ok(manifest_path)
}
