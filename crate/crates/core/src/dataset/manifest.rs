//! Artifact manifest: the JSON index tying an export directory together.
//!
//! Entry paths are stored relative to the manifest file so a directory can
//! be moved (or byte-compared) as a unit. `validate_artifacts` loads every
//! entry and cross-checks the semantic contracts; semantic problems come
//! back as violations, unreadable files as errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{csv_file, tensor_file, EmbeddingSet, PredictionSet, Role, DEFAULT_TAU};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const SCHEMA_VERSION: u32 = 1;

/// Keys of the manifest entry map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactRole {
    PretrainedBase,
    TunedBase,
    PretrainedQuery,
    TunedQuery,
    BaseFit,
    BaseEval,
    NewEval,
    ImageFeatures,
}

impl ArtifactRole {
    pub const EMBEDDING_ROLES: [ArtifactRole; 4] = [
        ArtifactRole::PretrainedBase,
        ArtifactRole::TunedBase,
        ArtifactRole::PretrainedQuery,
        ArtifactRole::TunedQuery,
    ];

    pub const PREDICTION_ROLES: [ArtifactRole; 3] = [
        ArtifactRole::BaseFit,
        ArtifactRole::BaseEval,
        ArtifactRole::NewEval,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ArtifactRole::PretrainedBase => "pretrained_base",
            ArtifactRole::TunedBase => "tuned_base",
            ArtifactRole::PretrainedQuery => "pretrained_query",
            ArtifactRole::TunedQuery => "tuned_query",
            ArtifactRole::BaseFit => "base_fit",
            ArtifactRole::BaseEval => "base_eval",
            ArtifactRole::NewEval => "new_eval",
            ArtifactRole::ImageFeatures => "image_features",
        }
    }

    fn embedding_role(&self) -> Option<Role> {
        match self {
            ArtifactRole::PretrainedBase => Some(Role::PretrainedBase),
            ArtifactRole::TunedBase => Some(Role::TunedBase),
            ArtifactRole::PretrainedQuery => Some(Role::PretrainedQuery),
            ArtifactRole::TunedQuery => Some(Role::TunedQuery),
            _ => None,
        }
    }
}

impl std::fmt::Display for ArtifactRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Base/new class-name lists of the split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitDescriptor {
    pub base_classes: Vec<String>,
    pub new_classes: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArtifactManifest {
    pub schema_version: u32,
    pub entries: BTreeMap<ArtifactRole, PathBuf>,
    pub split_descriptor: SplitDescriptor,
    #[serde(default)]
    pub provenance: String,
    /// Base directory the entry paths resolve against; set on load.
    #[serde(skip)]
    base_dir: PathBuf,
}

/// One semantic problem found by `validate_artifacts`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: String,
    pub detail: String,
}

impl Violation {
    fn new(kind: &str, detail: impl Into<String>) -> Self {
        Violation {
            kind: kind.to_string(),
            detail: detail.into(),
        }
    }
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.kind, self.detail)
    }
}

impl ArtifactManifest {
    pub fn new(
        entries: BTreeMap<ArtifactRole, PathBuf>,
        split_descriptor: SplitDescriptor,
        provenance: String,
        base_dir: PathBuf,
    ) -> Self {
        ArtifactManifest {
            schema_version: SCHEMA_VERSION,
            entries,
            split_descriptor,
            provenance,
            base_dir,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: ArtifactManifest =
            serde_json::from_str(&text).map_err(|e| Error::Json {
                path: path.to_owned(),
                source: e,
            })?;
        manifest.base_dir = path.parent().unwrap_or(Path::new(".")).to_owned();
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, role: ArtifactRole) -> Result<PathBuf> {
        let rel = self
            .entries
            .get(&role)
            .ok_or_else(|| Error::MissingManifestEntry {
                role: role.to_string(),
            })?;
        Ok(self.base_dir.join(rel))
    }

    pub fn has(&self, role: ArtifactRole) -> bool {
        self.entries.contains_key(&role)
    }

    /// Loads one embedding entry, dispatching on file extension
    /// (`.csv` → fallback, anything else → binary tensor).
    pub fn load_embedding_set(&self, role: ArtifactRole) -> Result<EmbeddingSet> {
        let embedding_role = role
            .embedding_role()
            .unwrap_or_else(|| panic!("{role} is not an embedding role"));
        let path = self.resolve(role)?;
        load_embedding_set(&path, embedding_role)
    }

    pub fn load_prediction_set(&self, role: ArtifactRole) -> Result<PredictionSet> {
        let path = self.resolve(role)?;
        if is_csv(&path) {
            csv_file::read_prediction_set(&path, DEFAULT_TAU)
        } else {
            tensor_file::read_prediction_set(&path)
        }
    }

    pub fn load_image_features(&self) -> Result<Matrix> {
        let path = self.resolve(ArtifactRole::ImageFeatures)?;
        tensor_file::read_matrix(&path)
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "csv")
}

/// Loads an embedding matrix from either supported format. The returned set
/// always carries `normalized = false`.
pub fn load_embedding_set(path: &Path, role: Role) -> Result<EmbeddingSet> {
    if is_csv(path) {
        csv_file::read_embedding_set(path, role)
    } else {
        tensor_file::read_embedding_set(path, role)
    }
}

fn same_name_set(a: &[String], b: &[String]) -> bool {
    use std::collections::HashSet;
    let sa: HashSet<&str> = a.iter().map(String::as_str).collect();
    let sb: HashSet<&str> = b.iter().map(String::as_str).collect();
    sa == sb
}

/// Cross-checks every artifact the manifest references.
///
/// Returns the list of semantic violations (empty means valid). Files that
/// cannot be read or parsed are hard errors, not violations.
pub fn validate_artifacts(manifest: &ArtifactManifest) -> Result<Vec<Violation>> {
    let mut violations = Vec::new();
    let split = &manifest.split_descriptor;

    {
        use std::collections::HashSet;
        let base: HashSet<&str> = split.base_classes.iter().map(String::as_str).collect();
        let overlap: Vec<&str> = split
            .new_classes
            .iter()
            .map(String::as_str)
            .filter(|c| base.contains(c))
            .collect();
        if !overlap.is_empty() {
            violations.push(Violation::new(
                "split overlap",
                format!("base and new class lists share {:?}", overlap),
            ));
        }
    }

    let mut sets = BTreeMap::new();
    for role in ArtifactRole::EMBEDDING_ROLES {
        if manifest.has(role) {
            sets.insert(role, manifest.load_embedding_set(role)?);
        } else {
            violations.push(Violation::new(
                "missing entry",
                format!("manifest lists no {role} embeddings"),
            ));
        }
    }

    let mut dims: Vec<(ArtifactRole, usize)> = sets.iter().map(|(r, s)| (*r, s.dim())).collect();
    dims.dedup_by_key(|(_, d)| *d);
    if dims.len() > 1 {
        let detail = dims
            .iter()
            .map(|(r, d)| format!("{r}={d}"))
            .collect::<Vec<_>>()
            .join(", ");
        violations.push(Violation::new("embedding dimension mismatch", detail));
    }

    if let (Some(pre), Some(tuned)) = (
        sets.get(&ArtifactRole::PretrainedBase),
        sets.get(&ArtifactRole::TunedBase),
    ) {
        if !same_name_set(pre.class_names(), tuned.class_names()) {
            violations.push(Violation::new(
                "base class-set mismatch",
                "pretrained_base and tuned_base list different classes",
            ));
        }
    }
    if let Some(pre) = sets.get(&ArtifactRole::PretrainedBase) {
        if !same_name_set(pre.class_names(), &split.base_classes) {
            violations.push(Violation::new(
                "base class-set mismatch",
                "pretrained_base classes differ from the split's base list",
            ));
        }
    }

    for role in [ArtifactRole::PretrainedQuery, ArtifactRole::TunedQuery] {
        if let Some(set) = sets.get(&role) {
            if !same_name_set(set.class_names(), &split.new_classes) {
                violations.push(Violation::new(
                    "query class-set mismatch",
                    format!("{role} classes differ from the split's new-class list"),
                ));
            }
        }
    }

    for role in ArtifactRole::PREDICTION_ROLES {
        if !manifest.has(role) {
            continue;
        }
        let preds = manifest.load_prediction_set(role)?;
        let expected = match role {
            ArtifactRole::NewEval => &split.new_classes,
            _ => &split.base_classes,
        };
        if !same_name_set(preds.class_names(), expected) {
            violations.push(Violation::new(
                "prediction class-set mismatch",
                format!("{role} columns differ from the relevant class list"),
            ));
        }
    }

    Ok(violations)
}
