//! K-nearest-neighbor proximity and per-class textual-deviation scores.
//!
//! Proximity of a query embedding to a reference set is `exp(-d̄)` where
//! `d̄` is the mean Euclidean distance to the K nearest reference rows.
//! The textual-deviation multiplier of a query class is the ratio of its
//! tuned-embedding proximity (against the tuned base set) to its
//! pretrained-embedding proximity (against the pretrained base set); base
//! classes are pinned to exactly 1 so the transform degrades to plain
//! temperature scaling on them.
//!
//! Reference sets are at most a few thousand rows, so KNN is exhaustive:
//! no index, one distance pass per query.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::EmbeddingSet;
use crate::error::{Error, Result};

pub const DEFAULT_K: usize = 5;

/// Neighbor count plus the (fixed) metric and decay choices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProximityConfig {
    /// Number of nearest reference rows averaged; must satisfy
    /// `1 <= k <= reference set size`.
    pub k: usize,
}

impl Default for ProximityConfig {
    fn default() -> Self {
        ProximityConfig { k: DEFAULT_K }
    }
}

/// Per-class positive multipliers, 1 exactly for base classes.
#[derive(Debug, Clone, PartialEq)]
pub struct TDScoreTable {
    class_names: Vec<String>,
    gamma: Vec<f64>,
    k_used: usize,
    base_size: usize,
}

/// JSON form of a TD table: the two-column CSV inline plus its provenance.
#[derive(Serialize, Deserialize)]
struct TdTableRepr {
    csv: String,
    k_used: usize,
    base_size: usize,
}

impl Serialize for TDScoreTable {
    fn serialize<S: serde::Serializer>(
        &self,
        serializer: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        TdTableRepr {
            csv: self.to_csv_string(),
            k_used: self.k_used,
            base_size: self.base_size,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TDScoreTable {
    fn deserialize<D: serde::Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        let repr = TdTableRepr::deserialize(deserializer)?;
        TDScoreTable::from_csv_string(&repr.csv, repr.k_used, repr.base_size)
            .map_err(serde::de::Error::custom)
    }
}

impl TDScoreTable {
    pub fn new(
        class_names: Vec<String>,
        gamma: Vec<f64>,
        k_used: usize,
        base_size: usize,
    ) -> Result<Self> {
        if class_names.len() != gamma.len() {
            return Err(Error::LengthMismatch {
                left: class_names.len(),
                right: gamma.len(),
            });
        }
        if let Some(name) = crate::dataset::first_duplicate(&class_names) {
            return Err(Error::DuplicateClassName { name });
        }
        Ok(TDScoreTable {
            class_names,
            gamma,
            k_used,
            base_size,
        })
    }

    /// Table assigning gamma = 1 to every listed class.
    pub fn all_ones(class_names: Vec<String>, k_used: usize, base_size: usize) -> Result<Self> {
        let gamma = vec![1.0; class_names.len()];
        TDScoreTable::new(class_names, gamma, k_used, base_size)
    }

    /// Appends base classes with gamma pinned to 1; names already present
    /// are left untouched.
    pub fn extend_with_base(&self, base_class_names: &[String]) -> Result<Self> {
        let mut names = self.class_names.clone();
        let mut gamma = self.gamma.clone();
        let seen: HashSet<&str> = names.iter().map(String::as_str).collect();
        let mut extra: Vec<&String> = base_class_names
            .iter()
            .filter(|n| !seen.contains(n.as_str()))
            .collect();
        extra.dedup();
        for n in extra {
            names.push(n.clone());
            gamma.push(1.0);
        }
        TDScoreTable::new(names, gamma, self.k_used, self.base_size)
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn gammas(&self) -> &[f64] {
        &self.gamma
    }

    pub fn k_used(&self) -> usize {
        self.k_used
    }

    pub fn base_size(&self) -> usize {
        self.base_size
    }

    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }

    pub fn gamma_for(&self, class: &str) -> Option<f64> {
        self.class_names
            .iter()
            .position(|c| c == class)
            .map(|i| self.gamma[i])
    }

    /// Two-column CSV body: `class,gamma`, one row per class.
    pub fn to_csv_string(&self) -> String {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(["class", "gamma"]).unwrap();
        for (name, g) in self.class_names.iter().zip(&self.gamma) {
            writer
                .write_record([name.as_str(), &g.to_string()])
                .unwrap();
        }
        String::from_utf8(writer.into_inner().unwrap()).unwrap()
    }

    pub fn from_csv_string(csv_text: &str, k_used: usize, base_size: usize) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(csv_text.as_bytes());
        let mut names = Vec::new();
        let mut gamma = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| Error::BadCsvRecord {
                path: "<inline td csv>".into(),
                reason: e.to_string(),
            })?;
            if record.len() != 2 {
                return Err(Error::BadCsvRecord {
                    path: "<inline td csv>".into(),
                    reason: "expected two columns (class, gamma)".into(),
                });
            }
            names.push(record[0].to_string());
            gamma.push(
                record[1]
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| Error::BadCsvRecord {
                        path: "<inline td csv>".into(),
                        reason: format!("non-numeric gamma '{}'", &record[1]),
                    })?,
            );
        }
        TDScoreTable::new(names, gamma, k_used, base_size)
    }

    /// Writes `<dir>/td_scores.csv` plus `<dir>/td_scores.json` recording
    /// `k_used` and `base_size`.
    pub fn write_files(&self, dir: &Path) -> Result<()> {
        let csv_path = dir.join("td_scores.csv");
        std::fs::write(&csv_path, self.to_csv_string()).map_err(|e| Error::io(&csv_path, e))?;
        let header = serde_json::json!({
            "k_used": self.k_used,
            "base_size": self.base_size,
            "num_classes": self.len(),
        });
        let json_path = dir.join("td_scores.json");
        let mut text = serde_json::to_string_pretty(&header).unwrap();
        text.push('\n');
        std::fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))
    }
}

fn check_dims(query_len: usize, refs: &EmbeddingSet) -> Result<()> {
    if query_len != refs.dim() {
        return Err(Error::DimMismatch {
            left: query_len,
            right: refs.dim(),
        });
    }
    Ok(())
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Mean Euclidean distance from `query` to its `k` nearest rows of `refs`.
///
/// Distance ties cannot change the mean, so no tie-break is needed beyond
/// a total order on the distances.
pub fn knn_mean_distance(query: &[f64], refs: &EmbeddingSet, k: usize) -> Result<f64> {
    check_dims(query.len(), refs)?;
    if k == 0 || k > refs.len() {
        return Err(Error::KOutOfRange { k, len: refs.len() });
    }
    let mut distances: Vec<f64> = (0..refs.len())
        .map(|i| euclidean(query, refs.row(i)))
        .collect();
    distances.sort_unstable_by(f64::total_cmp);
    Ok(distances[..k].iter().sum::<f64>() / k as f64)
}

/// `exp(-knn_mean_distance)`: in (0, 1], strictly decreasing in the mean
/// distance.
pub fn proximity(query: &[f64], refs: &EmbeddingSet, cfg: &ProximityConfig) -> Result<f64> {
    Ok((-knn_mean_distance(query, refs, cfg.k)?).exp())
}

fn require_normalized(set: &EmbeddingSet) -> Result<()> {
    if !set.is_normalized() {
        return Err(Error::NotNormalized {
            role: set.role().to_string(),
        });
    }
    Ok(())
}

fn require_same_order(a: &EmbeddingSet, b: &EmbeddingSet) -> Result<()> {
    if a.class_names() != b.class_names() {
        return Err(Error::ClassOrderMismatch {
            left: a.role().to_string(),
            right: b.role().to_string(),
        });
    }
    Ok(())
}

/// Computes the per-class textual-deviation table.
///
/// For each query class the multiplier is the proximity of its tuned row to
/// the tuned base set over the proximity of its pretrained row to the
/// pretrained base set. Classes named in `base_class_names` are pinned to
/// exactly 1 and their ratio is never computed. All four sets must be
/// normalized and share a dimension; both pretrained/tuned pairs must agree
/// on class order.
pub fn td_scores(
    pre_base: &EmbeddingSet,
    tuned_base: &EmbeddingSet,
    pre_query: &EmbeddingSet,
    tuned_query: &EmbeddingSet,
    cfg: &ProximityConfig,
    base_class_names: &[String],
) -> Result<TDScoreTable> {
    for set in [pre_base, tuned_base, pre_query, tuned_query] {
        require_normalized(set)?;
        check_dims(pre_base.dim(), set)?;
    }
    require_same_order(pre_query, tuned_query)?;
    require_same_order(pre_base, tuned_base)?;
    if cfg.k == 0 || cfg.k > pre_base.len() {
        return Err(Error::KOutOfRange {
            k: cfg.k,
            len: pre_base.len(),
        });
    }

    let base_names: HashSet<&str> = base_class_names.iter().map(String::as_str).collect();
    let gamma = crate::par::map_range(pre_query.len(), |i| -> Result<f64> {
        let name = &pre_query.class_names()[i];
        if base_names.contains(name.as_str()) {
            return Ok(1.0);
        }
        let tuned = proximity(tuned_query.row(i), tuned_base, cfg)?;
        let pre = proximity(pre_query.row(i), pre_base, cfg)?;
        Ok(tuned / pre)
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;

    TDScoreTable::new(
        pre_query.class_names().to_vec(),
        gamma,
        cfg.k,
        pre_base.len(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{normalize_rows, Role};
    use crate::matrix::Matrix;

    fn refs(rows: &[Vec<f64>], role: Role) -> EmbeddingSet {
        let names = (0..rows.len()).map(|i| format!("r{i}")).collect();
        EmbeddingSet::new(names, Matrix::from_rows(rows), role).unwrap()
    }

    fn unit_refs(rows: &[Vec<f64>], role: Role) -> EmbeddingSet {
        normalize_rows(&refs(rows, role)).unwrap()
    }

    #[test]
    fn self_distance_is_zero() {
        let r = refs(&[vec![1.0, 0.0], vec![0.0, 1.0]], Role::PretrainedBase);
        let d = knn_mean_distance(&[1.0, 0.0], &r, 1).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn mean_of_two_distances() {
        let r = refs(&[vec![1.0, 0.0], vec![3.0, 0.0]], Role::PretrainedBase);
        let d = knn_mean_distance(&[0.0, 0.0], &r, 2).unwrap();
        assert!((d - 2.0).abs() < 1e-12);
    }

    #[test]
    fn k_exceeding_refs_is_an_error() {
        let r = refs(
            &[vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0]],
            Role::PretrainedBase,
        );
        match knn_mean_distance(&[0.0, 0.0], &r, 4) {
            Err(Error::KOutOfRange { k: 4, len: 3 }) => {}
            other => panic!("expected k error, got {other:?}"),
        }
        assert!(matches!(
            knn_mean_distance(&[0.0, 0.0], &r, 0),
            Err(Error::KOutOfRange { .. })
        ));
    }

    #[test]
    fn dim_mismatch_is_an_error() {
        let r = refs(&[vec![1.0, 0.0]], Role::PretrainedBase);
        assert!(matches!(
            knn_mean_distance(&[1.0, 0.0, 0.0], &r, 1),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn proximity_closed_forms() {
        let r = refs(&[vec![0.0, 0.0]], Role::PretrainedBase);
        let cfg = ProximityConfig { k: 1 };
        assert_eq!(proximity(&[0.0, 0.0], &r, &cfg).unwrap(), 1.0);

        let r = refs(&[vec![2.0, 0.0]], Role::PretrainedBase);
        let p = proximity(&[0.0, 0.0], &r, &cfg).unwrap();
        assert!((p - (-2.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn antipodal_unit_pair() {
        let r = unit_refs(&[vec![-1.0, 0.0]], Role::PretrainedBase);
        let p = proximity(&[1.0, 0.0], &r, &ProximityConfig { k: 1 }).unwrap();
        assert!((p - (-2.0f64).exp()).abs() < 1e-12);
    }

    fn chord_point(d: f64) -> Vec<f64> {
        // Unit vector at chord distance d from (1, 0, 0).
        let c = 1.0 - d * d / 2.0;
        vec![c, (1.0 - c * c).sqrt(), 0.0]
    }

    fn td_fixture(
        tuned_chord: f64,
        pre_chord: f64,
    ) -> (EmbeddingSet, EmbeddingSet, EmbeddingSet, EmbeddingSet) {
        let mk = |rows: &[Vec<f64>], names: &[&str], role| {
            normalize_rows(
                &EmbeddingSet::new(
                    names.iter().map(|s| s.to_string()).collect(),
                    Matrix::from_rows(rows),
                    role,
                )
                .unwrap(),
            )
            .unwrap()
        };
        let base_row = vec![1.0, 0.0, 0.0];
        (
            mk(
                std::slice::from_ref(&base_row),
                &["b0"],
                Role::PretrainedBase,
            ),
            mk(&[base_row], &["b0"], Role::TunedBase),
            mk(&[chord_point(pre_chord)], &["q"], Role::PretrainedQuery),
            mk(&[chord_point(tuned_chord)], &["q"], Role::TunedQuery),
        )
    }

    #[test]
    fn td_ratio_closed_form() {
        let (pb, tb, pq, tq) = td_fixture(1.0, 0.5);
        let table = td_scores(&pb, &tb, &pq, &tq, &ProximityConfig { k: 1 }, &[]).unwrap();
        let expected = (-0.5f64).exp(); // e^{-1} / e^{-0.5}
        assert!((table.gammas()[0] - expected).abs() < 1e-9);
        assert!(table.gammas()[0] < 1.0);
        assert_eq!(table.k_used(), 1);
        assert_eq!(table.base_size(), 1);
    }

    #[test]
    fn identical_sets_give_unit_gamma() {
        let (pb, _, pq, _) = td_fixture(0.5, 0.5);
        let table = td_scores(
            &pb,
            &pb.clone(),
            &pq,
            &pq.clone(),
            &ProximityConfig { k: 1 },
            &[],
        )
        .unwrap();
        assert_eq!(table.gammas(), &[1.0]);
    }

    #[test]
    fn base_class_pinned_to_one() {
        let (pb, tb, pq, tq) = td_fixture(1.0, 0.5);
        let table = td_scores(
            &pb,
            &tb,
            &pq,
            &tq,
            &ProximityConfig { k: 1 },
            &["q".to_string()],
        )
        .unwrap();
        assert_eq!(table.gammas(), &[1.0]);
    }

    #[test]
    fn unnormalized_inputs_rejected() {
        let (pb, tb, pq, _) = td_fixture(1.0, 0.5);
        let raw = refs(&[vec![0.5, 0.0, 0.0]], Role::TunedQuery);
        match td_scores(&pb, &tb, &pq, &raw, &ProximityConfig { k: 1 }, &[]) {
            Err(Error::NotNormalized { role }) => assert_eq!(role, "tuned_query"),
            other => panic!("expected not-normalized error, got {other:?}"),
        }
    }

    #[test]
    fn class_order_mismatch_rejected() {
        let mk = |names: &[&str]| {
            normalize_rows(
                &EmbeddingSet::new(
                    names.iter().map(|s| s.to_string()).collect(),
                    Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]),
                    Role::PretrainedQuery,
                )
                .unwrap(),
            )
            .unwrap()
        };
        let base = mk(&["b0", "b1"]);
        let pq = mk(&["x", "y"]);
        let tq = mk(&["y", "x"]);
        assert!(matches!(
            td_scores(
                &base,
                &base.clone(),
                &pq,
                &tq,
                &ProximityConfig { k: 1 },
                &[]
            ),
            Err(Error::ClassOrderMismatch { .. })
        ));
    }

    #[test]
    fn td_csv_round_trip() {
        let table = TDScoreTable::new(
            vec!["a, with comma".into(), "b".into()],
            vec![0.5, 1.0],
            5,
            40,
        )
        .unwrap();
        let csv = table.to_csv_string();
        let back = TDScoreTable::from_csv_string(&csv, 5, 40).unwrap();
        assert_eq!(back, table);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::seq::SliceRandom;
        use rand::SeedableRng;

        proptest! {
            #[test]
            fn knn_matches_sort_all_oracle(
                n in 1usize..40,
                dim in 1usize..8,
                k_frac in 0.0f64..1.0,
                seed in 0u64..1000,
            ) {
                use rand::Rng;
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let rows: Vec<Vec<f64>> = (0..n)
                    .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
                    .collect();
                let query: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let k = 1 + ((n - 1) as f64 * k_frac) as usize;
                let r = refs(&rows, Role::PretrainedBase);

                let got = knn_mean_distance(&query, &r, k).unwrap();
                let mut all: Vec<f64> = rows.iter().map(|row| euclidean(&query, row)).collect();
                all.sort_by(f64::total_cmp);
                let expected = all[..k].iter().sum::<f64>() / k as f64;
                prop_assert!((got - expected).abs() < 1e-9);
            }

            #[test]
            fn permuting_refs_leaves_proximity_unchanged(seed in 0u64..500) {
                use rand::Rng;
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let rows: Vec<Vec<f64>> = (0..12)
                    .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
                    .collect();
                let query: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let cfg = ProximityConfig { k: 3 };
                let p0 = proximity(&query, &refs(&rows, Role::PretrainedBase), &cfg).unwrap();

                let mut shuffled = rows.clone();
                shuffled.shuffle(&mut rng);
                let p1 = proximity(&query, &refs(&shuffled, Role::PretrainedBase), &cfg).unwrap();
                prop_assert!((p0 - p1).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gamma_monotone_in_tuned_distance() {
        // Move the tuned query row strictly farther from the tuned base;
        // gamma must strictly decrease.
        let mut last = f64::INFINITY;
        for chord in [0.2, 0.5, 0.9, 1.4, 1.9] {
            let (pb, tb, pq, tq) = td_fixture(chord, 0.5);
            let g = td_scores(&pb, &tb, &pq, &tq, &ProximityConfig { k: 1 }, &[])
                .unwrap()
                .gammas()[0];
            assert!(g > 0.0);
            assert!(g < last, "gamma not strictly decreasing at chord {chord}");
            last = g;
        }
    }
}
