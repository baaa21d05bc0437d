//! CSV fallback for hand-editable fixtures.
//!
//! Embedding sets: one row per class, first column the class name, the rest
//! the values. Prediction sets: a header row `sample_id,<class>,...`, one
//! row per sample; labels live in a separate two-column CSV of
//! `(sample id, class name)`. The fallback is capped at 10k matrix entries;
//! larger artifacts belong in the binary format.

use std::path::{Path, PathBuf};

use crate::dataset::{EmbeddingSet, PredictionSet, Role};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Maximum rows × cols accepted by the CSV fallback.
pub const MAX_CSV_ENTRIES: usize = 10_000;

/// Conventional location of the labels CSV next to a predictions CSV.
pub fn labels_path(predictions: &Path) -> PathBuf {
    let mut os = predictions.as_os_str().to_owned();
    os.push(".labels.csv");
    PathBuf::from(os)
}

fn bad(path: &Path, reason: impl Into<String>) -> Error {
    Error::BadCsvRecord {
        path: path.to_owned(),
        reason: reason.into(),
    }
}

fn check_size(rows: usize, cols: usize) -> Result<()> {
    let entries = rows * cols;
    if entries > MAX_CSV_ENTRIES {
        return Err(Error::CsvTooLarge {
            entries,
            limit: MAX_CSV_ENTRIES,
        });
    }
    Ok(())
}

pub fn read_embedding_set(path: &Path, role: Role) -> Result<EmbeddingSet> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(false)
        .from_path(path)
        .map_err(|e| bad(path, e.to_string()))?;
    let mut names = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| bad(path, e.to_string()))?;
        let mut fields = record.iter();
        let name = fields
            .next()
            .ok_or_else(|| bad(path, "empty record"))?
            .to_string();
        let values: Vec<f64> = fields
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| bad(path, format!("non-numeric value '{f}' in row '{name}'")))
            })
            .collect::<Result<_>>()?;
        if values.is_empty() {
            return Err(bad(path, format!("row '{name}' has no values")));
        }
        if let Some(first) = rows.first() {
            if values.len() != first.len() {
                return Err(Error::DimMismatch {
                    left: first.len(),
                    right: values.len(),
                });
            }
        }
        names.push(name);
        rows.push(values);
    }
    if rows.is_empty() {
        return Err(bad(path, "no rows"));
    }
    check_size(rows.len(), rows[0].len())?;
    EmbeddingSet::new(names, Matrix::from_rows(&rows), role)
}

pub fn write_embedding_set(path: &Path, set: &EmbeddingSet) -> Result<()> {
    check_size(set.len(), set.dim())?;
    let mut writer = csv::Writer::from_path(path).map_err(|e| bad(path, e.to_string()))?;
    for (i, name) in set.class_names().iter().enumerate() {
        let mut record = vec![name.clone()];
        record.extend(set.row(i).iter().map(|v| v.to_string()));
        writer
            .write_record(&record)
            .map_err(|e| bad(path, e.to_string()))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Reads logits from `path` and labels from the sidecar labels CSV.
pub fn read_prediction_set(path: &Path, tau: f64) -> Result<PredictionSet> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| bad(path, e.to_string()))?;
    let headers = reader.headers().map_err(|e| bad(path, e.to_string()))?;
    let class_names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    if class_names.is_empty() {
        return Err(bad(path, "header lists no classes"));
    }
    let mut sample_ids = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| bad(path, e.to_string()))?;
        if record.len() != class_names.len() + 1 {
            return Err(bad(
                path,
                format!(
                    "record has {} fields, header implies {}",
                    record.len(),
                    class_names.len() + 1
                ),
            ));
        }
        let mut fields = record.iter();
        let id = fields.next().unwrap().to_string();
        let values: Vec<f64> = fields
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| bad(path, format!("non-numeric logit '{f}' in sample '{id}'")))
            })
            .collect::<Result<_>>()?;
        sample_ids.push(id);
        rows.push(values);
    }
    if rows.is_empty() {
        return Err(bad(path, "no samples"));
    }
    check_size(rows.len(), class_names.len())?;

    let lp = labels_path(path);
    let mut label_reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(&lp)
        .map_err(|e| bad(&lp, e.to_string()))?;
    let mut label_by_id = std::collections::HashMap::new();
    for record in label_reader.records() {
        let record = record.map_err(|e| bad(&lp, e.to_string()))?;
        if record.len() != 2 {
            return Err(bad(&lp, "labels CSV must have exactly two columns"));
        }
        label_by_id.insert(record[0].to_string(), record[1].to_string());
    }
    let labels: Vec<usize> = sample_ids
        .iter()
        .map(|id| {
            let class = label_by_id
                .get(id)
                .ok_or_else(|| bad(&lp, format!("no label for sample '{id}'")))?;
            class_names
                .iter()
                .position(|c| c == class)
                .ok_or_else(|| bad(&lp, format!("label class '{class}' not in header")))
        })
        .collect::<Result<_>>()?;

    PredictionSet::new(class_names, Matrix::from_rows(&rows), labels, tau)
}

pub fn write_prediction_set(path: &Path, preds: &PredictionSet) -> Result<()> {
    check_size(preds.num_samples(), preds.num_classes())?;
    let mut writer = csv::Writer::from_path(path).map_err(|e| bad(path, e.to_string()))?;
    let mut header = vec!["sample_id".to_string()];
    header.extend(preds.class_names().iter().cloned());
    writer
        .write_record(&header)
        .map_err(|e| bad(path, e.to_string()))?;
    for i in 0..preds.num_samples() {
        let mut record = vec![format!("s{i}")];
        record.extend(preds.logits().row(i).iter().map(|v| v.to_string()));
        writer
            .write_record(&record)
            .map_err(|e| bad(path, e.to_string()))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;

    let lp = labels_path(path);
    let mut label_writer = csv::Writer::from_path(&lp).map_err(|e| bad(&lp, e.to_string()))?;
    for (i, &label) in preds.labels().iter().enumerate() {
        label_writer
            .write_record([format!("s{i}"), preds.class_names()[label].clone()])
            .map_err(|e| bad(&lp, e.to_string()))?;
    }
    label_writer.flush().map_err(|e| Error::io(&lp, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn duplicate_class_name_in_csv() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("dup.csv");
        std::fs::write(&path, "cat,0.1,0.2\ncat,0.3,0.4\n").unwrap();
        match read_embedding_set(&path, Role::PretrainedBase) {
            Err(Error::DuplicateClassName { name }) => assert_eq!(name, "cat"),
            other => panic!("expected duplicate class error, got {other:?}"),
        }
    }

    #[test]
    fn ragged_csv_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("ragged.csv");
        std::fs::write(&path, "a,0.1,0.2\nb,0.3\n").unwrap();
        assert!(read_embedding_set(&path, Role::PretrainedBase).is_err());
    }

    #[test]
    fn embedding_round_trip_within_1e6() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("emb.csv");
        let set = EmbeddingSet::new(
            vec!["rock beauty, holacanthus".into(), "oak".into()],
            Matrix::from_rows(&[vec![0.123456789, -0.5], vec![1.0, 2.0]]),
            Role::TunedBase,
        )
        .unwrap();
        write_embedding_set(&path, &set).unwrap();
        let back = read_embedding_set(&path, Role::TunedBase).unwrap();
        assert_eq!(back.class_names(), set.class_names());
        for i in 0..set.len() {
            for (a, b) in set.row(i).iter().zip(back.row(i)) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn prediction_round_trip_with_labels_sidecar() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("preds.csv");
        let preds = PredictionSet::new(
            vec!["a".into(), "b".into(), "c".into()],
            Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![0.1, 0.2, 0.3]]),
            vec![2, 0],
            100.0,
        )
        .unwrap();
        write_prediction_set(&path, &preds).unwrap();
        let back = read_prediction_set(&path, 100.0).unwrap();
        assert_eq!(back.labels(), preds.labels());
        assert_eq!(back.class_names(), preds.class_names());
    }

    #[test]
    fn oversized_csv_rejected() {
        let set = EmbeddingSet::new(
            (0..101).map(|i| format!("c{i}")).collect(),
            Matrix::zeros(101, 100),
            Role::PretrainedBase,
        )
        .unwrap();
        let dir = tempdir().unwrap();
        let err = write_embedding_set(&dir.path().join("big.csv"), &set).unwrap_err();
        assert!(matches!(err, Error::CsvTooLarge { .. }));
    }
}
