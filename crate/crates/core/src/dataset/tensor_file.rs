//! Binary tensor format and its JSON sidecars.
//!
//! Layout: a fixed 16-byte header — magic `VCAL`, `u8` version, `u8` dtype
//! code (1 = f32), `u16` reserved, `u32` rows, `u32` cols, all
//! little-endian — followed by the row-major little-endian `f32` payload.
//! Class names (and, for prediction sets, labels and tau) live in a JSON
//! sidecar at `<path>.json` so the payload stays parseable from any
//! language.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{EmbeddingSet, PredictionSet, Role, DEFAULT_TAU};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const MAGIC: [u8; 4] = *b"VCAL";
pub const FORMAT_VERSION: u8 = 1;
pub const DTYPE_F32: u8 = 1;
const HEADER_LEN: usize = 16;

/// Sidecar for an embedding-set tensor: one class name per row.
#[derive(Debug, Serialize, Deserialize)]
pub struct EmbeddingSidecar {
    pub class_names: Vec<String>,
}

/// Sidecar for a prediction-set tensor: column class names, per-row label
/// indices, and the scale constant baked into the logits.
#[derive(Debug, Serialize, Deserialize)]
pub struct PredictionSidecar {
    pub class_names: Vec<String>,
    pub labels: Vec<usize>,
    #[serde(default)]
    pub tau: Option<f64>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    PathBuf::from(os)
}

/// Writes a raw matrix (no sidecar).
pub fn write_matrix(path: &Path, m: &Matrix) -> Result<()> {
    let mut bytes = Vec::with_capacity(HEADER_LEN + m.as_slice().len() * 4);
    bytes.extend_from_slice(&MAGIC);
    bytes.push(FORMAT_VERSION);
    bytes.push(DTYPE_F32);
    bytes.extend_from_slice(&0u16.to_le_bytes());
    bytes.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    bytes.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for &v in m.as_slice() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a raw matrix (header + payload only).
pub fn read_matrix(path: &Path) -> Result<Matrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < HEADER_LEN {
        return Err(Error::MalformedHeader {
            path: path.to_owned(),
            reason: format!(
                "file holds {} bytes, header needs {HEADER_LEN}",
                bytes.len()
            ),
        });
    }
    if bytes[0..4] != MAGIC {
        return Err(Error::MalformedHeader {
            path: path.to_owned(),
            reason: "bad magic, expected VCAL".into(),
        });
    }
    if bytes[4] != FORMAT_VERSION {
        return Err(Error::MalformedHeader {
            path: path.to_owned(),
            reason: format!("unsupported version {}", bytes[4]),
        });
    }
    if bytes[5] != DTYPE_F32 {
        return Err(Error::UnsupportedDtype {
            path: path.to_owned(),
            code: bytes[5],
        });
    }
    let rows = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let expected = rows * cols;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected * 4 {
        return Err(Error::PayloadMismatch {
            path: path.to_owned(),
            expected,
            found: payload.len() / 4,
        });
    }
    let data: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(Matrix::from_vec(data, rows, cols))
}

fn read_sidecar<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let sp = sidecar_path(path);
    let text = fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: sp,
        source: e,
    })
}

fn write_sidecar<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let sp = sidecar_path(path);
    let mut text = serde_json::to_string_pretty(value).expect("sidecar serializes");
    text.push('\n');
    fs::write(&sp, text).map_err(|e| Error::io(&sp, e))
}

pub fn write_embedding_set(path: &Path, set: &EmbeddingSet) -> Result<()> {
    write_matrix(path, set.matrix())?;
    write_sidecar(
        path,
        &EmbeddingSidecar {
            class_names: set.class_names().to_vec(),
        },
    )
}

pub fn read_embedding_set(path: &Path, role: Role) -> Result<EmbeddingSet> {
    let m = read_matrix(path)?;
    let sidecar: EmbeddingSidecar = read_sidecar(path)?;
    if sidecar.class_names.len() != m.rows() {
        return Err(Error::MalformedHeader {
            path: path.to_owned(),
            reason: format!(
                "sidecar lists {} class names for {} rows",
                sidecar.class_names.len(),
                m.rows()
            ),
        });
    }
    EmbeddingSet::new(sidecar.class_names, m, role)
}

pub fn write_prediction_set(path: &Path, preds: &PredictionSet) -> Result<()> {
    write_matrix(path, preds.logits())?;
    write_sidecar(
        path,
        &PredictionSidecar {
            class_names: preds.class_names().to_vec(),
            labels: preds.labels().to_vec(),
            tau: Some(preds.tau()),
        },
    )
}

pub fn read_prediction_set(path: &Path) -> Result<PredictionSet> {
    let m = read_matrix(path)?;
    let sidecar: PredictionSidecar = read_sidecar(path)?;
    PredictionSet::new(
        sidecar.class_names,
        m,
        sidecar.labels,
        sidecar.tau.unwrap_or(DEFAULT_TAU),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn header_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.vcal");
        let m = Matrix::from_rows(&[
            vec![0.25, -1.5, 3.0, 0.125],
            vec![1.0, 2.0, 3.0, 4.0],
            vec![-0.5, 0.75, 8.0, -2.25],
        ]);
        write_matrix(&path, &m).unwrap();
        let back = read_matrix(&path).unwrap();
        assert_eq!(back.rows(), 3);
        assert_eq!(back.cols(), 4);
        // f32-representable values survive the round trip bit-exactly.
        assert_eq!(back, m);
    }

    #[test]
    fn saved_bytes_are_stable() {
        let dir = tempdir().unwrap();
        let a = dir.path().join("a.vcal");
        let b = dir.path().join("b.vcal");
        let m = Matrix::from_rows(&[vec![0.1, 0.2]]);
        write_matrix(&a, &m).unwrap();
        write_matrix(&b, &read_matrix(&a).unwrap()).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn payload_shorter_than_header_claims() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.vcal");
        let m = Matrix::from_rows(&[vec![1.0], vec![2.0], vec![3.0], vec![4.0]]);
        write_matrix(&path, &m).unwrap();
        // Rewrite the header to claim 5 rows while the payload holds 4.
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[8..12].copy_from_slice(&5u32.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        match read_matrix(&path) {
            Err(Error::PayloadMismatch {
                expected, found, ..
            }) => {
                assert_eq!(expected, 5);
                assert_eq!(found, 4);
            }
            other => panic!("expected payload mismatch, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.vcal");
        std::fs::write(
            &path,
            b"NOPE\x01\x01\x00\x00\x00\x00\x00\x00\x00\x00\x00\x00",
        )
        .unwrap();
        assert!(matches!(
            read_matrix(&path),
            Err(Error::MalformedHeader { .. })
        ));
    }

    #[test]
    fn embedding_set_round_trip_with_sidecar() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("emb.vcal");
        let set = EmbeddingSet::new(
            vec!["a".into(), "b".into(), "c".into()],
            Matrix::from_rows(&[
                vec![1.0, 0.0, 0.0, 0.0],
                vec![0.0, 1.0, 0.0, 0.0],
                vec![0.0, 0.0, 1.0, 0.0],
            ]),
            Role::PretrainedBase,
        )
        .unwrap();
        write_embedding_set(&path, &set).unwrap();
        let back = read_embedding_set(&path, Role::PretrainedBase).unwrap();
        assert_eq!(back.class_names(), set.class_names());
        assert_eq!(back.dim(), 4);
        assert_eq!(back.matrix(), set.matrix());
        assert!(!back.is_normalized());
    }

    #[test]
    fn prediction_set_round_trip_keeps_tau() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("preds.vcal");
        let preds = PredictionSet::new(
            vec!["x".into(), "y".into()],
            Matrix::from_rows(&[vec![3.0, 1.0], vec![0.5, 2.5]]),
            vec![0, 1],
            50.0,
        )
        .unwrap();
        write_prediction_set(&path, &preds).unwrap();
        let back = read_prediction_set(&path).unwrap();
        assert_eq!(back, preds);
    }
}
