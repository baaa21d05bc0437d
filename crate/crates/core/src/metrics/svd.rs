//! Rank-2 projection of a joint embedding space for plotting.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::dataset::EmbeddingSet;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// One projected row, tagged with the set (or "image") it came from.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ProjectedPoint {
    pub source: String,
    pub label: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Projection {
    pub points: Vec<ProjectedPoint>,
    /// Variance captured by the two retained directions.
    pub retained_variance: f64,
    /// Total centered variance; `total - retained` is the rank-2
    /// reconstruction error.
    pub total_variance: f64,
}

impl Projection {
    pub fn retained_fraction(&self) -> f64 {
        if self.total_variance == 0.0 {
            1.0
        } else {
            self.retained_variance / self.total_variance
        }
    }
}

/// Stacks all rows, centers by the global mean, and projects onto the top-2
/// right singular vectors (eigenvectors of the d×d Gram matrix).
///
/// The retained directions maximize captured variance among rank-2
/// projections; signs are fixed by making each direction's
/// largest-magnitude component positive so output is deterministic.
pub fn svd_projection(
    sets: &[&EmbeddingSet],
    sample_image_embeddings: Option<&Matrix>,
) -> Result<Projection> {
    let mut dim = None;
    let mut tagged: Vec<(String, String, &[f64])> = Vec::new();
    for set in sets {
        match dim {
            None => dim = Some(set.dim()),
            Some(d) if d != set.dim() => {
                return Err(Error::DimMismatch {
                    left: d,
                    right: set.dim(),
                })
            }
            _ => {}
        }
        for (i, name) in set.class_names().iter().enumerate() {
            tagged.push((set.role().to_string(), name.clone(), set.row(i)));
        }
    }
    if let Some(images) = sample_image_embeddings {
        match dim {
            None => dim = Some(images.cols()),
            Some(d) if d != images.cols() => {
                return Err(Error::DimMismatch {
                    left: d,
                    right: images.cols(),
                })
            }
            _ => {}
        }
        for i in 0..images.rows() {
            tagged.push(("image".to_string(), format!("s{i}"), images.row(i)));
        }
    }
    let d = dim.ok_or(Error::EmptyPredictionSet)?;
    if d < 2 {
        return Err(Error::InvalidConfig {
            reason: "projection needs dimension >= 2".into(),
        });
    }
    let n = tagged.len();
    if n == 0 {
        return Err(Error::EmptyPredictionSet);
    }

    let mut mean = vec![0.0f64; d];
    for (_, _, row) in &tagged {
        for (m, &v) in mean.iter_mut().zip(*row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }

    let mut centered = DMatrix::<f64>::zeros(n, d);
    for (i, (_, _, row)) in tagged.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            centered[(i, j)] = v - mean[j];
        }
    }

    let gram = centered.transpose() * &centered;
    let eigen = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eigen.eigenvalues[b].total_cmp(&eigen.eigenvalues[a]));

    let mut directions = Vec::with_capacity(2);
    let mut retained = 0.0;
    for &idx in order.iter().take(2) {
        let mut v: Vec<f64> = eigen.eigenvectors.column(idx).iter().cloned().collect();
        let dominant = crate::matrix::argmax(&v.iter().map(|x| x.abs()).collect::<Vec<_>>());
        if v[dominant] < 0.0 {
            for x in &mut v {
                *x = -*x;
            }
        }
        retained += eigen.eigenvalues[idx].max(0.0);
        directions.push(v);
    }
    let total: f64 = eigen.eigenvalues.iter().map(|l| l.max(0.0)).sum();

    let points = tagged
        .iter()
        .enumerate()
        .map(|(i, (source, label, _))| {
            let row = centered.row(i);
            let mut coords = [0.0f64; 2];
            for (k, dir) in directions.iter().enumerate() {
                coords[k] = row.iter().zip(dir).map(|(a, b)| a * b).sum();
            }
            ProjectedPoint {
                source: source.clone(),
                label: label.clone(),
                x: coords[0],
                y: coords[1],
            }
        })
        .collect();

    Ok(Projection {
        points,
        retained_variance: retained,
        total_variance: total,
    })
}
