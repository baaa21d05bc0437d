//! Deterministic synthetic open-vocabulary scenarios.
//!
//! The generated world mirrors the geometry of a contrastively trained
//! joint embedding space. Each modality clusters around its own anchor
//! direction, far from the other modality's cluster, and each class
//! carries a latent identity direction shared by its text embedding and
//! its image features, so image-to-text similarity rides on the class
//! identity rather than on the text cluster's common component.
//!
//! Fine-tuning perturbs base-class text slightly and pushes new-class
//! text radially away from the base centroid with per-class magnitudes
//! averaging `gap_strength`; images never move. Each sample's logit row
//! is additionally sharpened in proportion to how far its generating
//! class drifted (`sharpness_slope`), reproducing the
//! low-proximity-means-overconfident regime on demand.
//!
//! Everything is drawn from a ChaCha8 stream seeded with `seed`; the draw
//! order never depends on `gap_strength` or `sharpness_slope`, so sweeping
//! either knob with a fixed seed reuses identical draws.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dataset::{EmbeddingSet, PredictionSet, Role, DEFAULT_TAU};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::proximity::{proximity, ProximityConfig};

/// How far text embeddings spread around the text anchor.
const TEXT_SPREAD: f64 = 0.2;
/// How far image concepts spread around the image anchor.
const IMAGE_SPREAD: f64 = 0.18;
/// Tuning perturbation applied to base-class text embeddings.
const TUNE_PERTURB: f64 = 0.03;
/// Noise scale of image features around their class concept.
const IMAGE_NOISE: f64 = 0.35;
/// Chord displacement applied per unit of `gap_strength`.
const DISPLACEMENT_SCALE: f64 = 1.4;
/// Neighbor count used for the generator's internal proximity ground truth.
const PROXIMITY_K: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioConfig {
    pub num_base_classes: usize,
    pub num_new_classes: usize,
    pub dim: usize,
    pub samples_per_class: usize,
    /// Radial displacement of new-class tuned embeddings away from the
    /// base centroid.
    pub gap_strength: f64,
    /// Extra logit scaling applied to samples of low-proximity classes.
    pub sharpness_slope: f64,
    pub tau: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            num_base_classes: 40,
            num_new_classes: 40,
            dim: 64,
            samples_per_class: 50,
            gap_strength: 0.8,
            sharpness_slope: 2.0,
            tau: DEFAULT_TAU,
            seed: 7,
        }
    }
}

/// Generator-side ground truth, useful for regression tests.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Image-space class directions the samples were drawn around, base
    /// classes first then new classes.
    pub class_directions: Matrix,
    /// Proximity of each base class's tuned embedding to the tuned base set.
    pub base_proximity: Vec<f64>,
    /// Proximity of each new class's tuned embedding to the tuned base set.
    pub new_proximity: Vec<f64>,
    pub base_sharpen: Vec<f64>,
    pub new_sharpen: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioBundle {
    pub pre_base: EmbeddingSet,
    pub tuned_base: EmbeddingSet,
    pub pre_query: EmbeddingSet,
    pub tuned_query: EmbeddingSet,
    pub base_fit: PredictionSet,
    pub base_eval: PredictionSet,
    pub new_eval: PredictionSet,
    /// Eval-split image features (base eval rows first, then new eval).
    pub image_features: Matrix,
    pub ground_truth: GroundTruth,
}

fn validate(cfg: &ScenarioConfig) -> Result<()> {
    if cfg.num_base_classes < 1 || cfg.num_new_classes < 1 || cfg.samples_per_class < 1 {
        return Err(Error::InvalidConfig {
            reason: "class and sample counts must be at least 1".into(),
        });
    }
    if cfg.dim < 3 {
        return Err(Error::InvalidConfig {
            reason: "dim must be at least 3".into(),
        });
    }
    if cfg.gap_strength < 0.0 || cfg.gap_strength.is_nan() {
        return Err(Error::InvalidConfig {
            reason: "gap_strength must be nonnegative".into(),
        });
    }
    if cfg.tau <= 0.0 || cfg.tau.is_nan() {
        return Err(Error::InvalidConfig {
            reason: "tau must be positive".into(),
        });
    }
    Ok(())
}

/// Uniform random unit direction, so perturbation scales are exact rather
/// than growing with sqrt(dim).
fn unit_direction(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let g: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    normalize(g)
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in &mut v {
            *x /= norm;
        }
    }
    v
}

fn add_scaled(base: &[f64], dir: &[f64], scale: f64) -> Vec<f64> {
    base.iter().zip(dir).map(|(b, d)| b + scale * d).collect()
}

/// Removes the components of `v` along each (orthonormal) basis vector.
fn reject(v: &[f64], basis: &[&Vec<f64>]) -> Vec<f64> {
    let mut out = v.to_vec();
    for b in basis {
        let coef = dot(&out, b);
        for (o, &bv) in out.iter_mut().zip(b.iter()) {
            *o -= coef * bv;
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn embedding_set(names: &[String], rows: Vec<Vec<f64>>, role: Role) -> EmbeddingSet {
    EmbeddingSet::with_normalized(names.to_vec(), Matrix::from_rows(&rows), role, true)
        .expect("generated set is structurally valid")
}

/// Builds a full scenario bundle; identical configs yield bit-identical
/// bundles.
pub fn generate_scenario(cfg: &ScenarioConfig) -> Result<ScenarioBundle> {
    validate(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let b = cfg.num_base_classes;
    let q = cfg.num_new_classes;
    let dim = cfg.dim;

    let text_anchor = unit_direction(&mut rng, dim);
    let image_anchor_raw = unit_direction(&mut rng, dim);
    // Orthonormalize the image anchor against the text anchor so the
    // modality gap is a clean right angle.
    let image_anchor = normalize(reject(&image_anchor_raw, &[&text_anchor]));

    // Latent identity direction per class, shared between the class's text
    // embedding and its image features. Components along either anchor are
    // projected out: a latent leaning onto an anchor would hand its class a
    // constant logit offset for every sample.
    let latent = |rng: &mut ChaCha8Rng| {
        let g = unit_direction(rng, dim);
        normalize(reject(&g, &[&text_anchor, &image_anchor]))
    };
    let base_latents: Vec<Vec<f64>> = (0..b).map(|_| latent(&mut rng)).collect();
    let query_latents: Vec<Vec<f64>> = (0..q).map(|_| latent(&mut rng)).collect();

    let text_of = |latent: &[f64]| normalize(add_scaled(&text_anchor, latent, TEXT_SPREAD));
    let pre_base_rows: Vec<Vec<f64>> = base_latents.iter().map(|u| text_of(u)).collect();
    let pre_query_rows: Vec<Vec<f64>> = query_latents.iter().map(|u| text_of(u)).collect();

    let tuned_base_rows: Vec<Vec<f64>> = pre_base_rows
        .iter()
        .map(|row| {
            let g = unit_direction(&mut rng, dim);
            normalize(add_scaled(row, &g, TUNE_PERTURB))
        })
        .collect();

    let mut centroid = vec![0.0f64; dim];
    for row in &pre_base_rows {
        for (c, &v) in centroid.iter_mut().zip(row) {
            *c += v;
        }
    }
    for c in &mut centroid {
        *c /= b as f64;
    }

    // Per-class displacement spread, mean 1: real tuning moves different
    // classes by different amounts, and a uniform push would leave every
    // deviation score identical. Drawn unconditionally so the stream stays
    // aligned when gap_strength is swept under a fixed seed.
    let displacement_spread: Vec<f64> = (0..q).map(|_| rng.gen_range(0.0..2.0)).collect();

    let tuned_query_rows: Vec<Vec<f64>> = pre_query_rows
        .iter()
        .zip(&displacement_spread)
        .map(|(row, spread)| {
            let away: Vec<f64> = row.iter().zip(&centroid).map(|(r, c)| r - c).collect();
            let norm = away.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                let chord = cfg.gap_strength * spread * DISPLACEMENT_SCALE;
                normalize(add_scaled(row, &away, chord / norm))
            } else {
                row.clone()
            }
        })
        .collect();

    let base_names: Vec<String> = (0..b).map(|i| format!("base_{i:03}")).collect();
    let new_names: Vec<String> = (0..q).map(|i| format!("new_{i:03}")).collect();

    let pre_base = embedding_set(&base_names, pre_base_rows.clone(), Role::PretrainedBase);
    let tuned_base = embedding_set(&base_names, tuned_base_rows.clone(), Role::TunedBase);
    let pre_query = embedding_set(&new_names, pre_query_rows.clone(), Role::PretrainedQuery);
    let tuned_query = embedding_set(&new_names, tuned_query_rows.clone(), Role::TunedQuery);

    let prox_cfg = ProximityConfig {
        k: PROXIMITY_K.min(b),
    };
    let base_proximity: Vec<f64> = (0..b)
        .map(|i| proximity(tuned_base.row(i), &tuned_base, &prox_cfg))
        .collect::<Result<_>>()?;
    let new_proximity: Vec<f64> = (0..q)
        .map(|i| proximity(tuned_query.row(i), &tuned_base, &prox_cfg))
        .collect::<Result<_>>()?;

    let sharpen = |prox: f64| 1.0 + cfg.sharpness_slope * (1.0 - prox);
    let base_sharpen: Vec<f64> = base_proximity.iter().map(|&p| sharpen(p)).collect();
    let new_sharpen: Vec<f64> = new_proximity.iter().map(|&p| sharpen(p)).collect();
    if base_sharpen.iter().chain(&new_sharpen).any(|&s| s <= 0.0) {
        return Err(Error::InvalidConfig {
            reason: "sharpness_slope drives a logit scale non-positive".into(),
        });
    }

    // Image concepts live in the image modality's own cluster; tuning never
    // moves them.
    let concept_of = |latent: &[f64]| normalize(add_scaled(&image_anchor, latent, IMAGE_SPREAD));
    let base_concepts: Vec<Vec<f64>> = base_latents.iter().map(|u| concept_of(u)).collect();
    let new_concepts: Vec<Vec<f64>> = query_latents.iter().map(|u| concept_of(u)).collect();

    let draw_split = |rng: &mut ChaCha8Rng,
                      concept_rows: &[Vec<f64>],
                      text_rows: &[Vec<f64>],
                      sharpen: &[f64],
                      names: &[String],
                      features: Option<&mut Vec<Vec<f64>>>|
     -> Result<PredictionSet> {
        let classes = concept_rows.len();
        let mut logits = Matrix::zeros(classes * cfg.samples_per_class, classes);
        let mut labels = Vec::with_capacity(classes * cfg.samples_per_class);
        let mut kept = features;
        for (c, concept) in concept_rows.iter().enumerate() {
            for s in 0..cfg.samples_per_class {
                let g = unit_direction(rng, dim);
                let x = normalize(add_scaled(concept, &g, IMAGE_NOISE));
                let row = logits.row_mut(c * cfg.samples_per_class + s);
                for (j, text) in text_rows.iter().enumerate() {
                    row[j] = sharpen[c] * cfg.tau * dot(&x, text);
                }
                labels.push(c);
                if let Some(kept) = kept.as_deref_mut() {
                    kept.push(x);
                }
            }
        }
        PredictionSet::new(names.to_vec(), logits, labels, cfg.tau)
    };

    let base_fit = draw_split(
        &mut rng,
        &base_concepts,
        &tuned_base_rows,
        &base_sharpen,
        &base_names,
        None,
    )?;
    let mut eval_features: Vec<Vec<f64>> = Vec::new();
    let base_eval = draw_split(
        &mut rng,
        &base_concepts,
        &tuned_base_rows,
        &base_sharpen,
        &base_names,
        Some(&mut eval_features),
    )?;
    let new_eval = draw_split(
        &mut rng,
        &new_concepts,
        &tuned_query_rows,
        &new_sharpen,
        &new_names,
        Some(&mut eval_features),
    )?;

    Ok(ScenarioBundle {
        pre_base,
        tuned_base,
        pre_query,
        tuned_query,
        base_fit,
        base_eval,
        new_eval,
        image_features: Matrix::from_rows(&eval_features),
        ground_truth: GroundTruth {
            class_directions: {
                let mut all = base_concepts.clone();
                all.extend(new_concepts.iter().cloned());
                Matrix::from_rows(&all)
            },
            base_proximity,
            new_proximity,
            base_sharpen,
            new_sharpen,
        },
    })
}

/// Multiplies every logit by `factor`: accuracy is untouched (positive
/// scaling preserves the argmax) while `factor > 1` strictly raises the
/// top-label confidence of any non-uniform row.
pub fn inject_overconfidence(preds: &PredictionSet, factor: f64) -> Result<PredictionSet> {
    if factor <= 0.0 || !factor.is_finite() {
        return Err(Error::InvalidFactor { value: factor });
    }
    let mut logits = preds.logits().clone();
    for v in logits.as_mut_slice() {
        *v *= factor;
    }
    preds.with_logits(logits)
}
