//! Post-hoc calibrators: fitting, application, and composition.
//!
//! Two families with different plumbing:
//!
//! * logit-space transforms — identity, temperature scaling, and the
//!   distance-aware rectification — rewrite the logit row and end with a
//!   softmax. They never change the per-sample argmax and they compose.
//! * probability-space transforms — histogram binning, isotonic
//!   regression, multi-class isotonic regression — operate on softmax
//!   output. They are fitted against a specific class list and refuse
//!   prediction sets over a different one, since a binning fit carries no
//!   meaning for a disjoint label space.
//!
//! Fitted models are immutable, serialize to JSON, and may be applied
//! concurrently.

mod pava;

pub use pava::MonotoneMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{softmax, softmax_matrix, softmax_row, PredictionSet};
use crate::error::{Error, Result};
use crate::matrix::{argmax, Matrix};
use crate::proximity::TDScoreTable;

pub const DEFAULT_HISTOGRAM_BINS: usize = 10;

const TEMPERATURE_MIN: f64 = 0.05;
const TEMPERATURE_MAX: f64 = 20.0;

/// A fitted, immutable transform from raw logits to calibrated
/// probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CalibratorModel {
    /// Plain softmax of the raw logits (the uncalibrated baseline).
    Identity,
    /// Softmax of `logits / temperature`.
    Temperature { temperature: f64 },
    /// Equal-width top-label binning; `bin_values[k]` is the calibrated
    /// confidence for bin `(k/K, (k+1)/K]`.
    Histogram {
        bin_edges: Vec<f64>,
        bin_values: Vec<f64>,
        fit_class_names: Vec<String>,
    },
    /// Monotone step map applied to the top-label confidence.
    Isotonic {
        map: MonotoneMap,
        fit_class_names: Vec<String>,
    },
    /// Monotone step map applied to every class probability, then
    /// row-renormalized.
    MultiIsotonic {
        map: MonotoneMap,
        fit_class_names: Vec<String>,
    },
    /// Scales each logit row by the textual-deviation multiplier of its
    /// predicted class.
    Dac { table: TDScoreTable },
    /// `second` applied to the logit output of `first`.
    Composed {
        first: Box<CalibratorModel>,
        second: Box<CalibratorModel>,
    },
}

impl CalibratorModel {
    pub fn kind_name(&self) -> &'static str {
        match self {
            CalibratorModel::Identity => "identity",
            CalibratorModel::Temperature { .. } => "temperature",
            CalibratorModel::Histogram { .. } => "histogram",
            CalibratorModel::Isotonic { .. } => "isotonic",
            CalibratorModel::MultiIsotonic { .. } => "multi_isotonic",
            CalibratorModel::Dac { .. } => "dac",
            CalibratorModel::Composed { .. } => "composed",
        }
    }

    /// True when the model rewrites logit rows (and can therefore feed a
    /// second calibration stage).
    pub fn is_logit_space(&self) -> bool {
        match self {
            CalibratorModel::Identity
            | CalibratorModel::Temperature { .. }
            | CalibratorModel::Dac { .. } => true,
            CalibratorModel::Composed { first, second } => {
                first.is_logit_space() && second.is_logit_space()
            }
            _ => false,
        }
    }

    /// Rewrites the raw logits without the final softmax. Only valid for
    /// logit-space models.
    pub fn transform_logits(&self, preds: &PredictionSet) -> Result<PredictionSet> {
        match self {
            CalibratorModel::Identity => Ok(preds.clone()),
            CalibratorModel::Temperature { temperature } => {
                let t = *temperature;
                if t <= 0.0 || !t.is_finite() {
                    return Err(Error::InvalidTemperature { value: t });
                }
                let mut logits = preds.logits().clone();
                for v in logits.as_mut_slice() {
                    *v /= t;
                }
                preds.with_logits(logits)
            }
            CalibratorModel::Dac { table } => preds.with_logits(dac_logits(preds, table)?),
            CalibratorModel::Composed { first, second } => {
                let mid = first.transform_logits(preds)?;
                second.transform_logits(&mid)
            }
            other => Err(Error::InvalidComposition {
                kind: other.kind_name().to_string(),
            }),
        }
    }

    /// Calibrated probabilities for `preds`, one row per sample.
    pub fn apply(&self, preds: &PredictionSet) -> Result<Matrix> {
        match self {
            CalibratorModel::Identity => Ok(softmax(preds)),
            CalibratorModel::Temperature { temperature } => apply_temperature(preds, *temperature),
            CalibratorModel::Dac { table } => apply_dac(preds, table),
            CalibratorModel::Histogram {
                bin_values,
                fit_class_names,
                ..
            } => {
                check_class_list("histogram", fit_class_names, preds)?;
                let bins = bin_values.clone();
                Ok(map_top_label(preds, move |conf| {
                    bins[confidence_bin(conf, bins.len())]
                }))
            }
            CalibratorModel::Isotonic {
                map,
                fit_class_names,
            } => {
                check_class_list("isotonic", fit_class_names, preds)?;
                let map = map.clone();
                Ok(map_top_label(preds, move |conf| map.eval(conf)))
            }
            CalibratorModel::MultiIsotonic {
                map,
                fit_class_names,
            } => {
                check_class_list("multi_isotonic", fit_class_names, preds)?;
                Ok(apply_multi_isotonic(preds, map))
            }
            CalibratorModel::Composed { first, second } => {
                let mid = first.transform_logits(preds)?;
                second.apply(&mid)
            }
        }
    }
}

/// Chains two calibrators: `first` (which must be a logit-space transform)
/// feeds `second`.
pub fn compose(first: CalibratorModel, second: CalibratorModel) -> Result<CalibratorModel> {
    if !first.is_logit_space() {
        return Err(Error::InvalidComposition {
            kind: first.kind_name().to_string(),
        });
    }
    Ok(CalibratorModel::Composed {
        first: Box::new(first),
        second: Box::new(second),
    })
}

fn check_class_list(kind: &str, fitted: &[String], preds: &PredictionSet) -> Result<()> {
    use std::collections::HashSet;
    let a: HashSet<&str> = fitted.iter().map(String::as_str).collect();
    let b: HashSet<&str> = preds.class_names().iter().map(String::as_str).collect();
    if a != b {
        return Err(Error::ClassListMismatch {
            kind: kind.to_string(),
        });
    }
    Ok(())
}

/// Equal-width bin index over `(0, 1]`, right-closed; confidence 0 lands in
/// the first bin. Shared with the metrics suite so binning never drifts
/// between fitting and evaluation.
pub fn confidence_bin(conf: f64, num_bins: usize) -> usize {
    if conf <= 0.0 {
        return 0;
    }
    let idx = (conf * num_bins as f64).ceil() as usize;
    idx.saturating_sub(1).min(num_bins - 1)
}

/// Per-sample (top-label confidence, correctness) pairs under plain softmax.
pub(crate) fn top_label_stats(preds: &PredictionSet) -> Vec<(f64, bool)> {
    let labels = preds.labels();
    crate::par::map_chunks(preds.logits().as_slice(), preds.num_classes(), |i, row| {
        let p = softmax_row(row);
        let top = argmax(&p);
        (p[top], top == labels[i])
    })
}

/// Replaces each row's top-label confidence with `new_conf(conf)` and
/// rescales the other entries to keep the row summing to 1.
fn map_top_label(preds: &PredictionSet, new_conf: impl Fn(f64) -> f64 + Sync) -> Matrix {
    let cols = preds.num_classes();
    let mut out = preds.logits().clone();
    crate::par::for_each_chunk_mut(out.as_mut_slice(), cols, |_, p| {
        crate::dataset::softmax_row_in_place(p);
        let top = argmax(p);
        let conf = p[top];
        let v = new_conf(conf).clamp(0.0, 1.0);
        let rest = 1.0 - conf;
        if rest > f64::EPSILON {
            let factor = (1.0 - v) / rest;
            for (j, q) in p.iter_mut().enumerate() {
                if j != top {
                    *q *= factor;
                }
            }
        } else if cols > 1 {
            let share = (1.0 - v) / (cols - 1) as f64;
            for (j, q) in p.iter_mut().enumerate() {
                if j != top {
                    *q = share;
                }
            }
        }
        p[top] = if cols == 1 { 1.0 } else { v };
    });
    out
}

fn apply_multi_isotonic(preds: &PredictionSet, map: &MonotoneMap) -> Matrix {
    let cols = preds.num_classes();
    let mut out = preds.logits().clone();
    crate::par::for_each_chunk_mut(out.as_mut_slice(), cols, |_, p| {
        crate::dataset::softmax_row_in_place(p);
        for q in p.iter_mut() {
            *q = map.eval(*q).clamp(0.0, 1.0);
        }
        let sum: f64 = p.iter().sum();
        if sum > 0.0 {
            for q in p.iter_mut() {
                *q /= sum;
            }
        } else {
            // An all-zero mapped row carries no information; fall back to
            // the uniform distribution.
            let u = 1.0 / cols as f64;
            for q in p.iter_mut() {
                *q = u;
            }
        }
    });
    out
}

/// Mean negative log-likelihood of `softmax(logits / t)` over the set.
pub fn nll_at_temperature(preds: &PredictionSet, t: f64) -> f64 {
    let labels = preds.labels();
    let per_sample =
        crate::par::map_chunks(preds.logits().as_slice(), preds.num_classes(), |i, row| {
            let label_logit = row[labels[i]];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            // log sum exp((l_j - l_label)/t) computed against the row max
            // for overflow safety.
            let sum: f64 = row.iter().map(|&l| ((l - max) / t).exp()).sum();
            sum.ln() + (max - label_logit) / t
        });
    per_sample.iter().sum::<f64>() / per_sample.len() as f64
}

fn require_fittable(preds: &PredictionSet) -> Result<()> {
    if preds.num_samples() == 0 {
        return Err(Error::EmptyCalibrationSet);
    }
    if preds.num_samples() < 2 {
        return Err(Error::DegenerateCalibrationSet {
            reason: "single sample".into(),
        });
    }
    Ok(())
}

/// Fits the temperature minimizing mean NLL on the fit set.
///
/// Golden-section search on `log T` over `[0.05, 20]`, converged well
/// inside the 1e-4 contract; the returned temperature never does worse
/// than `T = 1`.
pub fn fit_temperature(fit_set: &PredictionSet) -> Result<CalibratorModel> {
    require_fittable(fit_set)?;
    let first = fit_set.labels()[0];
    if fit_set.labels().iter().all(|&l| l == first) {
        return Err(Error::DegenerateCalibrationSet {
            reason: "fewer than two distinct labels".into(),
        });
    }

    let nll = |u: f64| nll_at_temperature(fit_set, u.exp());
    let (mut a, mut b) = (TEMPERATURE_MIN.ln(), TEMPERATURE_MAX.ln());
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = nll(x1);
    let mut f2 = nll(x2);
    while b - a > 1e-6 {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = nll(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = nll(x2);
        }
    }
    let mut t = ((a + b) / 2.0).exp();
    if nll_at_temperature(fit_set, 1.0) < nll_at_temperature(fit_set, t) {
        t = 1.0;
    }
    Ok(CalibratorModel::Temperature { temperature: t })
}

/// `softmax(logits / t)`; the per-row argmax matches the raw logits.
pub fn apply_temperature(preds: &PredictionSet, t: f64) -> Result<Matrix> {
    if t <= 0.0 || !t.is_finite() {
        return Err(Error::InvalidTemperature { value: t });
    }
    let cols = preds.num_classes();
    let mut out = preds.logits().clone();
    crate::par::for_each_chunk_mut(out.as_mut_slice(), cols, |_, row| {
        for l in row.iter_mut() {
            *l /= t;
        }
        crate::dataset::softmax_row_in_place(row);
    });
    Ok(out)
}

/// Fits equal-width histogram binning on top-label confidence.
///
/// Each bin's value is the empirical accuracy of the fit samples falling in
/// it; empty bins take the bin midpoint.
pub fn fit_histogram_binning(fit_set: &PredictionSet, num_bins: usize) -> Result<CalibratorModel> {
    if num_bins == 0 {
        return Err(Error::InvalidBinCount);
    }
    require_fittable(fit_set)?;
    let stats = top_label_stats(fit_set);
    let mut counts = vec![0usize; num_bins];
    let mut correct = vec![0usize; num_bins];
    for &(conf, ok) in &stats {
        let b = confidence_bin(conf, num_bins);
        counts[b] += 1;
        correct[b] += ok as usize;
    }
    let bin_values: Vec<f64> = (0..num_bins)
        .map(|b| {
            if counts[b] == 0 {
                (b as f64 + 0.5) / num_bins as f64
            } else {
                correct[b] as f64 / counts[b] as f64
            }
        })
        .collect();
    let bin_edges: Vec<f64> = (0..=num_bins).map(|b| b as f64 / num_bins as f64).collect();
    Ok(CalibratorModel::Histogram {
        bin_edges,
        bin_values,
        fit_class_names: fit_set.class_names().to_vec(),
    })
}

/// Pool-adjacent-violators fit of top-label correctness against top-label
/// confidence.
pub fn fit_isotonic(fit_set: &PredictionSet) -> Result<CalibratorModel> {
    require_fittable(fit_set)?;
    let stats = top_label_stats(fit_set);
    let points: Vec<(f64, f64, f64)> = stats
        .iter()
        .map(|&(conf, ok)| (conf, ok as u8 as f64, 1.0))
        .collect();
    Ok(CalibratorModel::Isotonic {
        map: pava::fit(points),
        fit_class_names: fit_set.class_names().to_vec(),
    })
}

/// One PAVA fit pooled over every (class probability, one-vs-rest
/// correctness) pair across all classes and samples.
pub fn fit_multi_isotonic(fit_set: &PredictionSet) -> Result<CalibratorModel> {
    require_fittable(fit_set)?;
    let probs = softmax(fit_set);
    let labels = fit_set.labels();
    let mut points = Vec::with_capacity(fit_set.num_samples() * fit_set.num_classes());
    for (i, row) in probs.iter_rows().enumerate() {
        for (j, &p) in row.iter().enumerate() {
            points.push((p, (labels[i] == j) as u8 as f64, 1.0));
        }
    }
    Ok(CalibratorModel::MultiIsotonic {
        map: pava::fit(points),
        fit_class_names: fit_set.class_names().to_vec(),
    })
}

fn dac_logits(preds: &PredictionSet, table: &TDScoreTable) -> Result<Matrix> {
    let gamma_by_col: Vec<f64> = preds
        .class_names()
        .iter()
        .map(|name| {
            table.gamma_for(name).ok_or_else(|| Error::MissingGamma {
                class: name.clone(),
            })
        })
        .collect::<Result<_>>()?;
    let cols = preds.num_classes();
    let mut out = preds.logits().clone();
    crate::par::for_each_chunk_mut(out.as_mut_slice(), cols, |_, row| {
        let gamma = gamma_by_col[argmax(row)];
        for l in row.iter_mut() {
            *l *= gamma;
        }
    });
    Ok(out)
}

/// Distance-aware rectification: scales each raw logit row by the
/// multiplier of its predicted class, then softmaxes.
///
/// The predicted class comes from the raw logits; since every multiplier is
/// positive the argmax is unchanged, and an all-ones table reproduces plain
/// softmax bit-for-bit.
pub fn apply_dac(preds: &PredictionSet, table: &TDScoreTable) -> Result<Matrix> {
    Ok(softmax_matrix(&dac_logits(preds, table)?))
}
