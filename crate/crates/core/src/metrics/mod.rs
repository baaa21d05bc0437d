//! Binned calibration metrics, reliability tables, class-wise reports.
//!
//! All metrics consume a probability matrix (rows summing to 1) plus the
//! true label indices. Confidence is the top-label probability; equal-width
//! confidence bins are left-open right-closed over `(0, 1]` with the edge
//! convention shared with the calibrators ([`confidence_bin`]). Every
//! function here is a pure map over immutable inputs.

mod svd;

pub use svd::{svd_projection, ProjectedPoint, Projection};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub use crate::calibrate::confidence_bin;
use crate::error::{Error, Result};
use crate::matrix::{argmax, Matrix};

pub const DEFAULT_BINS: usize = 10;
pub const DEFAULT_PROXIMITY_BINS: usize = 5;

/// One equal-width confidence bin of a reliability table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean_confidence: f64,
    pub accuracy: f64,
    /// Signed `mean_confidence - accuracy`; 0 for empty bins.
    pub gap: f64,
}

/// Scalar metrics plus the reliability table they were computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ece: f64,
    pub ece_star: f64,
    pub ace: f64,
    pub mce: f64,
    pub piece: f64,
    pub accuracy: f64,
    pub mean_confidence: f64,
    pub sample_count: usize,
    pub num_bins_conf: usize,
    pub num_bins_prox: usize,
    pub bins: Vec<ReliabilityBin>,
}

/// Per-predicted-class aggregate for the class-wise gap analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClasswiseRecord {
    pub class_name: String,
    pub sample_count: usize,
    pub mean_confidence: f64,
    pub accuracy: f64,
    /// Signed `mean_confidence - accuracy`: positive means overconfident.
    pub signed_gap: f64,
    pub proximity_or_gamma: f64,
}

/// Per-sample (top-label confidence, correctness) pairs.
fn extract(probs: &Matrix, labels: &[usize]) -> Result<Vec<(f64, bool)>> {
    if probs.rows() == 0 {
        return Err(Error::EmptyPredictionSet);
    }
    if probs.rows() != labels.len() {
        return Err(Error::LengthMismatch {
            left: probs.rows(),
            right: labels.len(),
        });
    }
    Ok(crate::par::map_chunks(
        probs.as_slice(),
        probs.cols(),
        |i, row| {
            let top = argmax(row);
            (row[top], top == labels[i])
        },
    ))
}

fn check_bins(num_bins: usize) -> Result<()> {
    if num_bins == 0 {
        return Err(Error::InvalidBinCount);
    }
    Ok(())
}

struct BinAccumulator {
    count: Vec<usize>,
    conf_sum: Vec<f64>,
    correct: Vec<usize>,
}

impl BinAccumulator {
    fn new(bins: usize) -> Self {
        BinAccumulator {
            count: vec![0; bins],
            conf_sum: vec![0.0; bins],
            correct: vec![0; bins],
        }
    }

    fn add(&mut self, bin: usize, conf: f64, correct: bool) {
        self.count[bin] += 1;
        self.conf_sum[bin] += conf;
        self.correct[bin] += correct as usize;
    }

    fn weighted_abs_gap(&self, total: usize) -> f64 {
        let mut out = 0.0;
        for b in 0..self.count.len() {
            if self.count[b] > 0 {
                let n = self.count[b] as f64;
                let gap = self.conf_sum[b] / n - self.correct[b] as f64 / n;
                out += n / total as f64 * gap.abs();
            }
        }
        out
    }
}

/// Expected calibration error over equal-width confidence bins.
pub fn ece(probs: &Matrix, labels: &[usize], num_bins: usize) -> Result<f64> {
    check_bins(num_bins)?;
    let stats = extract(probs, labels)?;
    let mut acc = BinAccumulator::new(num_bins);
    for &(conf, ok) in &stats {
        acc.add(confidence_bin(conf, num_bins), conf, ok);
    }
    Ok(acc.weighted_abs_gap(stats.len()))
}

/// Signed variant of [`ece`]: same binning without the absolute value, so
/// positive means overconfident.
pub fn ece_star(probs: &Matrix, labels: &[usize], num_bins: usize) -> Result<f64> {
    check_bins(num_bins)?;
    let stats = extract(probs, labels)?;
    let mut acc = BinAccumulator::new(num_bins);
    for &(conf, ok) in &stats {
        acc.add(confidence_bin(conf, num_bins), conf, ok);
    }
    let n = stats.len() as f64;
    let mut out = 0.0;
    for b in 0..num_bins {
        if acc.count[b] > 0 {
            let c = acc.count[b] as f64;
            out += c / n * (acc.conf_sum[b] / c - acc.correct[b] as f64 / c);
        }
    }
    Ok(out)
}

/// Contiguous equal-mass group boundaries: sizes differ by at most one,
/// larger groups first.
fn equal_mass_bounds(n: usize, groups: usize) -> Vec<(usize, usize)> {
    let q = n / groups;
    let r = n % groups;
    let mut bounds = Vec::with_capacity(groups);
    let mut start = 0;
    for g in 0..groups {
        let size = q + (g < r) as usize;
        bounds.push((start, start + size));
        start += size;
    }
    bounds
}

/// Adaptive calibration error: [`ece`] aggregation over equal-mass bins.
///
/// Samples are stably ordered by confidence (ties keep sample order) and
/// split into contiguous groups differing in size by at most one.
pub fn ace(probs: &Matrix, labels: &[usize], num_bins: usize) -> Result<f64> {
    check_bins(num_bins)?;
    let stats = extract(probs, labels)?;
    let mut order: Vec<usize> = (0..stats.len()).collect();
    order.sort_by(|&a, &b| stats[a].0.total_cmp(&stats[b].0));
    let n = stats.len();
    let mut out = 0.0;
    for (start, end) in equal_mass_bounds(n, num_bins) {
        if start == end {
            continue;
        }
        let size = (end - start) as f64;
        let mut conf_sum = 0.0;
        let mut correct = 0usize;
        for &idx in &order[start..end] {
            conf_sum += stats[idx].0;
            correct += stats[idx].1 as usize;
        }
        out += size / n as f64 * (conf_sum / size - correct as f64 / size).abs();
    }
    Ok(out)
}

/// Maximum absolute accuracy–confidence gap over non-empty equal-width bins.
pub fn mce(probs: &Matrix, labels: &[usize], num_bins: usize) -> Result<f64> {
    check_bins(num_bins)?;
    let stats = extract(probs, labels)?;
    let mut acc = BinAccumulator::new(num_bins);
    for &(conf, ok) in &stats {
        acc.add(confidence_bin(conf, num_bins), conf, ok);
    }
    let mut worst = 0.0f64;
    for b in 0..num_bins {
        if acc.count[b] > 0 {
            let n = acc.count[b] as f64;
            let gap = (acc.conf_sum[b] / n - acc.correct[b] as f64 / n).abs();
            worst = worst.max(gap);
        }
    }
    Ok(worst)
}

/// Proximity-informed ECE over the joint partition of equal-width
/// confidence bins and equal-mass proximity bins.
///
/// With `bins_prox = 1` the joint partition collapses to the confidence
/// bins and the result equals [`ece`] exactly.
pub fn piece(
    probs: &Matrix,
    labels: &[usize],
    proximities: &[f64],
    bins_conf: usize,
    bins_prox: usize,
) -> Result<f64> {
    check_bins(bins_conf)?;
    check_bins(bins_prox)?;
    let stats = extract(probs, labels)?;
    if proximities.len() != stats.len() {
        return Err(Error::LengthMismatch {
            left: proximities.len(),
            right: stats.len(),
        });
    }

    let mut order: Vec<usize> = (0..stats.len()).collect();
    order.sort_by(|&a, &b| proximities[a].total_cmp(&proximities[b]));
    let mut prox_bin = vec![0usize; stats.len()];
    for (g, (start, end)) in equal_mass_bounds(stats.len(), bins_prox)
        .into_iter()
        .enumerate()
    {
        for &idx in &order[start..end] {
            prox_bin[idx] = g;
        }
    }

    let mut acc = BinAccumulator::new(bins_conf * bins_prox);
    for (i, &(conf, ok)) in stats.iter().enumerate() {
        let cell = confidence_bin(conf, bins_conf) * bins_prox + prox_bin[i];
        acc.add(cell, conf, ok);
    }
    Ok(acc.weighted_abs_gap(stats.len()))
}

/// Every equal-width bin (including empty ones) with counts, mean
/// confidence, accuracy, and signed gap. Recomputing [`ece`] from the
/// table reproduces the scalar.
pub fn reliability_table(
    probs: &Matrix,
    labels: &[usize],
    num_bins: usize,
) -> Result<Vec<ReliabilityBin>> {
    check_bins(num_bins)?;
    let stats = extract(probs, labels)?;
    let mut acc = BinAccumulator::new(num_bins);
    for &(conf, ok) in &stats {
        acc.add(confidence_bin(conf, num_bins), conf, ok);
    }
    Ok((0..num_bins)
        .map(|b| {
            let count = acc.count[b];
            let (mean_confidence, accuracy, gap) = if count > 0 {
                let n = count as f64;
                let mc = acc.conf_sum[b] / n;
                let a = acc.correct[b] as f64 / n;
                (mc, a, mc - a)
            } else {
                (0.0, 0.0, 0.0)
            };
            ReliabilityBin {
                lower: b as f64 / num_bins as f64,
                upper: (b + 1) as f64 / num_bins as f64,
                count,
                mean_confidence,
                accuracy,
                gap,
            }
        })
        .collect())
}

/// Groups samples by predicted class and reports each class's confidence,
/// accuracy, signed gap, and score (proximity or gamma), sorted ascending
/// by score so low-score overconfidence is directly inspectable.
///
/// Classes never predicted produce no record; a predicted class missing
/// from `scores` is an error.
pub fn classwise_report(
    probs: &Matrix,
    labels: &[usize],
    class_names: &[String],
    scores: &HashMap<String, f64>,
) -> Result<Vec<ClasswiseRecord>> {
    if probs.rows() == 0 {
        return Err(Error::EmptyPredictionSet);
    }
    if probs.rows() != labels.len() {
        return Err(Error::LengthMismatch {
            left: probs.rows(),
            right: labels.len(),
        });
    }
    let mut count = vec![0usize; class_names.len()];
    let mut conf_sum = vec![0.0f64; class_names.len()];
    let mut correct = vec![0usize; class_names.len()];
    for (i, row) in probs.iter_rows().enumerate() {
        let top = argmax(row);
        count[top] += 1;
        conf_sum[top] += row[top];
        correct[top] += (top == labels[i]) as usize;
    }
    let mut records = Vec::new();
    for (c, name) in class_names.iter().enumerate() {
        if count[c] == 0 {
            continue;
        }
        let score = *scores.get(name).ok_or_else(|| Error::MissingScore {
            class: name.clone(),
        })?;
        let n = count[c] as f64;
        let mean_confidence = conf_sum[c] / n;
        let accuracy = correct[c] as f64 / n;
        records.push(ClasswiseRecord {
            class_name: name.clone(),
            sample_count: count[c],
            mean_confidence,
            accuracy,
            signed_gap: mean_confidence - accuracy,
            proximity_or_gamma: score,
        });
    }
    records.sort_by(|a, b| a.proximity_or_gamma.total_cmp(&b.proximity_or_gamma));
    Ok(records)
}

/// Full report: all scalar metrics plus the reliability table.
///
/// `proximities` feeds the joint confidence × proximity partition; pass one
/// value per sample.
pub fn metrics_report(
    probs: &Matrix,
    labels: &[usize],
    proximities: &[f64],
    bins_conf: usize,
    bins_prox: usize,
) -> Result<MetricsReport> {
    let stats = extract(probs, labels)?;
    let n = stats.len() as f64;
    let accuracy = stats.iter().filter(|s| s.1).count() as f64 / n;
    let mean_confidence = stats.iter().map(|s| s.0).sum::<f64>() / n;
    let ece_val = ece(probs, labels, bins_conf)?;
    let piece_val = piece(probs, labels, proximities, bins_conf, bins_prox)?;
    // The joint partition refines the confidence bins, so it can never
    // report less error; a violation would mean the two paths disagree on
    // the binning rule.
    debug_assert!(
        ece_val <= piece_val + 1e-12,
        "ece {ece_val} exceeds piece {piece_val}"
    );
    Ok(MetricsReport {
        ece: ece_val,
        ece_star: ece_star(probs, labels, bins_conf)?,
        ace: ace(probs, labels, bins_conf)?,
        mce: mce(probs, labels, bins_conf)?,
        piece: piece_val,
        accuracy,
        mean_confidence,
        sample_count: stats.len(),
        num_bins_conf: bins_conf,
        num_bins_prox: bins_prox,
        bins: reliability_table(probs, labels, bins_conf)?,
    })
}

/// Spearman rank correlation with average ranks on ties.
///
/// Returns NaN for fewer than two points or zero variance in either input.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "spearman inputs must match");
    if x.len() < 2 {
        return f64::NAN;
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for i in 0..x.len() {
        let dx = rx[i] - mx;
        let dy = ry[i] - my;
        cov += dx * dy;
        vx += dx * dx;
        vy += dy * dy;
    }
    if vx == 0.0 || vy == 0.0 {
        return f64::NAN;
    }
    cov / (vx * vy).sqrt()
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}
