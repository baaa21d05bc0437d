//! Report files and the printed summary format.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use ovcal::metrics::{ClasswiseRecord, MetricsReport, ReliabilityBin};

use crate::method::Method;

/// Result of evaluating one method on one split.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SplitOutcome {
    Report(MetricsReport),
    NotApplicable { not_applicable: String },
}

/// One stable line per method × split; re-summarizing the written JSON
/// must reproduce it byte for byte.
pub fn summary_line(method: &str, split: &str, outcome: &SplitOutcome) -> String {
    match outcome {
        SplitOutcome::Report(r) => format!(
            "eval method={method} split={split} n={} bins={}x{} acc={:.6} conf={:.6} \
             ece={:.6} ece_star={:.6} ace={:.6} mce={:.6} piece={:.6}",
            r.sample_count,
            r.num_bins_conf,
            r.num_bins_prox,
            r.accuracy,
            r.mean_confidence,
            r.ece,
            r.ece_star,
            r.ace,
            r.mce,
            r.piece
        ),
        SplitOutcome::NotApplicable { not_applicable } => {
            format!("eval method={method} split={split} not applicable ({not_applicable})")
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_reliability_csv(path: &Path, bins: &[ReliabilityBin]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "lower",
        "upper",
        "count",
        "mean_confidence",
        "accuracy",
        "gap",
    ])?;
    for b in bins {
        w.write_record([
            b.lower.to_string(),
            b.upper.to_string(),
            b.count.to_string(),
            b.mean_confidence.to_string(),
            b.accuracy.to_string(),
            b.gap.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_classwise_csv(
    path: &Path,
    records: &[ClasswiseRecord],
    score_name: &str,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "class",
        "sample_count",
        "mean_confidence",
        "accuracy",
        "signed_gap",
        score_name,
    ])?;
    for r in records {
        w.write_record([
            r.class_name.clone(),
            r.sample_count.to_string(),
            r.mean_confidence.to_string(),
            r.accuracy.to_string(),
            r.signed_gap.to_string(),
            r.proximity_or_gamma.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Plain-text method × metric table per split, with the run configuration
/// echoed in the header. Inapplicable cells print "-".
pub fn summary_table(
    header: &str,
    splits: &[&str],
    outcomes: &BTreeMap<(String, String), SplitOutcome>,
    methods: &[Method],
) -> String {
    let mut out = String::new();
    out.push_str(header);
    out.push('\n');
    for split in splits {
        out.push_str(&format!("\n[{split}]\n"));
        out.push_str(&format!(
            "{:<8} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}\n",
            "method", "acc", "conf", "ece", "ece_star", "ace", "mce", "piece"
        ));
        for method in methods {
            let key = (method.as_str().to_string(), split.to_string());
            let row = match outcomes.get(&key) {
                Some(SplitOutcome::Report(r)) => format!(
                    "{:<8} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4}",
                    method.as_str(),
                    r.accuracy,
                    r.mean_confidence,
                    r.ece,
                    r.ece_star,
                    r.ace,
                    r.mce,
                    r.piece
                ),
                Some(SplitOutcome::NotApplicable { .. }) => format!(
                    "{:<8} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}",
                    method.as_str(),
                    "-",
                    "-",
                    "-",
                    "-",
                    "-",
                    "-",
                    "-"
                ),
                None => continue,
            };
            out.push_str(&row);
            out.push('\n');
        }
    }
    out
}
