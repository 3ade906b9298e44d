//! Metrics over annotations and training runs, as CSV, JSON and SVG.

mod curves;
mod sweep;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::RoleLabel;
use crate::fmt::sig9;
use crate::shad::{AnnotatedCorpus, ThresholdRow};

pub use curves::{loss_curves, loss_curves_named, parse_svg_points, CurveRow, LossCurves};
pub use sweep::{heldout_reasoning_loss, sweep_csv, tau_sweep, SweepRow, PROXY_METRIC};

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("no tokens in bucket {0}")]
    EmptyBucket(RoleLabel),
    #[error("token {k} of `{id}` has no ground-truth label")]
    MissingTruth { id: String, k: usize },
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, ReportError>;

/// Coarse misclassification count of one truth bucket.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BucketRate {
    pub bucket: RoleLabel,
    pub wrong: usize,
    pub total: usize,
    pub rate: f64,
}

/// Per-bucket rates for every bucket in `scope`, in scope order.
///
/// A token is wrong when its predicted coarse role differs from the coarse
/// role of its truth label.
pub fn misclassification_rate(
    annotated: &AnnotatedCorpus,
    scope: &[RoleLabel],
) -> Result<Vec<BucketRate>> {
    let mut counts: BTreeMap<RoleLabel, (usize, usize)> = BTreeMap::new();
    for r in annotated.records() {
        let truth = r.truth.ok_or_else(|| ReportError::MissingTruth {
            id: r.sample_id.clone(),
            k: r.k,
        })?;
        let c = counts.entry(truth).or_default();
        c.1 += 1;
        if r.predicted != truth.coarse() {
            c.0 += 1;
        }
    }
    scope
        .iter()
        .map(|&bucket| match counts.get(&bucket) {
            Some(&(wrong, total)) if total > 0 => Ok(BucketRate {
                bucket,
                wrong,
                total,
                rate: wrong as f64 / total as f64,
            }),
            _ => Err(ReportError::EmptyBucket(bucket)),
        })
        .collect()
}

/// Rates per bucket plus the pooled coarse rate over every bucket except
/// Copied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Misclassification {
    pub buckets: Vec<BucketRate>,
    pub coarse_wrong: usize,
    pub coarse_total: usize,
    /// Boilerplate-vs-reasoning rate, Copied excluded.
    pub coarse_rate: f64,
}

impl Misclassification {
    pub fn rate(&self, bucket: RoleLabel) -> Option<f64> {
        self.buckets
            .iter()
            .find(|b| b.bucket == bucket)
            .map(|b| b.rate)
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["bucket", "wrong", "total", "rate"])
            .expect("in-memory write");
        for b in &self.buckets {
            w.write_record([
                b.bucket.as_str(),
                &b.wrong.to_string(),
                &b.total.to_string(),
                &sig9(b.rate),
            ])
            .expect("in-memory write");
        }
        w.write_record([
            "coarse_excluding_copied",
            &self.coarse_wrong.to_string(),
            &self.coarse_total.to_string(),
            &sig9(self.coarse_rate),
        ])
        .expect("in-memory write");
        w.into_inner().expect("in-memory write")
    }
}

pub fn misclassification(annotated: &AnnotatedCorpus) -> Result<Misclassification> {
    let buckets = misclassification_rate(annotated, &RoleLabel::ALL)?;
    let pooled = buckets.iter().filter(|b| b.bucket != RoleLabel::Copied);
    let (coarse_wrong, coarse_total) = pooled.fold((0, 0), |(w, t), b| (w + b.wrong, t + b.total));
    Ok(Misclassification {
        coarse_rate: coarse_wrong as f64 / coarse_total as f64,
        buckets,
        coarse_wrong,
        coarse_total,
    })
}

/// Everything a report command emits, in one JSON document.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Artifact name to SHA-256 (or other identifying string).
    pub fingerprint: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub misclassification: Option<Misclassification>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub loss_curves: Option<Vec<CurveRow>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sweep_metric: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sweep: Option<Vec<SweepRow>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub format_threshold: Option<Vec<ThresholdRow>>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub warnings: Vec<String>,
}

impl MetricReport {
    pub fn to_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("serializable");
        out.push(b'\n');
        out
    }
}
