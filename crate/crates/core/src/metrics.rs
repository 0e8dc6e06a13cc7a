//! Confusion-matrix metrics for detector evaluation.

use alloc::collections::BTreeMap;
use alloc::string::String;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("prediction/truth id mismatch: {id:?} present on only one side")]
    IdMismatch { id: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: u32,
    pub fp: u32,
    #[serde(rename = "fn")]
    pub fn_: u32,
    pub tn: u32,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// True when no positives were predicted; precision is reported as 0
    /// rather than undefined.
    pub no_positive_predictions: bool,
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_from(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Standard confusion-matrix metrics; positive class = leaked.
///
/// The id sets of both maps must match exactly so silent misalignment
/// cannot skew results.
pub fn compute_metrics(
    predictions: &BTreeMap<String, bool>,
    truth: &BTreeMap<String, bool>,
) -> Result<Metrics, MetricsError> {
    for id in predictions.keys() {
        if !truth.contains_key(id) {
            return Err(MetricsError::IdMismatch { id: id.clone() });
        }
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0u32, 0u32, 0u32, 0u32);
    for (id, &actual) in truth {
        let Some(&predicted) = predictions.get(id) else {
            return Err(MetricsError::IdMismatch { id: id.clone() });
        };
        match (predicted, actual) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let total = f64::from(tp + fp + fn_ + tn);
    let accuracy = if total == 0.0 {
        0.0
    } else {
        f64::from(tp + tn) / total
    };
    let no_positive_predictions = tp + fp == 0;
    let precision = if no_positive_predictions {
        0.0
    } else {
        f64::from(tp) / f64::from(tp + fp)
    };
    let recall = if tp + fn_ == 0 {
        0.0
    } else {
        f64::from(tp) / f64::from(tp + fn_)
    };
    Ok(Metrics {
        tp,
        fp,
        fn_,
        tn,
        accuracy,
        precision,
        recall,
        f1: f1_from(precision, recall),
        no_positive_predictions,
    })
}
