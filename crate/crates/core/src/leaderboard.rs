//! Aggregation of audit summaries into a leakage leaderboard and
//! per-item permutation profiles.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::{AuditSummary, DiagRow, Label, Scenario, Verdict};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LeaderboardError {
    #[error("no summaries given")]
    Empty,
    #[error("summaries mix datasets: {first:?} (fingerprint {first_fp}) vs {other:?} (fingerprint {other_fp})")]
    MixedDatasets {
        first: String,
        first_fp: String,
        other: String,
        other_fp: String,
    },
}

/// One model's leakage rates on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardRow {
    pub model_id: String,
    pub dataset: String,
    pub pct_leaked_a: Option<f64>,
    pub pct_leaked_b: Option<f64>,
    pub items_scored: u32,
    pub items_skipped: u32,
    pub delta: String,
    pub manifest_hash: Option<String>,
}

/// Build a board from summaries of the same dataset, sorted by scenario B
/// leakage descending, ties broken by scenario A then model id.
pub fn build_leaderboard(
    summaries: &[AuditSummary],
) -> Result<Vec<LeaderboardRow>, LeaderboardError> {
    let first = summaries.first().ok_or(LeaderboardError::Empty)?;
    for other in &summaries[1..] {
        if other.dataset_fingerprint != first.dataset_fingerprint {
            return Err(LeaderboardError::MixedDatasets {
                first: first.dataset.clone(),
                first_fp: first.dataset_fingerprint.clone(),
                other: other.dataset.clone(),
                other_fp: other.dataset_fingerprint.clone(),
            });
        }
    }
    let mut rows: Vec<LeaderboardRow> = summaries
        .iter()
        .map(|s| LeaderboardRow {
            model_id: s.model_id.clone(),
            dataset: s.dataset.clone(),
            pct_leaked_a: s.pct_leaked_a(),
            pct_leaked_b: s.pct_leaked_b(),
            items_scored: s.n_items_scored,
            items_skipped: s.n_items - s.n_items_scored,
            delta: s.delta_policy.clone(),
            manifest_hash: s.manifest_hash.clone(),
        })
        .collect();
    rows.sort_by(|a, b| {
        let bv = |r: &LeaderboardRow| r.pct_leaked_b.unwrap_or(f64::NEG_INFINITY);
        let av = |r: &LeaderboardRow| r.pct_leaked_a.unwrap_or(f64::NEG_INFINITY);
        bv(b)
            .partial_cmp(&bv(a))
            .unwrap()
            .then(av(b).partial_cmp(&av(a)).unwrap())
            .then(a.model_id.cmp(&b.model_id))
    });
    Ok(rows)
}

/// Log probability (and decision score, when available) per permutation
/// of one item: the data behind a dot-line case plot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermProfile {
    pub item_id: String,
    pub scenario: Scenario,
    pub label: Label,
    pub max_perm_id: u32,
    pub delta: Option<f64>,
    /// One point per distinct permutation, in perm_id order.
    pub points: Vec<DiagRow>,
}

pub fn build_profile(verdict: &Verdict) -> PermProfile {
    PermProfile {
        item_id: verdict.item_id.clone(),
        scenario: verdict.scenario,
        label: verdict.label,
        max_perm_id: verdict.max_perm_id,
        delta: verdict.delta,
        points: verdict.diagnostics.clone(),
    }
}
