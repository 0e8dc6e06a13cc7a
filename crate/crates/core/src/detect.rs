//! The two leakage decision rules and batch auditing.
//!
//! Scenario A (training order preserved): an item is leaked iff the
//! identity rendering holds the *strict* maximum log probability among
//! all distinct renderings. Exact ties are called not-leaked and flagged,
//! since under no leakage a tie is scoring degeneracy and claiming
//! leakage on it inflates false positives.
//!
//! Scenario B (training order possibly shuffled): fit a seeded isolation
//! forest over the distinct log probabilities, take the decision score of
//! the maximum, and call leakage iff that score falls below the threshold
//! delta.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::iforest::{self, IForestError, IForestParams};
use crate::permute::RenderTemplate;
use crate::rng::{derive_seed, fnv1a64};
use crate::scoring::{ItemScorer, LogProbEntry, LogProbSet, ScoreOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectError {
    #[error("item {item_id}: identity permutation (perm 0) missing from log-prob set")]
    MissingIdentity { item_id: String },
    #[error("item {item_id}: need at least {needed} distinct renderings (got {got})")]
    TooFewDistinct {
        item_id: String,
        needed: u32,
        got: u32,
    },
    #[error("item {item_id}: non-finite log probability at perm {perm_id}")]
    NonFinite { item_id: String, perm_id: u32 },
    #[error("outlier threshold {delta} outside valid decision-score range (-0.5, 0.5)")]
    InvalidDelta { delta: f64 },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Forest(#[from] IForestError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "L")]
    Leaked,
    #[serde(rename = "NL")]
    NotLeaked,
}

impl Label {
    pub fn is_leaked(self) -> bool {
        matches!(self, Label::Leaked)
    }
}

/// One row of the per-permutation diagnostics table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagRow {
    pub perm_id: u32,
    pub logprob: f64,
    /// Present for scenario B, where the forest scored every rendering.
    pub decision_score: Option<f64>,
}

/// Per-item, per-scenario decision with full diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub item_id: String,
    pub scenario: Scenario,
    pub label: Label,
    /// Permutation holding the maximum log probability (smallest perm_id
    /// on exact ties).
    pub max_perm_id: u32,
    pub max_logprob: f64,
    /// Decision score of the maximum (scenario B).
    pub outlier_score: Option<f64>,
    /// Threshold the decision used (scenario B).
    pub delta: Option<f64>,
    /// Scenario A: the identity tied with another rendering at the top.
    pub tie: bool,
    pub n_distinct: u32,
    pub diagnostics: Vec<DiagRow>,
}

fn sorted_entries(lps: &LogProbSet) -> Vec<LogProbEntry> {
    let mut entries = lps.entries.clone();
    entries.sort_by_key(|e| e.perm_id);
    entries
}

fn check_finite(item_id: &str, entries: &[LogProbEntry]) -> Result<(), DetectError> {
    for e in entries {
        if !e.logprob.is_finite() {
            return Err(DetectError::NonFinite {
                item_id: item_id.to_string(),
                perm_id: e.perm_id,
            });
        }
    }
    Ok(())
}

fn max_of(entries: &[LogProbEntry]) -> LogProbEntry {
    // Entries are sorted by perm_id, so strict > keeps the smallest
    // perm_id among exact ties.
    let mut best = entries[0];
    for e in &entries[1..] {
        if e.logprob > best.logprob {
            best = *e;
        }
    }
    best
}

/// Original-order-is-max rule.
pub fn detect_scenario_a(lps: &LogProbSet) -> Result<Verdict, DetectError> {
    let entries = sorted_entries(lps);
    if entries.len() < 2 {
        return Err(DetectError::TooFewDistinct {
            item_id: lps.item_id.clone(),
            needed: 2,
            got: entries.len() as u32,
        });
    }
    check_finite(&lps.item_id, &entries)?;
    let identity =
        *entries
            .iter()
            .find(|e| e.perm_id == 0)
            .ok_or_else(|| DetectError::MissingIdentity {
                item_id: lps.item_id.clone(),
            })?;
    let max = max_of(&entries);
    let others_below = entries
        .iter()
        .filter(|e| e.perm_id != 0)
        .all(|e| e.logprob < identity.logprob);
    let tie = !others_below
        && entries
            .iter()
            .any(|e| e.perm_id != 0 && e.logprob == identity.logprob)
        && identity.logprob == max.logprob;
    let label = if others_below {
        Label::Leaked
    } else {
        Label::NotLeaked
    };
    Ok(Verdict {
        item_id: lps.item_id.clone(),
        scenario: Scenario::A,
        label,
        max_perm_id: max.perm_id,
        max_logprob: max.logprob,
        outlier_score: None,
        delta: None,
        tie,
        n_distinct: entries.len() as u32,
        diagnostics: entries
            .iter()
            .map(|e| DiagRow {
                perm_id: e.perm_id,
                logprob: e.logprob,
                decision_score: None,
            })
            .collect(),
    })
}

/// Forest outputs for one item, reusable across thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct OutlierProfile {
    pub item_id: String,
    pub entries: Vec<LogProbEntry>,
    pub decision: Vec<f64>,
    /// Index into `entries`/`decision` of the maximum log probability.
    pub max_index: usize,
}

/// Fit the per-item forest and score every distinct rendering.
pub fn outlier_profile(
    lps: &LogProbSet,
    params: &IForestParams,
) -> Result<OutlierProfile, DetectError> {
    let entries = sorted_entries(lps);
    if entries.len() < 4 {
        return Err(DetectError::TooFewDistinct {
            item_id: lps.item_id.clone(),
            needed: 4,
            got: entries.len() as u32,
        });
    }
    check_finite(&lps.item_id, &entries)?;
    let values: Vec<f64> = entries.iter().map(|e| e.logprob).collect();
    let forest = iforest::fit(&values, params)?;
    let decision = forest.score(&values).decision;
    let max = max_of(&entries);
    let max_index = entries
        .iter()
        .position(|e| e.perm_id == max.perm_id)
        .expect("max entry comes from entries");
    Ok(OutlierProfile {
        item_id: lps.item_id.clone(),
        entries,
        decision,
        max_index,
    })
}

/// Apply a threshold to an already-computed outlier profile.
pub fn verdict_from_outlier_profile(
    profile: &OutlierProfile,
    delta: f64,
) -> Result<Verdict, DetectError> {
    validate_delta(delta)?;
    let max = profile.entries[profile.max_index];
    let d_max = profile.decision[profile.max_index];
    let label = if d_max < delta {
        Label::Leaked
    } else {
        Label::NotLeaked
    };
    Ok(Verdict {
        item_id: profile.item_id.clone(),
        scenario: Scenario::B,
        label,
        max_perm_id: max.perm_id,
        max_logprob: max.logprob,
        outlier_score: Some(d_max),
        delta: Some(delta),
        tie: false,
        n_distinct: profile.entries.len() as u32,
        diagnostics: profile
            .entries
            .iter()
            .zip(&profile.decision)
            .map(|(e, d)| DiagRow {
                perm_id: e.perm_id,
                logprob: e.logprob,
                decision_score: Some(*d),
            })
            .collect(),
    })
}

/// Max-is-an-outlier rule.
pub fn detect_scenario_b(
    lps: &LogProbSet,
    delta: f64,
    params: &IForestParams,
) -> Result<Verdict, DetectError> {
    validate_delta(delta)?;
    let profile = outlier_profile(lps, params)?;
    verdict_from_outlier_profile(&profile, delta)
}

pub fn validate_delta(delta: f64) -> Result<(), DetectError> {
    if !delta.is_finite() || delta <= -0.5 || delta >= 0.5 {
        return Err(DetectError::InvalidDelta { delta });
    }
    Ok(())
}

/// Which decision rules a batch run applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioChoice {
    A,
    B,
    Both,
}

impl ScenarioChoice {
    pub fn runs_a(self) -> bool {
        matches!(self, ScenarioChoice::A | ScenarioChoice::Both)
    }

    pub fn runs_b(self) -> bool {
        matches!(self, ScenarioChoice::B | ScenarioChoice::Both)
    }
}

/// Threshold selection for scenario B.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaPolicy {
    Fixed(f64),
    /// -0.20 for items with up to four options, -0.25 for five-option
    /// items (whose 120 permutations spread the forest more).
    ByOptionCount,
}

impl DeltaPolicy {
    pub fn resolve(self, option_count: usize) -> f64 {
        match self {
            DeltaPolicy::Fixed(delta) => delta,
            DeltaPolicy::ByOptionCount => {
                if option_count >= 5 {
                    -0.25
                } else {
                    -0.20
                }
            }
        }
    }

    pub fn describe(self) -> String {
        match self {
            DeltaPolicy::Fixed(delta) => format!("fixed({delta})"),
            DeltaPolicy::ByOptionCount => "by_option_count".to_string(),
        }
    }
}

/// Forest shape shared by every item in a batch; the per-item seed is
/// derived from the run seed and the item id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IForestConfig {
    pub n_trees: usize,
    pub subsample: Option<usize>,
}

impl Default for IForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            subsample: None,
        }
    }
}

/// Reproducible per-item forest seed.
pub fn item_forest_seed(run_seed: u64, item_id: &str) -> u64 {
    derive_seed(run_seed, b"item-forest", fnv1a64(item_id.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchConfig {
    pub scenario: ScenarioChoice,
    pub delta: DeltaPolicy,
    pub iforest: IForestConfig,
    pub seed: u64,
    pub template: RenderTemplate,
    pub score: ScoreOptions,
}

impl Default for BatchConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioChoice::Both,
            delta: DeltaPolicy::ByOptionCount,
            iforest: IForestConfig::default(),
            seed: 0,
            template: RenderTemplate::default(),
            score: ScoreOptions::default(),
        }
    }
}

/// Item that produced no verdict for a scenario (or at all), with why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedItem {
    pub item_id: String,
    /// None: the item could not be scored, so both scenarios are out.
    pub scenario: Option<Scenario>,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioStats {
    pub evaluated: u32,
    pub leaked: u32,
    /// leaked / evaluated; 0 when nothing was evaluated.
    pub pct_leaked: f64,
}

/// Dataset-level audit results for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub model_id: String,
    pub dataset: String,
    pub dataset_fingerprint: String,
    pub n_items: u32,
    /// Items whose permutations were all scored.
    pub n_items_scored: u32,
    /// Items dropped because scoring failed.
    pub n_items_unscored: u32,
    pub scenario_a: Option<ScenarioStats>,
    pub scenario_b: Option<ScenarioStats>,
    pub delta_policy: String,
    pub seed: u64,
    pub template_hash: String,
    pub skipped: Vec<SkippedItem>,
    /// Filled in by the driver once the run manifest exists.
    pub manifest_hash: Option<String>,
}

impl AuditSummary {
    pub fn pct_leaked_a(&self) -> Option<f64> {
        self.scenario_a.map(|s| s.pct_leaked)
    }

    pub fn pct_leaked_b(&self) -> Option<f64> {
        self.scenario_b.map(|s| s.pct_leaked)
    }

    pub fn has_skips(&self) -> bool {
        self.n_items_unscored > 0 || !self.skipped.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutcome {
    /// Verdicts in dataset order; one per item per requested scenario
    /// that could be decided.
    pub verdicts: Vec<Verdict>,
    pub summary: AuditSummary,
}

struct ScenarioTally {
    evaluated: u32,
    leaked: u32,
}

impl ScenarioTally {
    fn new() -> Self {
        Self {
            evaluated: 0,
            leaked: 0,
        }
    }

    fn record(&mut self, label: Label) {
        self.evaluated += 1;
        if label.is_leaked() {
            self.leaked += 1;
        }
    }

    fn stats(&self) -> ScenarioStats {
        ScenarioStats {
            evaluated: self.evaluated,
            leaked: self.leaked,
            pct_leaked: if self.evaluated == 0 {
                0.0
            } else {
                f64::from(self.leaked) / f64::from(self.evaluated)
            },
        }
    }
}

/// Run the requested decision rules over a whole dataset.
///
/// Per-item failures are never silently dropped: scoring failures and
/// undecidable items land in `summary.skipped` with a reason.
pub fn detect_batch(
    dataset: &Dataset,
    scorer: &mut dyn ItemScorer,
    cfg: &BatchConfig,
) -> Result<BatchOutcome, DetectError> {
    if dataset.is_empty() {
        return Err(DetectError::EmptyDataset);
    }
    if let DeltaPolicy::Fixed(delta) = cfg.delta {
        validate_delta(delta)?;
    }

    let mut verdicts = Vec::new();
    let mut skipped = Vec::new();
    let mut n_scored = 0u32;
    let mut n_unscored = 0u32;
    let mut tally_a = ScenarioTally::new();
    let mut tally_b = ScenarioTally::new();

    for item in dataset.items() {
        let lps = match scorer.score_item(item, &cfg.template, cfg.score) {
            Ok(lps) => lps,
            Err(err) => {
                n_unscored += 1;
                skipped.push(SkippedItem {
                    item_id: item.id.clone(),
                    scenario: None,
                    reason: format!("unscored: {err}"),
                });
                continue;
            }
        };
        n_scored += 1;

        if cfg.scenario.runs_a() {
            match detect_scenario_a(&lps) {
                Ok(verdict) => {
                    tally_a.record(verdict.label);
                    verdicts.push(verdict);
                }
                Err(err) => skipped.push(SkippedItem {
                    item_id: item.id.clone(),
                    scenario: Some(Scenario::A),
                    reason: err.to_string(),
                }),
            }
        }

        if cfg.scenario.runs_b() {
            if lps.n_distinct() < 4 {
                // A forest over two or three points is meaningless;
                // duplicate-option items can land here.
                skipped.push(SkippedItem {
                    item_id: item.id.clone(),
                    scenario: Some(Scenario::B),
                    reason: format!(
                        "undetectable-b: only {} distinct renderings",
                        lps.n_distinct()
                    ),
                });
            } else {
                let params = IForestParams {
                    n_trees: cfg.iforest.n_trees,
                    subsample: cfg.iforest.subsample,
                    seed: item_forest_seed(cfg.seed, &item.id),
                };
                let delta = cfg.delta.resolve(item.options.len());
                match detect_scenario_b(&lps, delta, &params) {
                    Ok(verdict) => {
                        tally_b.record(verdict.label);
                        verdicts.push(verdict);
                    }
                    Err(err) => skipped.push(SkippedItem {
                        item_id: item.id.clone(),
                        scenario: Some(Scenario::B),
                        reason: err.to_string(),
                    }),
                }
            }
        }
    }

    let summary = AuditSummary {
        model_id: scorer.model_id().to_string(),
        dataset: dataset.name().to_string(),
        dataset_fingerprint: dataset.fingerprint().to_string(),
        n_items: dataset.len() as u32,
        n_items_scored: n_scored,
        n_items_unscored: n_unscored,
        scenario_a: cfg.scenario.runs_a().then(|| tally_a.stats()),
        scenario_b: cfg.scenario.runs_b().then(|| tally_b.stats()),
        delta_policy: cfg.delta.describe(),
        seed: cfg.seed,
        template_hash: cfg.template.template_hash(),
        skipped,
        manifest_hash: None,
    };
    Ok(BatchOutcome { verdicts, summary })
}
