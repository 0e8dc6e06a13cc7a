//! Controlled contamination experiments against the built-in n-gram
//! oracle.
//!
//! The protocol: split a dataset into a contaminated half and a clean
//! half, train the oracle on the contaminated renderings with a given
//! repetition weight (the count-model analog of training epochs), score
//! every item's permutations, run the detectors, and report
//! accuracy/precision/recall/F1 against the known split — across a grid
//! of repetition weights and thresholds.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::detect::{
    detect_scenario_a, item_forest_seed, outlier_profile, validate_delta,
    verdict_from_outlier_profile, DetectError, IForestConfig, Scenario, ScenarioChoice,
};
use crate::iforest::IForestParams;
use crate::metrics::{compute_metrics, Metrics, MetricsError};
use crate::ngram::{NGramError, NGramModel, TokenMode};
use crate::permute::{permutation_count, render, Permutation, PermuteError, RenderTemplate};
use crate::rng::{derive_seed, SplitMix64};
use crate::scoring::{score_item, NoCache, ScoreError, ScoreOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error("contaminated fraction must be in (0, 1) (got {fraction})")]
    InvalidFraction { fraction: f64 },
    #[error("fraction {fraction} leaves an empty {side} side for {n_items} items")]
    EmptySide {
        fraction: f64,
        n_items: usize,
        side: &'static str,
    },
    #[error("repetition grid is empty")]
    EmptyGrid,
    #[error("scenario b requested but no thresholds were given")]
    NoDeltas,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Permute(#[from] PermuteError),
    #[error(transparent)]
    NGram(#[from] NGramError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// How contaminated items are rendered into the training corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShuffleMode {
    /// Original option order: ground truth for the scenario A rule.
    None,
    /// A seeded random permutation per item: ground truth for scenario B.
    RandomPerm,
}

/// One contamination run: which half leaks, how often, in what order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContaminationPlan {
    /// Fraction of items that leak into training (0, 1).
    pub fraction: f64,
    /// Repetition weight for each contaminated text; 0 means nothing is
    /// contaminated and every label is negative.
    pub repetitions: u32,
    pub shuffle: ShuffleMode,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedText {
    pub text: String,
    pub weight: u32,
}

/// Output of [`build_contaminated_corpus`].
#[derive(Debug, Clone, PartialEq)]
pub struct ContaminatedCorpus {
    /// Contaminated renderings with their repetition weights.
    pub texts: Vec<WeightedText>,
    /// item id -> truly contaminated. All false when repetitions == 0.
    pub labels: BTreeMap<String, bool>,
    /// item id -> perm_id the training text used (contaminated items).
    pub training_perm: BTreeMap<String, u32>,
}

/// Select the contaminated subset and render its training texts.
///
/// Selection and per-item training permutations are fully determined by
/// `plan.seed`, so a run can be reproduced from its manifest.
pub fn build_contaminated_corpus(
    dataset: &Dataset,
    plan: &ContaminationPlan,
    template: &RenderTemplate,
) -> Result<ContaminatedCorpus, ExperimentError> {
    if dataset.is_empty() {
        return Err(ExperimentError::EmptyDataset);
    }
    if !plan.fraction.is_finite() || plan.fraction <= 0.0 || plan.fraction >= 1.0 {
        return Err(ExperimentError::InvalidFraction {
            fraction: plan.fraction,
        });
    }
    let n = dataset.len();
    let n_contaminated = libm::round(plan.fraction * n as f64) as usize;
    if n_contaminated == 0 {
        return Err(ExperimentError::EmptySide {
            fraction: plan.fraction,
            n_items: n,
            side: "contaminated",
        });
    }
    if n_contaminated >= n {
        return Err(ExperimentError::EmptySide {
            fraction: plan.fraction,
            n_items: n,
            side: "clean",
        });
    }

    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = SplitMix64::new(derive_seed(plan.seed, b"contaminate-select", 0));
    for i in 0..n {
        let j = i + rng.next_below((n - i) as u64) as usize;
        indices.swap(i, j);
    }
    let mut contaminated = alloc::vec![false; n];
    for &i in &indices[..n_contaminated] {
        contaminated[i] = true;
    }

    let mut texts = Vec::with_capacity(n_contaminated);
    let mut labels = BTreeMap::new();
    let mut training_perm = BTreeMap::new();
    for (idx, item) in dataset.items().iter().enumerate() {
        let positive = contaminated[idx] && plan.repetitions > 0;
        labels.insert(item.id.clone(), positive);
        if !contaminated[idx] {
            continue;
        }
        let n_opts = item.options.len();
        let perm = match plan.shuffle {
            ShuffleMode::None => Permutation::identity(n_opts)?,
            ShuffleMode::RandomPerm => {
                let mut perm_rng =
                    SplitMix64::new(derive_seed(plan.seed, b"contaminate-perm", idx as u64));
                let rank = perm_rng.next_below(u64::from(permutation_count(n_opts)?)) as u32;
                Permutation::unrank(n_opts, rank)?
            }
        };
        training_perm.insert(item.id.clone(), perm.perm_id());
        texts.push(WeightedText {
            text: render(item, &perm, template)?.text,
            weight: plan.repetitions,
        });
    }
    Ok(ContaminatedCorpus {
        texts,
        labels,
        training_perm,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub fraction: f64,
    pub repetitions_grid: Vec<u32>,
    pub shuffle: ShuffleMode,
    pub scenario: ScenarioChoice,
    /// Scenario B thresholds; one metrics row per (delta, repetitions).
    pub deltas: Vec<f64>,
    pub k: usize,
    pub alpha: f64,
    pub token_mode: TokenMode,
    pub template: RenderTemplate,
    pub score: ScoreOptions,
    pub iforest: IForestConfig,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            fraction: 0.5,
            repetitions_grid: alloc::vec![1, 2, 3, 5, 10],
            shuffle: ShuffleMode::None,
            scenario: ScenarioChoice::A,
            deltas: alloc::vec![-0.20],
            k: 5,
            alpha: 0.1,
            token_mode: TokenMode::Byte,
            template: RenderTemplate::default(),
            score: ScoreOptions::default(),
            iforest: IForestConfig::default(),
            seed: 0,
        }
    }
}

/// One metrics row of the result grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub scenario: Scenario,
    /// Threshold used (scenario B rows only).
    pub delta: Option<f64>,
    pub repetitions: u32,
    pub metrics: Metrics,
}

/// Run the full contaminate/train/score/detect/evaluate loop over the
/// repetition grid. Scenario A rows come first (by repetitions), then
/// scenario B rows grouped by delta.
pub fn run_experiment(
    dataset: &Dataset,
    cfg: &ExperimentConfig,
) -> Result<Vec<ExperimentRow>, ExperimentError> {
    if dataset.is_empty() {
        return Err(ExperimentError::EmptyDataset);
    }
    if cfg.repetitions_grid.is_empty() {
        return Err(ExperimentError::EmptyGrid);
    }
    if cfg.scenario.runs_b() {
        if cfg.deltas.is_empty() {
            return Err(ExperimentError::NoDeltas);
        }
        for &delta in &cfg.deltas {
            validate_delta(delta)?;
        }
    }

    // The oracle also sees every question once, options excluded, so the
    // clean half is not scored by a vacuously uniform model.
    let background: Vec<(&str, u32)> = dataset
        .items()
        .iter()
        .map(|item| (item.question.as_str(), 1))
        .collect();

    let mut rows_a = Vec::new();
    let mut rows_b: BTreeMap<u64, Vec<ExperimentRow>> = BTreeMap::new();

    for &repetitions in &cfg.repetitions_grid {
        let plan = ContaminationPlan {
            fraction: cfg.fraction,
            repetitions,
            shuffle: cfg.shuffle,
            seed: cfg.seed,
        };
        let corpus = build_contaminated_corpus(dataset, &plan, &cfg.template)?;

        let mut training: Vec<(&str, u32)> = corpus
            .texts
            .iter()
            .map(|wt| (wt.text.as_str(), wt.weight))
            .collect();
        training.extend_from_slice(&background);
        let model = NGramModel::train(&training, cfg.k, cfg.alpha, cfg.token_mode)?;

        let mut predictions_a: BTreeMap<String, bool> = BTreeMap::new();
        let mut predictions_b: BTreeMap<u64, BTreeMap<String, bool>> = BTreeMap::new();

        for item in dataset.items() {
            let lps = score_item(&model, item, &cfg.template, cfg.score, &mut NoCache)?;
            if cfg.scenario.runs_a() {
                let verdict = detect_scenario_a(&lps)?;
                predictions_a.insert(item.id.clone(), verdict.label.is_leaked());
            }
            if cfg.scenario.runs_b() {
                let params = IForestParams {
                    n_trees: cfg.iforest.n_trees,
                    subsample: cfg.iforest.subsample,
                    seed: item_forest_seed(cfg.seed, &item.id),
                };
                let profile = outlier_profile(&lps, &params)?;
                for &delta in &cfg.deltas {
                    let verdict = verdict_from_outlier_profile(&profile, delta)?;
                    predictions_b
                        .entry(delta.to_bits())
                        .or_default()
                        .insert(item.id.clone(), verdict.label.is_leaked());
                }
            }
        }

        if cfg.scenario.runs_a() {
            rows_a.push(ExperimentRow {
                scenario: Scenario::A,
                delta: None,
                repetitions,
                metrics: compute_metrics(&predictions_a, &corpus.labels)?,
            });
        }
        if cfg.scenario.runs_b() {
            for &delta in &cfg.deltas {
                let preds = &predictions_b[&delta.to_bits()];
                rows_b
                    .entry(delta.to_bits())
                    .or_default()
                    .push(ExperimentRow {
                        scenario: Scenario::B,
                        delta: Some(delta),
                        repetitions,
                        metrics: compute_metrics(preds, &corpus.labels)?,
                    });
            }
        }
    }

    let mut rows = rows_a;
    for &delta in &cfg.deltas {
        if let Some(batch) = rows_b.remove(&delta.to_bits()) {
            rows.extend(batch);
        }
    }
    Ok(rows)
}
