//! Core primitives for auditing multiple-choice benchmarks for
//! training-data leakage in language models.
//!
//! The probe: swapping option contents does not change what a question
//! means, so an unleaked model has no reason to strongly prefer one
//! option order. Each item is expanded into its n! permutation renderings
//! ([`permute`]), every rendering is scored for sequence log probability
//! under a gray-box backend ([`scoring`]), and leakage is decided either
//! by the original-order-is-max rule or by an isolation-forest outlier
//! test on the maximum ([`detect`], [`iforest`]).
//!
//! Everything in this crate is deterministic pure computation and
//! `no_std`-compatible (alloc required). File formats, the HTTP backend,
//! the score cache journal and the CLI live in the companion `benchleak`
//! crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod dataset;
pub mod detect;
pub mod experiment;
pub mod iforest;
pub mod leaderboard;
pub mod metrics;
pub mod ngram;
pub mod permute;
pub mod rng;
pub mod scoring;

pub use dataset::{Dataset, DatasetError, McqItem};
pub use detect::{
    detect_batch, detect_scenario_a, detect_scenario_b, AuditSummary, BatchConfig, BatchOutcome,
    DeltaPolicy, DetectError, Label, Scenario, ScenarioChoice, Verdict,
};
pub use experiment::{run_experiment, ExperimentConfig, ExperimentError, ExperimentRow};
pub use iforest::{IForestParams, IsolationForest};
pub use leaderboard::{build_leaderboard, build_profile, LeaderboardRow, PermProfile};
pub use metrics::{compute_metrics, Metrics};
pub use ngram::{NGramModel, TokenMode};
pub use permute::{derive_all, enumerate_permutations, Permutation, RenderTemplate};
pub use scoring::{
    score_item, HashScorer, ItemScorer, LogProbSet, ScoreCache, ScoreError, ScoreOptions,
    ScoringBackend, ScoringMode, SequentialScorer,
};
