//! The gray-box scoring contract and per-item log-probability sets.
//!
//! A backend only has to return the sequence log-probability of a text;
//! no weights, gradients or training data are ever touched. [`score_item`]
//! turns one item into its per-permutation log-probability set, consulting
//! a cache before the backend and assembling entries in perm_id order no
//! matter how the backend answered.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{sha256_hex, McqItem};
use crate::permute::{derive_all, permutation_count, PermuteError, RenderTemplate};
use crate::rng::{fnv1a64, mix64, unit_open};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    #[error("cannot score empty text")]
    EmptyText,
    #[error("no tokens to score: prefix covers {prefix_bytes} of {text_bytes} bytes")]
    NothingToScore {
        prefix_bytes: usize,
        text_bytes: usize,
    },
    #[error("backend {model_id} returned a non-finite log probability for perm {perm_id}")]
    NonFinite { model_id: String, perm_id: u32 },
    #[error("backend transport failure: {message}")]
    Backend { message: String },
    #[error("malformed backend response: {message}")]
    MalformedResponse { message: String },
    #[error("token coverage mismatch: {message}")]
    TokenCoverage { message: String },
    #[error("score cache failure: {message}")]
    Cache { message: String },
    #[error(transparent)]
    Permute(#[from] PermuteError),
}

/// Whether the question tokens contribute to the score or only condition it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringMode {
    /// Sum over every token of the rendered text.
    WholeSequence,
    /// Sum only over tokens at or after the question prefix; the question
    /// is conditioning context.
    OptionsOnly,
}

impl ScoringMode {
    pub fn tag(self) -> &'static str {
        match self {
            ScoringMode::WholeSequence => "whole_sequence",
            ScoringMode::OptionsOnly => "options_only",
        }
    }
}

/// Length handling for the per-permutation value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthNorm {
    /// Raw sum of token log probabilities. Permutations of the same item
    /// have near-identical lengths, so the sum is the default.
    Sum,
    /// Sum divided by token count, for tokenizer-sensitivity studies.
    MeanPerToken,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreOptions {
    pub mode: ScoringMode,
    pub norm: LengthNorm,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        Self {
            mode: ScoringMode::WholeSequence,
            norm: LengthNorm::Sum,
        }
    }
}

/// Raw backend result for one text.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredText {
    /// Natural-log probability (sum over scored tokens).
    pub logprob: f64,
    pub token_count: u32,
    /// Echo-style APIs often omit the first token's log probability; it
    /// then contributes 0 and is flagged here. The offset is identical
    /// across permutations of an item, so comparisons stay fair.
    pub first_token_missing: bool,
}

/// Deterministic text scorer: same (model_id, text, prefix) must always
/// produce the same value, and values must be finite.
pub trait ScoringBackend {
    fn model_id(&self) -> &str;

    /// Score `text`; tokens starting before `prefix_bytes` only condition.
    fn score_text(&self, text: &str, prefix_bytes: usize) -> Result<ScoredText, ScoreError>;
}

/// Cache key: anything that can change a score participates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheKey {
    pub model_id: String,
    pub mode: ScoringMode,
    pub template_hash: String,
    pub text_hash: String,
}

impl CacheKey {
    pub fn new(model_id: &str, mode: ScoringMode, template_hash: &str, text: &str) -> Self {
        Self {
            model_id: model_id.to_string(),
            mode,
            template_hash: template_hash.to_string(),
            text_hash: text_sha256(text),
        }
    }

    /// Single stable digest used as the storage key.
    pub fn key_hash(&self) -> String {
        let mut bytes = Vec::new();
        for part in [
            self.model_id.as_str(),
            self.mode.tag(),
            self.template_hash.as_str(),
            self.text_hash.as_str(),
        ] {
            bytes.extend_from_slice(&(part.len() as u32).to_le_bytes());
            bytes.extend_from_slice(part.as_bytes());
        }
        sha256_hex(&bytes)
    }
}

pub fn text_sha256(text: &str) -> String {
    sha256_hex(text.as_bytes())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CachedScore {
    /// Raw un-normalized sum, so one cache entry serves every length norm.
    pub logprob: f64,
    pub token_count: u32,
}

/// Score store consulted before the backend. A hit must equal the value
/// originally stored; the cache must never change a verdict versus a cold
/// run.
pub trait ScoreCache {
    fn get(&self, key: &CacheKey) -> Option<CachedScore>;
    fn put(&mut self, key: &CacheKey, value: CachedScore) -> Result<(), ScoreError>;
}

/// No-op cache: every lookup misses.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoCache;

impl ScoreCache for NoCache {
    fn get(&self, _key: &CacheKey) -> Option<CachedScore> {
        None
    }

    fn put(&mut self, _key: &CacheKey, _value: CachedScore) -> Result<(), ScoreError> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogProbEntry {
    pub perm_id: u32,
    pub logprob: f64,
}

/// Per-item log probabilities over the distinct renderings, in perm_id
/// order. Duplicate renderings (possible with duplicate option contents)
/// would receive identical scores by definition, so they are collapsed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogProbSet {
    pub item_id: String,
    pub model_id: String,
    pub template_hash: String,
    pub mode: ScoringMode,
    pub norm: LengthNorm,
    /// Total permutations (n!), including collapsed duplicates.
    pub n_perms: u32,
    pub entries: Vec<LogProbEntry>,
}

impl LogProbSet {
    pub fn n_distinct(&self) -> u32 {
        self.entries.len() as u32
    }

    /// Entry for the identity permutation (perm_id 0), if present.
    pub fn identity_entry(&self) -> Option<&LogProbEntry> {
        self.entries.iter().find(|e| e.perm_id == 0)
    }

    /// Maximum-logprob entry; exact ties resolve to the smallest perm_id.
    pub fn max_entry(&self) -> Option<&LogProbEntry> {
        self.entries.iter().fold(None, |best, e| match best {
            None => Some(e),
            Some(b) => {
                if e.logprob > b.logprob {
                    Some(e)
                } else {
                    Some(b)
                }
            }
        })
    }
}

/// Score every distinct rendering of `item`, cache-first.
pub fn score_item(
    backend: &dyn ScoringBackend,
    item: &McqItem,
    template: &RenderTemplate,
    opts: ScoreOptions,
    cache: &mut dyn ScoreCache,
) -> Result<LogProbSet, ScoreError> {
    let derived = derive_all(item, template)?;
    let template_hash = template.template_hash();
    let prefix_bytes = match opts.mode {
        ScoringMode::WholeSequence => 0,
        ScoringMode::OptionsOnly => item.question.len(),
    };
    let mut entries = Vec::new();
    for d in derived.iter().filter(|d| d.distinct) {
        let key = CacheKey::new(backend.model_id(), opts.mode, &template_hash, &d.rendered);
        let cached = match cache.get(&key) {
            Some(hit) => hit,
            None => {
                let scored = backend.score_text(&d.rendered, prefix_bytes)?;
                let fresh = CachedScore {
                    logprob: scored.logprob,
                    token_count: scored.token_count,
                };
                cache.put(&key, fresh)?;
                fresh
            }
        };
        let logprob = match opts.norm {
            LengthNorm::Sum => cached.logprob,
            LengthNorm::MeanPerToken => {
                if cached.token_count == 0 {
                    return Err(ScoreError::NothingToScore {
                        prefix_bytes,
                        text_bytes: d.rendered.len(),
                    });
                }
                cached.logprob / f64::from(cached.token_count)
            }
        };
        if !logprob.is_finite() {
            return Err(ScoreError::NonFinite {
                model_id: backend.model_id().to_string(),
                perm_id: d.perm.perm_id(),
            });
        }
        entries.push(LogProbEntry {
            perm_id: d.perm.perm_id(),
            logprob,
        });
    }
    Ok(LogProbSet {
        item_id: item.id.clone(),
        model_id: backend.model_id().to_string(),
        template_hash,
        mode: opts.mode,
        norm: opts.norm,
        n_perms: permutation_count(item.options.len())?,
        entries,
    })
}

/// Anything that can produce a [`LogProbSet`] for an item. Lets callers
/// swap the sequential cache-first path for a concurrent one without the
/// detection layer noticing.
pub trait ItemScorer {
    fn model_id(&self) -> &str;

    fn score_item(
        &mut self,
        item: &McqItem,
        template: &RenderTemplate,
        opts: ScoreOptions,
    ) -> Result<LogProbSet, ScoreError>;
}

/// Straightforward one-permutation-at-a-time scorer.
pub struct SequentialScorer<'a> {
    pub backend: &'a dyn ScoringBackend,
    pub cache: &'a mut dyn ScoreCache,
}

impl ItemScorer for SequentialScorer<'_> {
    fn model_id(&self) -> &str {
        self.backend.model_id()
    }

    fn score_item(
        &mut self,
        item: &McqItem,
        template: &RenderTemplate,
        opts: ScoreOptions,
    ) -> Result<LogProbSet, ScoreError> {
        score_item(self.backend, item, template, opts, self.cache)
    }
}

/// Deterministic pseudo-random scorer: the score is a pure hash of the
/// text. Permutation-exchangeable by construction, which makes it the
/// null model for false-positive calibration (an uncontaminated model has
/// no reason to prefer any option order).
#[derive(Debug, Clone)]
pub struct HashScorer {
    seed: u64,
    id: String,
}

impl HashScorer {
    pub fn new(seed: u64) -> Self {
        let mut id = String::from("null:");
        id.push_str(&seed.to_string());
        Self { seed, id }
    }
}

impl ScoringBackend for HashScorer {
    fn model_id(&self) -> &str {
        &self.id
    }

    fn score_text(&self, text: &str, prefix_bytes: usize) -> Result<ScoredText, ScoreError> {
        if text.is_empty() {
            return Err(ScoreError::EmptyText);
        }
        let scored_bytes = text.len().saturating_sub(prefix_bytes);
        if scored_bytes == 0 {
            return Err(ScoreError::NothingToScore {
                prefix_bytes,
                text_bytes: text.len(),
            });
        }
        let u = unit_open(mix64(self.seed ^ fnv1a64(text.as_bytes())));
        Ok(ScoredText {
            logprob: -(scored_bytes as f64) * (1.0 + 0.1 * u),
            token_count: scored_bytes as u32,
            first_token_missing: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::borrow::ToOwned;
    use alloc::collections::BTreeMap;
    use alloc::rc::Rc;
    use alloc::vec;
    use core::cell::Cell;

    use crate::ngram::{NGramModel, TokenMode};

    fn item(id: &str, options: &[&str]) -> McqItem {
        McqItem::new(
            id.to_owned(),
            "Which is it?".to_owned(),
            options.iter().map(|s| (*s).to_owned()).collect(),
            None,
            BTreeMap::new(),
        )
        .unwrap()
    }

    struct CountingBackend<'a> {
        inner: &'a NGramModel,
        calls: Rc<Cell<u32>>,
    }

    impl ScoringBackend for CountingBackend<'_> {
        fn model_id(&self) -> &str {
            self.inner.model_id()
        }

        fn score_text(&self, text: &str, prefix_bytes: usize) -> Result<ScoredText, ScoreError> {
            self.calls.set(self.calls.get() + 1);
            self.inner.score_text(text, prefix_bytes)
        }
    }

    #[derive(Default)]
    struct MapCache {
        map: BTreeMap<String, CachedScore>,
    }

    impl ScoreCache for MapCache {
        fn get(&self, key: &CacheKey) -> Option<CachedScore> {
            self.map.get(&key.key_hash()).copied()
        }

        fn put(&mut self, key: &CacheKey, value: CachedScore) -> Result<(), ScoreError> {
            self.map.insert(key.key_hash(), value);
            Ok(())
        }
    }

    #[test]
    fn cold_cache_calls_backend_once_per_distinct_rendering() {
        let model = NGramModel::untrained(3, 0.5, TokenMode::Byte).unwrap();
        let calls = Rc::new(Cell::new(0));
        let backend = CountingBackend {
            inner: &model,
            calls: calls.clone(),
        };
        let mut cache = MapCache::default();
        let it = item("a", &["w", "x", "y", "z"]);
        let lps = score_item(
            &backend,
            &it,
            &RenderTemplate::default(),
            ScoreOptions::default(),
            &mut cache,
        )
        .unwrap();
        assert_eq!(calls.get(), 24);
        assert_eq!(lps.entries.len(), 24);
        assert_eq!(lps.n_perms, 24);

        // Warm cache: zero backend calls, identical set.
        let again = score_item(
            &backend,
            &it,
            &RenderTemplate::default(),
            ScoreOptions::default(),
            &mut cache,
        )
        .unwrap();
        assert_eq!(calls.get(), 24);
        assert_eq!(again, lps);
    }

    #[test]
    fn duplicate_renderings_are_scored_once() {
        let model = NGramModel::untrained(3, 0.5, TokenMode::Byte).unwrap();
        let calls = Rc::new(Cell::new(0));
        let backend = CountingBackend {
            inner: &model,
            calls: calls.clone(),
        };
        let it = item("a", &["a", "a", "b", "c"]);
        let lps = score_item(
            &backend,
            &it,
            &RenderTemplate::default(),
            ScoreOptions::default(),
            &mut NoCache,
        )
        .unwrap();
        assert_eq!(lps.entries.len(), 12);
        assert_eq!(calls.get(), 12);
        assert_eq!(lps.n_perms, 24);
        assert_eq!(lps.entries[0].perm_id, 0);
    }

    #[test]
    fn entries_are_in_perm_id_order() {
        let model = NGramModel::untrained(2, 0.1, TokenMode::Byte).unwrap();
        let it = item("a", &["w", "x", "y"]);
        let lps = score_item(
            &model,
            &it,
            &RenderTemplate::default(),
            ScoreOptions::default(),
            &mut NoCache,
        )
        .unwrap();
        let ids: Vec<u32> = lps.entries.iter().map(|e| e.perm_id).collect();
        assert_eq!(ids, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn mean_per_token_divides_by_token_count() {
        let model = NGramModel::untrained(2, 0.1, TokenMode::Byte).unwrap();
        let it = item("a", &["w", "x"]);
        let sum = score_item(
            &model,
            &it,
            &RenderTemplate::default(),
            ScoreOptions::default(),
            &mut NoCache,
        )
        .unwrap();
        let mean = score_item(
            &model,
            &it,
            &RenderTemplate::default(),
            ScoreOptions {
                mode: ScoringMode::WholeSequence,
                norm: LengthNorm::MeanPerToken,
            },
            &mut NoCache,
        )
        .unwrap();
        let text_len = "Which is it? A: w B: x".len() as f64;
        assert!((mean.entries[0].logprob - sum.entries[0].logprob / text_len).abs() < 1e-12);
    }

    #[test]
    fn options_only_mode_uses_question_as_prefix() {
        let model = NGramModel::untrained(2, 0.1, TokenMode::Byte).unwrap();
        let it = item("a", &["w", "x"]);
        let lps = score_item(
            &model,
            &it,
            &RenderTemplate::default(),
            ScoreOptions {
                mode: ScoringMode::OptionsOnly,
                norm: LengthNorm::Sum,
            },
            &mut NoCache,
        )
        .unwrap();
        // Uniform model: options-only score counts only the suffix bytes.
        let suffix_len = " A: w B: x".len() as f64;
        let expected = suffix_len * (1.0f64 / 256.0).ln();
        assert!((lps.entries[0].logprob - expected).abs() < 1e-9);
    }

    #[test]
    fn max_entry_breaks_ties_toward_smallest_perm_id() {
        let lps = LogProbSet {
            item_id: "a".to_owned(),
            model_id: "m".to_owned(),
            template_hash: "t".to_owned(),
            mode: ScoringMode::WholeSequence,
            norm: LengthNorm::Sum,
            n_perms: 24,
            entries: vec![
                LogProbEntry {
                    perm_id: 0,
                    logprob: -5.0,
                },
                LogProbEntry {
                    perm_id: 3,
                    logprob: -2.0,
                },
                LogProbEntry {
                    perm_id: 7,
                    logprob: -2.0,
                },
            ],
        };
        assert_eq!(lps.max_entry().unwrap().perm_id, 3);
        assert_eq!(lps.identity_entry().unwrap().perm_id, 0);
    }

    #[test]
    fn five_option_items_score_one_hundred_twenty_entries() {
        let model = NGramModel::untrained(2, 0.1, TokenMode::Byte).unwrap();
        let it = item("five", &["v", "w", "x", "y", "z"]);
        let lps = score_item(
            &model,
            &it,
            &RenderTemplate::default(),
            ScoreOptions::default(),
            &mut NoCache,
        )
        .unwrap();
        assert_eq!(lps.n_perms, 120);
        assert_eq!(lps.entries.len(), 120);
        assert_eq!(lps.entries[0].perm_id, 0);
        assert_eq!(lps.entries[119].perm_id, 119);
    }

    #[test]
    fn hash_scorer_is_deterministic_and_text_sensitive() {
        let s = HashScorer::new(9);
        let a = s.score_text("abc", 0).unwrap();
        let b = s.score_text("abc", 0).unwrap();
        let c = s.score_text("abd", 0).unwrap();
        assert_eq!(a.logprob.to_bits(), b.logprob.to_bits());
        assert_ne!(a.logprob.to_bits(), c.logprob.to_bits());
        assert!(a.logprob < 0.0);
    }

    #[test]
    fn cache_key_covers_model_mode_template_text() {
        let base = CacheKey::new("m1", ScoringMode::WholeSequence, "tpl", "text");
        let other_model = CacheKey::new("m2", ScoringMode::WholeSequence, "tpl", "text");
        let other_mode = CacheKey::new("m1", ScoringMode::OptionsOnly, "tpl", "text");
        let other_tpl = CacheKey::new("m1", ScoringMode::WholeSequence, "tpl2", "text");
        let other_text = CacheKey::new("m1", ScoringMode::WholeSequence, "tpl", "text2");
        let hashes = [
            base.key_hash(),
            other_model.key_hash(),
            other_mode.key_hash(),
            other_tpl.key_hash(),
            other_text.key_hash(),
        ];
        for i in 0..hashes.len() {
            for j in i + 1..hashes.len() {
                assert_ne!(hashes[i], hashes[j]);
            }
        }
    }
}
