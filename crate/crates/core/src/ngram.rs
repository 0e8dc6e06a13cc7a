//! Additive-smoothed n-gram language model.
//!
//! Serves as the in-process scoring backend: cheap to train, fully
//! deterministic, and memorizes repeated texts the way a continually
//! trained model does, which is exactly the behaviour the detectors probe
//! for. Counting is weighted, so "training a text r times" is a weight of
//! r rather than r passes.
//!
//! Tokens near the start of a text are conditioned on however much prefix
//! exists (contexts shorter than k-1 are their own keys), which makes the
//! chain rule hold exactly: score(full) = score(prefix) + score(rest |
//! prefix).

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::sha256_hex;
use crate::scoring::{ScoreError, ScoredText, ScoringBackend};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NGramError {
    #[error("n-gram order k must be >= 1 (got {k})")]
    InvalidOrder { k: usize },
    #[error("smoothing alpha must be > 0 and finite (got {alpha})")]
    InvalidAlpha { alpha: f64 },
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("empty effective corpus: every text has repetition weight 0")]
    EmptyEffectiveCorpus,
    #[error("unsupported model format {found:?} (expected {expected:?})")]
    UnsupportedFormat { found: String, expected: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenMode {
    /// Raw UTF-8 bytes; vocabulary is fixed at 256, no tokenizer involved.
    Byte,
    /// Whitespace-separated words; unseen words map to a reserved unknown
    /// id, vocabulary size is frozen at training time.
    Word,
}

type Token = u32;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
struct ContextCounts {
    total: u64,
    counts: BTreeMap<Token, u64>,
}

const FORMAT: &str = "benchleak.ngram.v1";

/// Order-k model: each token is predicted from up to k-1 preceding tokens
/// with additive-alpha smoothing, so per-context probabilities sum to 1
/// over the fixed vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    k: usize,
    alpha: f64,
    token_mode: TokenMode,
    /// Sorted word vocabulary (word mode only); the unknown id is
    /// `vocab.len()`.
    vocab: Vec<String>,
    contexts: BTreeMap<Vec<Token>, ContextCounts>,
    model_id: String,
}

impl NGramModel {
    /// A model with no counts: scores every byte text at L * ln(1/256).
    pub fn untrained(k: usize, alpha: f64, token_mode: TokenMode) -> Result<Self, NGramError> {
        validate_params(k, alpha)?;
        Ok(Self::assemble(
            k,
            alpha,
            token_mode,
            Vec::new(),
            BTreeMap::new(),
        ))
    }

    /// Train from `(text, repetition_weight)` pairs. Counts reflect each
    /// text `weight` times; no randomness is involved.
    pub fn train(
        corpus: &[(&str, u32)],
        k: usize,
        alpha: f64,
        token_mode: TokenMode,
    ) -> Result<Self, NGramError> {
        validate_params(k, alpha)?;
        if corpus.is_empty() {
            return Err(NGramError::EmptyCorpus);
        }
        if corpus.iter().all(|(_, w)| *w == 0) {
            return Err(NGramError::EmptyEffectiveCorpus);
        }

        let vocab = match token_mode {
            TokenMode::Byte => Vec::new(),
            TokenMode::Word => {
                let mut words: BTreeSet<String> = BTreeSet::new();
                for (text, weight) in corpus {
                    if *weight == 0 {
                        continue;
                    }
                    for (_, word) in words_with_offsets(text) {
                        words.insert(word.to_string());
                    }
                }
                words.into_iter().collect()
            }
        };

        let mut contexts: BTreeMap<Vec<Token>, ContextCounts> = BTreeMap::new();
        for (text, weight) in corpus {
            if *weight == 0 {
                continue;
            }
            let tokens = tokenize(text, token_mode, &vocab);
            let weight = u64::from(*weight);
            for i in 0..tokens.len() {
                let start = i.saturating_sub(k - 1);
                let ctx = tokens[start..i].to_vec();
                let entry = contexts.entry(ctx).or_default();
                entry.total += weight;
                *entry.counts.entry(tokens[i]).or_insert(0) += weight;
            }
        }
        Ok(Self::assemble(k, alpha, token_mode, vocab, contexts))
    }

    fn assemble(
        k: usize,
        alpha: f64,
        token_mode: TokenMode,
        vocab: Vec<String>,
        contexts: BTreeMap<Vec<Token>, ContextCounts>,
    ) -> Self {
        let mut model = Self {
            k,
            alpha,
            token_mode,
            vocab,
            contexts,
            model_id: String::new(),
        };
        model.model_id = model.content_id();
        model
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn token_mode(&self) -> TokenMode {
        self.token_mode
    }

    /// Smoothing denominator vocabulary size: 256 for bytes, trained
    /// vocabulary plus the unknown id for words.
    pub fn vocab_size(&self) -> u64 {
        match self.token_mode {
            TokenMode::Byte => 256,
            TokenMode::Word => self.vocab.len() as u64 + 1,
        }
    }

    /// Raw count for a (context, token) pair; used by tests and tooling.
    pub fn count(&self, context: &[Token], token: Token) -> u64 {
        self.contexts
            .get(context)
            .and_then(|c| c.counts.get(&token).copied())
            .unwrap_or(0)
    }

    fn log_prob(&self, context: &[Token], token: Token) -> f64 {
        let vocab = self.vocab_size() as f64;
        let (count, total) = match self.contexts.get(context) {
            Some(entry) => (
                entry.counts.get(&token).copied().unwrap_or(0) as f64,
                entry.total as f64,
            ),
            None => (0.0, 0.0),
        };
        libm::log((count + self.alpha) / (total + self.alpha * vocab))
    }

    /// Sum of token log-probabilities, skipping tokens that start before
    /// `prefix_bytes` (they act as conditioning context only).
    fn score_tokens(&self, text: &str, prefix_bytes: usize) -> Result<ScoredText, ScoreError> {
        if text.is_empty() {
            return Err(ScoreError::EmptyText);
        }
        let (tokens, offsets) = tokenize_with_offsets(text, self.token_mode, &self.vocab);
        let mut logprob = 0.0;
        let mut token_count = 0u32;
        for i in 0..tokens.len() {
            if offsets[i] < prefix_bytes {
                continue;
            }
            let start = i.saturating_sub(self.k - 1);
            logprob += self.log_prob(&tokens[start..i], tokens[i]);
            token_count += 1;
        }
        if token_count == 0 {
            return Err(ScoreError::NothingToScore {
                prefix_bytes,
                text_bytes: text.len(),
            });
        }
        Ok(ScoredText {
            logprob,
            token_count,
            first_token_missing: false,
        })
    }

    fn content_id(&self) -> String {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(FORMAT.as_bytes());
        bytes.extend_from_slice(&(self.k as u32).to_le_bytes());
        bytes.extend_from_slice(&self.alpha.to_bits().to_le_bytes());
        bytes.push(match self.token_mode {
            TokenMode::Byte => 0,
            TokenMode::Word => 1,
        });
        bytes.extend_from_slice(&(self.vocab.len() as u32).to_le_bytes());
        for word in &self.vocab {
            bytes.extend_from_slice(&(word.len() as u32).to_le_bytes());
            bytes.extend_from_slice(word.as_bytes());
        }
        bytes.extend_from_slice(&(self.contexts.len() as u64).to_le_bytes());
        for (ctx, entry) in &self.contexts {
            bytes.extend_from_slice(&(ctx.len() as u32).to_le_bytes());
            for t in ctx {
                bytes.extend_from_slice(&t.to_le_bytes());
            }
            bytes.extend_from_slice(&entry.total.to_le_bytes());
            bytes.extend_from_slice(&(entry.counts.len() as u32).to_le_bytes());
            for (t, c) in &entry.counts {
                bytes.extend_from_slice(&t.to_le_bytes());
                bytes.extend_from_slice(&c.to_le_bytes());
            }
        }
        let mut id = String::from("ngram:");
        id.push_str(&sha256_hex(&bytes)[..16]);
        id
    }
}

impl ScoringBackend for NGramModel {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn score_text(&self, text: &str, prefix_bytes: usize) -> Result<ScoredText, ScoreError> {
        self.score_tokens(text, prefix_bytes)
    }
}

fn validate_params(k: usize, alpha: f64) -> Result<(), NGramError> {
    if k < 1 {
        return Err(NGramError::InvalidOrder { k });
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(NGramError::InvalidAlpha { alpha });
    }
    Ok(())
}

fn words_with_offsets(text: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for (i, ch) in text.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                out.push((s, &text[s..i]));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push((s, &text[s..]));
    }
    out
}

fn tokenize(text: &str, mode: TokenMode, vocab: &[String]) -> Vec<Token> {
    tokenize_with_offsets(text, mode, vocab).0
}

fn tokenize_with_offsets(
    text: &str,
    mode: TokenMode,
    vocab: &[String],
) -> (Vec<Token>, Vec<usize>) {
    match mode {
        TokenMode::Byte => (
            text.bytes().map(Token::from).collect(),
            (0..text.len()).collect(),
        ),
        TokenMode::Word => {
            let unk = vocab.len() as Token;
            let mut tokens = Vec::new();
            let mut offsets = Vec::new();
            for (offset, word) in words_with_offsets(text) {
                let token = vocab
                    .binary_search_by(|w| w.as_str().cmp(word))
                    .map(|i| i as Token)
                    .unwrap_or(unk);
                tokens.push(token);
                offsets.push(offset);
            }
            (tokens, offsets)
        }
    }
}

// Serialized form: versioned, map-free so it round-trips through JSON
// without string-keyed gymnastics. Counts are exact integers and alpha is
// an f64, so a reload is bit-exact.

#[derive(Serialize, Deserialize)]
struct ContextRepr {
    ctx: Vec<Token>,
    total: u64,
    counts: Vec<(Token, u64)>,
}

#[derive(Serialize, Deserialize)]
struct ModelRepr {
    format: String,
    k: usize,
    alpha: f64,
    token_mode: TokenMode,
    vocab: Vec<String>,
    contexts: Vec<ContextRepr>,
}

impl Serialize for NGramModel {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let repr = ModelRepr {
            format: FORMAT.to_string(),
            k: self.k,
            alpha: self.alpha,
            token_mode: self.token_mode,
            vocab: self.vocab.clone(),
            contexts: self
                .contexts
                .iter()
                .map(|(ctx, entry)| ContextRepr {
                    ctx: ctx.clone(),
                    total: entry.total,
                    counts: entry.counts.iter().map(|(t, c)| (*t, *c)).collect(),
                })
                .collect(),
        };
        repr.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for NGramModel {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = ModelRepr::deserialize(deserializer)?;
        if repr.format != FORMAT {
            return Err(serde::de::Error::custom(NGramError::UnsupportedFormat {
                found: repr.format,
                expected: FORMAT.to_string(),
            }));
        }
        validate_params(repr.k, repr.alpha).map_err(serde::de::Error::custom)?;
        let contexts = repr
            .contexts
            .into_iter()
            .map(|c| {
                (
                    c.ctx,
                    ContextCounts {
                        total: c.total,
                        counts: c.counts.into_iter().collect(),
                    },
                )
            })
            .collect();
        Ok(Self::assemble(
            repr.k,
            repr.alpha,
            repr.token_mode,
            repr.vocab,
            contexts,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn counting_respects_repetition_weights() {
        let model = NGramModel::train(&[("ab", 3)], 2, 0.1, TokenMode::Byte).unwrap();
        assert_eq!(model.count(&[u32::from(b'a')], u32::from(b'b')), 3);
        assert_eq!(model.count(&[], u32::from(b'a')), 3);
    }

    #[test]
    fn all_zero_weights_is_an_error() {
        assert_eq!(
            NGramModel::train(&[("ab", 0), ("cd", 0)], 2, 0.1, TokenMode::Byte).unwrap_err(),
            NGramError::EmptyEffectiveCorpus
        );
        assert_eq!(
            NGramModel::train(&[], 2, 0.1, TokenMode::Byte).unwrap_err(),
            NGramError::EmptyCorpus
        );
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(NGramModel::train(&[("ab", 1)], 0, 0.1, TokenMode::Byte).is_err());
        assert!(NGramModel::train(&[("ab", 1)], 2, 0.0, TokenMode::Byte).is_err());
        assert!(NGramModel::untrained(2, -1.0, TokenMode::Byte).is_err());
    }

    #[test]
    fn hand_computed_smoothing_oracle() {
        // Trained solely on "abab" with k=2, byte tokens, alpha=1.
        // Counts: ctx [] -> a:1 (total 1); ctx [a] -> b:2 (total 2);
        //         ctx [b] -> a:1 (total 1).
        // score("ab") = ln((1+1)/(1+256)) + ln((2+1)/(2+256)).
        let model = NGramModel::train(&[("abab", 1)], 2, 1.0, TokenMode::Byte).unwrap();
        let expected = (2.0f64 / 257.0).ln() + (3.0f64 / 258.0).ln();
        let got = model.score_text("ab", 0).unwrap();
        assert!((got.logprob - expected).abs() < 1e-12);
        assert_eq!(got.token_count, 2);
    }

    #[test]
    fn untrained_byte_model_scores_uniformly() {
        let model = NGramModel::untrained(5, 0.1, TokenMode::Byte).unwrap();
        let text = "any text at all";
        let expected = text.len() as f64 * (1.0f64 / 256.0).ln();
        let got = model.score_text(text, 0).unwrap();
        assert!((got.logprob - expected).abs() < 1e-9);
    }

    #[test]
    fn training_on_a_text_raises_its_score() {
        let text = "Q A: w B: x C: y D: z";
        let untrained = NGramModel::untrained(5, 0.1, TokenMode::Byte).unwrap();
        let trained = NGramModel::train(&[(text, 3)], 5, 0.1, TokenMode::Byte).unwrap();
        let before = untrained.score_text(text, 0).unwrap().logprob;
        let after = trained.score_text(text, 0).unwrap().logprob;
        assert!(after > before);
    }

    #[test]
    fn repeated_training_never_lowers_the_trained_text_score() {
        let text = "the quick brown fox jumps over the lazy dog";
        let background = "some other background text with shared words like the and fox";
        let mut previous = f64::NEG_INFINITY;
        for reps in [1u32, 2, 3, 5, 10, 50] {
            let model =
                NGramModel::train(&[(text, reps), (background, 1)], 5, 0.1, TokenMode::Byte)
                    .unwrap();
            let score = model.score_text(text, 0).unwrap().logprob;
            assert!(
                score >= previous - 1e-9,
                "score regressed at reps={reps}: {score} < {previous}"
            );
            previous = score;
        }
    }

    #[test]
    fn options_only_equals_chain_rule_difference() {
        let question = "What color is the sky on a clear day?";
        let full = "What color is the sky on a clear day? A: blue B: green C: red D: black";
        let model =
            NGramModel::train(&[(full, 2), (question, 1)], 5, 0.1, TokenMode::Byte).unwrap();
        let whole = model.score_text(full, 0).unwrap().logprob;
        let prefix = model.score_text(question, 0).unwrap().logprob;
        let options_only = model.score_text(full, question.len()).unwrap();
        assert!((options_only.logprob - (whole - prefix)).abs() < 1e-9);
        assert_eq!(
            options_only.token_count as usize,
            full.len() - question.len()
        );
    }

    #[test]
    fn word_mode_counts_and_unknowns() {
        let model = NGramModel::train(&[("red green red", 1)], 2, 0.5, TokenMode::Word).unwrap();
        // vocab sorted: ["green", "red"], unk id 2, V = 3.
        assert_eq!(model.vocab_size(), 3);
        assert_eq!(model.count(&[1], 0), 1); // "red" -> "green"
        let known = model.score_text("red", 0).unwrap().logprob;
        let unknown = model.score_text("blue", 0).unwrap().logprob;
        // Empty context saw only position 0 ("red"): total 1, red count 1.
        // known  -> (1+.5)/(1+1.5); unknown -> (0+.5)/(1+1.5)
        assert!((known - (1.5f64 / 2.5).ln()).abs() < 1e-12);
        assert!((unknown - (0.5f64 / 2.5).ln()).abs() < 1e-12);
    }

    #[test]
    fn empty_text_is_an_error() {
        let model = NGramModel::untrained(2, 0.1, TokenMode::Byte).unwrap();
        assert!(matches!(
            model.score_text("", 0),
            Err(ScoreError::EmptyText)
        ));
        assert!(matches!(
            model.score_text("ab", 2),
            Err(ScoreError::NothingToScore { .. })
        ));
    }

    #[test]
    fn serialization_round_trips_bit_exactly() {
        let model =
            NGramModel::train(&[("abc abd abe", 2), ("xyz", 7)], 3, 0.25, TokenMode::Word).unwrap();
        let json = serde_json::to_string(&model).unwrap();
        let back: NGramModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.model_id(), model.model_id());
        let text = "abc xyz unseen";
        let a = model.score_text(text, 0).unwrap().logprob;
        let b = back.score_text(text, 0).unwrap().logprob;
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn wrong_format_version_is_rejected() {
        let model = NGramModel::untrained(2, 0.1, TokenMode::Byte).unwrap();
        let json = serde_json::to_string(&model)
            .unwrap()
            .replace("benchleak.ngram.v1", "benchleak.ngram.v9");
        assert!(serde_json::from_str::<NGramModel>(&json).is_err());
    }

    #[test]
    fn model_id_distinguishes_trained_content() {
        let a = NGramModel::train(&[("ab", 1)], 2, 0.1, TokenMode::Byte).unwrap();
        let b = NGramModel::train(&[("ab", 2)], 2, 0.1, TokenMode::Byte).unwrap();
        assert_ne!(a.model_id(), b.model_id());
        let a2 = NGramModel::train(&[("ab", 1)], 2, 0.1, TokenMode::Byte).unwrap();
        assert_eq!(a.model_id(), a2.model_id());
    }

    #[test]
    fn word_offsets_handle_multibyte_whitespace() {
        let words = words_with_offsets("  héllo\tworld \u{a0}x");
        // \u{a0} is whitespace per char::is_whitespace.
        let texts: Vec<&str> = words.iter().map(|(_, w)| *w).collect();
        assert_eq!(texts, vec!["héllo", "world", "x"]);
        assert_eq!(words[0].0, 2);
    }
}
