//! Multiple-choice items and datasets, with canonical hashing.
//!
//! File parsing lives in the `benchleak` crate; this module owns the
//! validated in-memory types and the canonical serialization that makes
//! dataset fingerprints reproducible across source formats.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::permute::{MAX_OPTIONS, MIN_OPTIONS};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DatasetError {
    #[error("item {id}: options.len < {MIN_OPTIONS} (got {got})")]
    TooFewOptions { id: String, got: usize },
    #[error("item {id}: options.len > {MAX_OPTIONS} (got {got})")]
    TooManyOptions { id: String, got: usize },
    #[error("item {id}: question is empty after trimming")]
    EmptyQuestion { id: String },
    #[error("item {id}: options[{index}] is empty after trimming")]
    EmptyOption { id: String, index: usize },
    #[error("item {id}: answer_index {answer} out of range for {len} options")]
    AnswerOutOfRange {
        id: String,
        answer: usize,
        len: usize,
    },
    #[error("duplicate item id {id:?}")]
    DuplicateId { id: String },
}

/// Meta key set on items whose option contents are not pairwise distinct.
pub const DUP_OPTIONS_META: &str = "dup_options";

/// One multiple-choice question with ordered option contents.
///
/// Invariants (enforced by [`McqItem::new`], re-checked by
/// [`Dataset::new`]): 2..=5 options, question and options non-empty after
/// trimming, `answer_index` in range. The gold answer is carried through
/// but never consulted by the detection rules.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McqItem {
    pub id: String,
    pub question: String,
    pub options: Vec<String>,
    pub answer_index: Option<usize>,
    pub meta: BTreeMap<String, String>,
}

impl McqItem {
    /// Validate and construct. Items with duplicate option contents are
    /// accepted but flagged with meta `dup_options=true`; downstream code
    /// works on distinct renderings only.
    pub fn new(
        id: String,
        question: String,
        options: Vec<String>,
        answer_index: Option<usize>,
        meta: BTreeMap<String, String>,
    ) -> Result<Self, DatasetError> {
        let mut item = Self {
            id,
            question,
            options,
            answer_index,
            meta,
        };
        item.validate()?;
        if item.has_duplicate_options() {
            item.meta
                .insert(DUP_OPTIONS_META.to_string(), "true".to_string());
        }
        Ok(item)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let id = &self.id;
        if self.options.len() < MIN_OPTIONS {
            return Err(DatasetError::TooFewOptions {
                id: id.clone(),
                got: self.options.len(),
            });
        }
        if self.options.len() > MAX_OPTIONS {
            return Err(DatasetError::TooManyOptions {
                id: id.clone(),
                got: self.options.len(),
            });
        }
        if self.question.trim().is_empty() {
            return Err(DatasetError::EmptyQuestion { id: id.clone() });
        }
        for (index, option) in self.options.iter().enumerate() {
            if option.trim().is_empty() {
                return Err(DatasetError::EmptyOption {
                    id: id.clone(),
                    index,
                });
            }
        }
        if let Some(answer) = self.answer_index {
            if answer >= self.options.len() {
                return Err(DatasetError::AnswerOutOfRange {
                    id: id.clone(),
                    answer,
                    len: self.options.len(),
                });
            }
        }
        Ok(())
    }

    pub fn has_duplicate_options(&self) -> bool {
        let unique: BTreeSet<&str> = self.options.iter().map(String::as_str).collect();
        unique.len() != self.options.len()
    }
}

/// A named, validated list of items with a content fingerprint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    name: String,
    items: Vec<McqItem>,
    fingerprint: String,
}

impl Dataset {
    /// Validate items, require unique ids, and fingerprint the content.
    pub fn new(name: String, items: Vec<McqItem>) -> Result<Self, DatasetError> {
        let mut seen: BTreeSet<&str> = BTreeSet::new();
        for item in &items {
            item.validate()?;
            if !seen.insert(item.id.as_str()) {
                return Err(DatasetError::DuplicateId {
                    id: item.id.clone(),
                });
            }
        }
        let fingerprint = fingerprint_items(&name, &items);
        Ok(Self {
            name,
            items,
            fingerprint,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn items(&self) -> &[McqItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// 256-bit hex digest of the canonical serialization.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }
}

fn nfc(text: &str) -> String {
    text.nfc().collect()
}

fn push_field(buf: &mut Vec<u8>, bytes: &[u8]) {
    // Length-prefixed fields: no escaping needed, content cannot collide
    // with the record separator.
    buf.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
    buf.extend_from_slice(bytes);
}

fn push_text(buf: &mut Vec<u8>, text: &str) {
    push_field(buf, nfc(text).as_bytes());
}

/// Canonical byte serialization: NFC-normalized UTF-8, fields in fixed
/// order, one record per item terminated by `\n`. Independent of the key
/// order in whatever source file the items came from.
pub fn canonical_bytes(name: &str, items: &[McqItem]) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(b"benchleak.dataset.v1\n");
    push_text(&mut buf, name);
    buf.push(b'\n');
    for item in items {
        push_text(&mut buf, &item.id);
        push_text(&mut buf, &item.question);
        buf.push(item.options.len() as u8);
        for option in &item.options {
            push_text(&mut buf, option);
        }
        match item.answer_index {
            Some(answer) => {
                buf.push(1);
                buf.extend_from_slice(&(answer as u32).to_le_bytes());
            }
            None => buf.push(0),
        }
        buf.extend_from_slice(&(item.meta.len() as u32).to_le_bytes());
        for (key, value) in &item.meta {
            push_text(&mut buf, key);
            push_text(&mut buf, value);
        }
        buf.push(b'\n');
    }
    buf
}

pub fn fingerprint_items(name: &str, items: &[McqItem]) -> String {
    sha256_hex(&canonical_bytes(name, items))
}

/// Hex-encoded SHA-256.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        let hi = b >> 4;
        let lo = b & 0xf;
        out.push(char::from_digit(hi as u32, 16).unwrap());
        out.push(char::from_digit(lo as u32, 16).unwrap());
    }
    out
}
