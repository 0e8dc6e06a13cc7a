//! Option-permutation enumeration and rendering.
//!
//! An item with n options has n! derived renderings: the option *contents*
//! are permuted across the fixed letter labels A..E. Permutations are
//! identified by their lexicographic rank (`perm_id`), with rank 0 always
//! the identity, i.e. the original option order.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::McqItem;

/// Smallest supported option count.
pub const MIN_OPTIONS: usize = 2;
/// Largest supported option count (5! = 120 renderings).
pub const MAX_OPTIONS: usize = 5;

const FACTORIALS: [u32; 6] = [1, 1, 2, 6, 24, 120];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PermuteError {
    #[error("option count {n} outside supported range {MIN_OPTIONS}..={MAX_OPTIONS}")]
    OptionCountOutOfRange { n: usize },
    #[error("mapping is not a bijection on 0..{n}")]
    NotABijection { n: usize },
    #[error("rank {rank} out of range for n={n} ({count} permutations)")]
    RankOutOfRange { rank: u32, n: usize, count: u32 },
    #[error("permutation arity {perm} does not match item option count {item}")]
    ArityMismatch { perm: usize, item: usize },
}

/// Number of permutations (n!) for a supported option count.
pub fn permutation_count(n: usize) -> Result<u32, PermuteError> {
    if !(MIN_OPTIONS..=MAX_OPTIONS).contains(&n) {
        return Err(PermuteError::OptionCountOutOfRange { n });
    }
    Ok(FACTORIALS[n])
}

/// One arrangement of option contents over the fixed label slots.
///
/// `mapping[slot]` is the index of the original option whose content is
/// shown at `slot`. The identity mapping has rank 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Permutation {
    mapping: Vec<u8>,
    perm_id: u32,
}

impl Permutation {
    pub fn identity(n: usize) -> Result<Self, PermuteError> {
        permutation_count(n)?;
        Ok(Self {
            mapping: (0..n as u8).collect(),
            perm_id: 0,
        })
    }

    /// Build from an explicit slot -> original-index mapping.
    pub fn from_mapping(mapping: &[u8]) -> Result<Self, PermuteError> {
        let n = mapping.len();
        permutation_count(n)?;
        let mut seen = [false; MAX_OPTIONS];
        for &m in mapping {
            let m = m as usize;
            if m >= n || seen[m] {
                return Err(PermuteError::NotABijection { n });
            }
            seen[m] = true;
        }
        Ok(Self {
            mapping: mapping.to_vec(),
            perm_id: lexicographic_rank(mapping),
        })
    }

    /// Inverse of [`Permutation::rank`]: the `rank`-th mapping in
    /// lexicographic order.
    pub fn unrank(n: usize, rank: u32) -> Result<Self, PermuteError> {
        let count = permutation_count(n)?;
        if rank >= count {
            return Err(PermuteError::RankOutOfRange { rank, n, count });
        }
        let mut remaining: Vec<u8> = (0..n as u8).collect();
        let mut mapping = Vec::with_capacity(n);
        let mut rest = rank;
        for pos in 0..n {
            let block = FACTORIALS[n - 1 - pos];
            let digit = (rest / block) as usize;
            rest %= block;
            mapping.push(remaining.remove(digit));
        }
        Ok(Self {
            mapping,
            perm_id: rank,
        })
    }

    pub fn n(&self) -> usize {
        self.mapping.len()
    }

    pub fn perm_id(&self) -> u32 {
        self.perm_id
    }

    pub fn rank(&self) -> u32 {
        self.perm_id
    }

    pub fn mapping(&self) -> &[u8] {
        &self.mapping
    }

    /// Original option index placed at `slot`.
    pub fn source_of_slot(&self, slot: usize) -> usize {
        self.mapping[slot] as usize
    }

    pub fn is_identity(&self) -> bool {
        self.perm_id == 0
    }
}

fn lexicographic_rank(mapping: &[u8]) -> u32 {
    let n = mapping.len();
    let mut rank = 0u32;
    for i in 0..n {
        let smaller_later = mapping[i + 1..].iter().filter(|&&m| m < mapping[i]).count();
        rank += smaller_later as u32 * FACTORIALS[n - 1 - i];
    }
    rank
}

/// All n! permutations in lexicographic mapping order (index == perm_id).
pub fn enumerate_permutations(n: usize) -> Result<Vec<Permutation>, PermuteError> {
    let count = permutation_count(n)?;
    (0..count)
        .map(|rank| Permutation::unrank(n, rank))
        .collect()
}

/// How the slot label is printed before the option content.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelStyle {
    /// "A: content"
    LetterColon,
    /// "A. content"
    LetterDot,
    /// "(A) content"
    LetterParen,
}

impl LabelStyle {
    fn format(self, letter: char, out: &mut String) {
        match self {
            LabelStyle::LetterColon => {
                out.push(letter);
                out.push(':');
            }
            LabelStyle::LetterDot => {
                out.push(letter);
                out.push('.');
            }
            LabelStyle::LetterParen => {
                out.push('(');
                out.push(letter);
                out.push(')');
            }
        }
    }

    fn tag(self) -> &'static str {
        match self {
            LabelStyle::LetterColon => "colon",
            LabelStyle::LetterDot => "dot",
            LabelStyle::LetterParen => "paren",
        }
    }
}

/// Surface form of a rendering. Participates in cache keys via
/// [`RenderTemplate::template_hash`], so two runs only share cached scores
/// when they rendered identical text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderTemplate {
    /// Separator between the question and each labelled option block.
    pub option_separator: String,
    pub label_style: LabelStyle,
    /// Append "Answer: X" after the options, with X the label of the slot
    /// holding the original gold option. Ignored for items without a gold
    /// answer.
    pub include_answer: bool,
}

impl Default for RenderTemplate {
    fn default() -> Self {
        Self {
            option_separator: String::from(" "),
            label_style: LabelStyle::LetterColon,
            include_answer: false,
        }
    }
}

impl RenderTemplate {
    /// Stable digest of the template; part of every score cache key.
    pub fn template_hash(&self) -> String {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"benchleak.template.v1\x1f");
        bytes.extend_from_slice(self.option_separator.as_bytes());
        bytes.push(0x1f);
        bytes.extend_from_slice(self.label_style.tag().as_bytes());
        bytes.push(0x1f);
        bytes.push(if self.include_answer { b'1' } else { b'0' });
        crate::dataset::sha256_hex(&bytes)
    }
}

fn slot_letter(slot: usize) -> char {
    (b'A' + slot as u8) as char
}

/// A rendered permutation: the text handed to the scoring backend.
#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub text: String,
    /// Byte length of the question prefix inside `text`; options-only
    /// scoring conditions on everything before this offset.
    pub question_bytes: usize,
}

/// Render one permutation of an item under a template.
///
/// Labels stay fixed (A, B, C, ...) while option contents move.
pub fn render(
    item: &McqItem,
    perm: &Permutation,
    template: &RenderTemplate,
) -> Result<Rendered, PermuteError> {
    if perm.n() != item.options.len() {
        return Err(PermuteError::ArityMismatch {
            perm: perm.n(),
            item: item.options.len(),
        });
    }
    let mut text = String::with_capacity(
        item.question.len() + item.options.iter().map(|o| o.len() + 8).sum::<usize>(),
    );
    text.push_str(&item.question);
    for slot in 0..perm.n() {
        text.push_str(&template.option_separator);
        template.label_style.format(slot_letter(slot), &mut text);
        text.push(' ');
        text.push_str(&item.options[perm.source_of_slot(slot)]);
    }
    if template.include_answer {
        if let Some(answer) = item.answer_index {
            // The gold option moved with the shuffle; report its new slot.
            let slot = (0..perm.n())
                .find(|&s| perm.source_of_slot(s) == answer)
                .expect("mapping is a bijection");
            text.push_str(&template.option_separator);
            text.push_str("Answer: ");
            text.push(slot_letter(slot));
        }
    }
    Ok(Rendered {
        text,
        question_bytes: item.question.len(),
    })
}

/// One permutation of one item, rendered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedItem {
    pub item_id: String,
    pub perm: Permutation,
    pub rendered: String,
    /// False when an earlier permutation already rendered identical text
    /// (possible only for items with duplicate option contents).
    pub distinct: bool,
}

/// All n! renderings of an item in perm_id order, with first-occurrence
/// distinctness flags.
pub fn derive_all(
    item: &McqItem,
    template: &RenderTemplate,
) -> Result<Vec<DerivedItem>, PermuteError> {
    let perms = enumerate_permutations(item.options.len())?;
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut out = Vec::with_capacity(perms.len());
    for perm in perms {
        let rendered = render(item, &perm, template)?;
        let distinct = seen.insert(rendered.text.clone());
        out.push(DerivedItem {
            item_id: item.id.clone(),
            perm,
            rendered: rendered.text,
            distinct,
        });
    }
    Ok(out)
}
