//! Prompt tokenization and perturbation masks.
//!
//! A prompt is split into word and punctuation tokens with the original
//! whitespace recorded between them, so any subset of tokens can be
//! re-assembled into readable text. Word tokens are perturbable; punctuation
//! is frozen unless the tokenizer is told otherwise.

use std::collections::HashSet;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_segmentation::UnicodeSegmentation;

pub const DEFAULT_PLACEHOLDER: &str = "UNKWORDZ";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TextError {
    #[error("prompt contains no word tokens")]
    EmptyPrompt,
    #[error("prompt has {0} perturbable token(s); at least 2 are required")]
    DegeneratePrompt(usize),
    #[error("mask has {mask} bits but the prompt has {perturbable} perturbable tokens")]
    LengthMismatch { mask: usize, perturbable: usize },
    #[error("mask count must be at least 1")]
    ZeroCount,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenizerConfig {
    pub lowercase: bool,
    pub perturb_punctuation: bool,
    pub placeholder: String,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            lowercase: false,
            perturb_punctuation: false,
            placeholder: DEFAULT_PLACEHOLDER.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenKind {
    Word,
    Punctuation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    /// Normalized text used for embedding lookups.
    pub text: String,
    /// The exact slice of the raw prompt.
    pub surface: String,
    pub index: usize,
    pub kind: TokenKind,
    pub perturbable: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedPrompt {
    pub raw_text: String,
    pub tokens: Vec<Token>,
    /// `gaps[i]` precedes token `i`; the final entry trails the last token.
    gaps: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditMode {
    Drop,
    Placeholder,
}

impl Default for EditMode {
    fn default() -> Self {
        EditMode::Drop
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PerturbationMask {
    pub id: usize,
    /// `true` keeps the perturbable token at that position.
    pub bits: Vec<bool>,
}

impl PerturbationMask {
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn kept(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn all_keep(n: usize) -> Self {
        Self {
            id: usize::MAX,
            bits: vec![true; n],
        }
    }

    /// Feature row for the surrogate (1.0 = kept).
    pub fn features(&self) -> Vec<f64> {
        self.bits
            .iter()
            .map(|&b| if b { 1.0 } else { 0.0 })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbedPrompt {
    pub mask: PerturbationMask,
    pub text: String,
    /// Normalized texts of the tokens present in `text`.
    pub tokens: Vec<String>,
}

fn classify(segment: &str) -> Option<TokenKind> {
    if segment.chars().all(char::is_whitespace) {
        None
    } else if segment.chars().any(char::is_alphanumeric) {
        Some(TokenKind::Word)
    } else {
        Some(TokenKind::Punctuation)
    }
}

/// Splits text into tokens without enforcing the perturbation preconditions.
/// Used for model outputs, which may legitimately be punctuation-only.
pub fn segment(text: &str, config: &TokenizerConfig) -> TokenizedPrompt {
    let mut tokens = Vec::new();
    let mut gaps = Vec::new();
    let mut gap = String::new();
    for (_, seg) in text.split_word_bound_indices() {
        match classify(seg) {
            None => gap.push_str(seg),
            Some(kind) => {
                gaps.push(std::mem::take(&mut gap));
                let normalized = if config.lowercase {
                    seg.to_lowercase()
                } else {
                    seg.to_string()
                };
                let perturbable = match kind {
                    TokenKind::Word => true,
                    TokenKind::Punctuation => config.perturb_punctuation,
                };
                tokens.push(Token {
                    text: normalized,
                    surface: seg.to_string(),
                    index: tokens.len(),
                    kind,
                    perturbable,
                });
            }
        }
    }
    gaps.push(gap);
    TokenizedPrompt {
        raw_text: text.to_string(),
        tokens,
        gaps,
    }
}

pub fn tokenize(text: &str, config: &TokenizerConfig) -> Result<TokenizedPrompt, TextError> {
    let prompt = segment(text, config);
    if !prompt.tokens.iter().any(|t| t.kind == TokenKind::Word) {
        return Err(TextError::EmptyPrompt);
    }
    Ok(prompt)
}

/// Tokenizes `text` followed by a space and `suffix`; every token of the
/// suffix is frozen regardless of the tokenizer configuration.
pub fn tokenize_with_frozen_suffix(
    text: &str,
    suffix: &str,
    config: &TokenizerConfig,
) -> Result<TokenizedPrompt, TextError> {
    let base = tokenize(text, config)?;
    let boundary = base.tokens.len();
    let mut prompt = tokenize(&format!("{text} {suffix}"), config)?;
    for token in prompt.tokens.iter_mut().skip(boundary) {
        token.perturbable = false;
    }
    Ok(prompt)
}

impl TokenizedPrompt {
    pub fn perturbable_count(&self) -> usize {
        self.tokens.iter().filter(|t| t.perturbable).count()
    }

    pub fn perturbable_tokens(&self) -> impl Iterator<Item = &Token> {
        self.tokens.iter().filter(|t| t.perturbable)
    }

    pub fn is_degenerate(&self) -> bool {
        self.perturbable_count() < 2
    }

    pub fn separators(&self) -> &[String] {
        &self.gaps
    }

    pub fn token_texts(&self) -> Vec<String> {
        self.tokens.iter().map(|t| t.text.clone()).collect()
    }

    pub fn reconstruct(&self) -> String {
        let mut out = String::with_capacity(self.raw_text.len());
        for (gap, token) in self.gaps.iter().zip(&self.tokens) {
            out.push_str(gap);
            out.push_str(&token.surface);
        }
        out.push_str(self.gaps.last().map(String::as_str).unwrap_or(""));
        out
    }
}

/// Draws up to `count` distinct masks over `n_perturbable` tokens.
///
/// Each draw picks a removal count uniformly from `1..n`, then a uniform
/// subset of that size. The stream is seeded, so a smaller `count` always
/// yields a prefix of a larger one. When `count` reaches the number of valid
/// masks (`2^n - 2`) every mask is returned.
pub fn sample_masks(
    n_perturbable: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<PerturbationMask>, TextError> {
    if n_perturbable < 2 {
        return Err(TextError::DegeneratePrompt(n_perturbable));
    }
    if count == 0 {
        return Err(TextError::ZeroCount);
    }
    let capacity = if n_perturbable >= 63 {
        usize::MAX
    } else {
        (1usize << n_perturbable).saturating_sub(2)
    };
    let target = count.min(capacity);
    let budget = target.saturating_mul(64).max(4096);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen: HashSet<Vec<bool>> = HashSet::with_capacity(target);
    let mut masks = Vec::with_capacity(target);
    let mut draws = 0usize;
    while masks.len() < target && draws < budget {
        draws += 1;
        let removed = rng.gen_range(1..n_perturbable);
        let mut bits = vec![true; n_perturbable];
        for i in index::sample(&mut rng, n_perturbable, removed) {
            bits[i] = false;
        }
        if seen.insert(bits.clone()) {
            masks.push(PerturbationMask {
                id: masks.len(),
                bits,
            });
        }
    }
    if masks.len() < target {
        // Only reachable when asking for (nearly) every mask of a small prompt.
        for code in 1..(1u64 << n_perturbable) - 1 {
            if masks.len() == target {
                break;
            }
            let bits: Vec<bool> = (0..n_perturbable).map(|i| code >> i & 1 == 1).collect();
            if seen.insert(bits.clone()) {
                masks.push(PerturbationMask {
                    id: masks.len(),
                    bits,
                });
            }
        }
    }
    Ok(masks)
}

pub fn apply_mask(
    prompt: &TokenizedPrompt,
    mask: &PerturbationMask,
    mode: EditMode,
    placeholder: &str,
) -> Result<PerturbedPrompt, TextError> {
    let perturbable = prompt.perturbable_count();
    if mask.len() != perturbable {
        return Err(TextError::LengthMismatch {
            mask: mask.len(),
            perturbable,
        });
    }

    // keep[i] for every token, frozen tokens always kept
    let mut bits = mask.bits.iter();
    let keep: Vec<bool> = prompt
        .tokens
        .iter()
        .map(|t| {
            if t.perturbable {
                *bits.next().unwrap()
            } else {
                true
            }
        })
        .collect();

    let mut text = String::with_capacity(prompt.raw_text.len());
    let mut tokens = Vec::with_capacity(prompt.tokens.len());
    match mode {
        EditMode::Placeholder => {
            for (i, token) in prompt.tokens.iter().enumerate() {
                text.push_str(&prompt.gaps[i]);
                if keep[i] {
                    text.push_str(&token.surface);
                    tokens.push(token.text.clone());
                } else {
                    text.push_str(placeholder);
                    tokens.push(placeholder.to_string());
                }
            }
            text.push_str(&prompt.gaps[prompt.tokens.len()]);
        }
        EditMode::Drop => {
            // Between two surviving tokens use the gap that directly preceded
            // the later one; a run of removed tokens collapses to one gap.
            text.push_str(&prompt.gaps[0]);
            let mut emitted_any = false;
            for (i, token) in prompt.tokens.iter().enumerate() {
                if !keep[i] {
                    continue;
                }
                if emitted_any {
                    text.push_str(&prompt.gaps[i]);
                }
                text.push_str(&token.surface);
                tokens.push(token.text.clone());
                emitted_any = true;
            }
            text.push_str(&prompt.gaps[prompt.tokens.len()]);
        }
    }
    Ok(PerturbedPrompt {
        mask: mask.clone(),
        text,
        tokens,
    })
}
