use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::text::{segment, TokenizerConfig};

/// Placeholder inside a default fragment that is replaced by the token itself.
pub const TOKEN_SLOT: &str = "{token}";

/// Token-to-fragment table for the offline lexical model.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockLexicon {
    pub entries: BTreeMap<String, String>,
    /// Used for tokens without an entry. May contain `{token}`.
    pub default_fragment: String,
}

impl MockLexicon {
    pub fn new<K: Into<String>, V: Into<String>>(
        entries: impl IntoIterator<Item = (K, V)>,
        default_fragment: &str,
    ) -> Self {
        Self {
            entries: entries
                .into_iter()
                .map(|(k, v)| (k.into(), v.into()))
                .collect(),
            default_fragment: default_fragment.to_string(),
        }
    }

    /// Echoes every token back unchanged.
    pub fn echo() -> Self {
        Self {
            entries: BTreeMap::new(),
            default_fragment: TOKEN_SLOT.to_string(),
        }
    }

    pub fn fragment(&self, token: &str) -> String {
        if let Some(f) = self.entries.get(token) {
            return f.clone();
        }
        if let Some(f) = self.entries.get(&token.to_lowercase()) {
            return f.clone();
        }
        self.default_fragment.replace(TOKEN_SLOT, token)
    }
}

/// Maps each prompt token through the lexicon and joins the non-empty
/// fragments with single spaces, in prompt order.
pub fn mock_generate(lexicon: &MockLexicon, prompt: &str) -> String {
    let tokens = segment(prompt, &TokenizerConfig::default());
    tokens
        .tokens
        .iter()
        .map(|t| lexicon.fragment(&t.surface))
        .filter(|f| !f.trim().is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}
