//! Tokenization, prompt extraction, real/synthetic mixing and block packing.

mod extract;
pub mod io;
mod mix;
mod pack;
mod tokenizer;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use extract::{extract_prompts, Extraction, ExtractionReport};
pub use mix::{mix_corpus, synthetic_count};
pub use pack::{pack_blocks, PackReport, Packed};
pub use tokenizer::{Tokenizer, TokenizerKind, TokenizerRegistry, UNK, UNK_ID};

pub type TokenId = u32;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSeq {
    pub tokens: Vec<TokenId>,
    pub tokenizer_id: String,
}

impl TokenSeq {
    pub fn new(tokens: Vec<TokenId>, tokenizer_id: impl Into<String>) -> Self {
        Self {
            tokens,
            tokenizer_id: tokenizer_id.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// A raw text document with a stable identifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub seq: TokenSeq,
    pub source_doc: String,
    /// Position of this chunk in the canonical candidate pool.
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Real,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusItem {
    pub prompt: Prompt,
    pub continuation: Option<TokenSeq>,
    pub provenance: Provenance,
}

/// One generation's training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedCorpus {
    pub items: Vec<CorpusItem>,
    /// Synthetic fraction.
    pub alpha: f64,
    pub generation: u32,
    pub seed: u64,
}

impl MixedCorpus {
    pub fn synthetic_count(&self) -> usize {
        self.items
            .iter()
            .filter(|i| i.provenance == Provenance::Synthetic)
            .count()
    }

    pub fn real_count(&self) -> usize {
        self.items.len() - self.synthetic_count()
    }
}

/// A multiple-choice question. Options hold answer texts; letters are added
/// at render time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAItem {
    #[serde(default)]
    pub id: String,
    pub subject: String,
    pub question: String,
    pub options: Vec<String>,
    pub gold_index: usize,
}

impl QAItem {
    pub fn validate(&self) -> Result<()> {
        if self.options.len() < 2 {
            return Err(Error::Argument(format!(
                "item '{}' has {} options, need at least 2",
                self.id,
                self.options.len()
            )));
        }
        if self.gold_index >= self.options.len() {
            return Err(Error::Argument(format!(
                "item '{}' gold_index {} out of range",
                self.id, self.gold_index
            )));
        }
        Ok(())
    }

    pub fn gold(&self) -> &str {
        &self.options[self.gold_index]
    }
}
