use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::{Arc, OnceLock};

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{TokenId, TokenSeq};
use crate::error::{Error, Result};

pub const UNK: &str = "<unk>";
pub const UNK_ID: TokenId = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenizerKind {
    /// Split on whitespace only; case preserved.
    Whitespace,
    /// Lowercase, then split into word runs and single punctuation marks.
    WordPunct,
}

impl TokenizerKind {
    pub fn name(&self) -> &'static str {
        match self {
            TokenizerKind::Whitespace => "whitespace",
            TokenizerKind::WordPunct => "wordpunct",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "whitespace" => Ok(TokenizerKind::Whitespace),
            "wordpunct" => Ok(TokenizerKind::WordPunct),
            other => Err(Error::Config(format!("unknown tokenizer '{other}'"))),
        }
    }

    /// Split text into surface tokens (before vocabulary lookup).
    pub fn split(&self, text: &str) -> Vec<String> {
        match self {
            TokenizerKind::Whitespace => text.split_whitespace().map(str::to_owned).collect(),
            TokenizerKind::WordPunct => {
                static WORD_PUNCT: OnceLock<Regex> = OnceLock::new();
                let re = WORD_PUNCT
                    .get_or_init(|| Regex::new(r"[\p{L}\p{N}_]+|[^\p{L}\p{N}_\s]").unwrap());
                let lower = text.to_lowercase();
                re.find_iter(&lower).map(|m| m.as_str().to_owned()).collect()
            }
        }
    }
}

/// A closed vocabulary fit on a corpus. Id 0 is reserved for `<unk>`; the rest
/// are assigned in lexicographic order so fitting is order-independent.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    kind: TokenizerKind,
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    id: String,
}

#[derive(Serialize, Deserialize)]
struct TokenizerFile {
    kind: TokenizerKind,
    tokens: Vec<String>,
}

impl Tokenizer {
    pub fn fit<'a>(kind: TokenizerKind, texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut types = BTreeSet::new();
        for text in texts {
            for tok in kind.split(text) {
                types.insert(tok);
            }
        }
        types.remove(UNK);
        let mut tokens = Vec::with_capacity(types.len() + 1);
        tokens.push(UNK.to_owned());
        tokens.extend(types);
        Self::from_tokens(kind, tokens)
    }

    fn from_tokens(kind: TokenizerKind, tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        let mut hasher = Sha256::new();
        for t in &tokens {
            hasher.update(t.as_bytes());
            hasher.update([0u8]);
        }
        let digest = hex::encode(hasher.finalize());
        let id = format!("{}@{}", kind.name(), &digest[..12]);
        Self {
            kind,
            tokens,
            index,
            id,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&TokenizerFile {
            kind: self.kind,
            tokens: self.tokens.clone(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: TokenizerFile = serde_json::from_str(s)?;
        if file.tokens.first().map(String::as_str) != Some(UNK) {
            return Err(Error::Config("tokenizer file must start with <unk>".into()));
        }
        Ok(Self::from_tokens(file.kind, file.tokens))
    }

    /// `<kind>@<vocabulary fingerprint>`; stamped into every [`TokenSeq`].
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn kind(&self) -> TokenizerKind {
        self.kind
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn token_id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token_str(&self, id: TokenId) -> &str {
        self.tokens.get(id as usize).map_or(UNK, String::as_str)
    }

    pub fn encode(&self, text: &str) -> TokenSeq {
        let tokens = self
            .kind
            .split(text)
            .iter()
            .map(|t| self.token_id(t).unwrap_or(UNK_ID))
            .collect();
        TokenSeq::new(tokens, self.id.clone())
    }

    pub fn decode(&self, ids: &[TokenId]) -> String {
        let mut out = String::new();
        for (i, &id) in ids.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(self.token_str(id));
        }
        out
    }

    /// The canonical form `decode(encode(text))` reproduces for in-vocabulary text.
    pub fn normalize(&self, text: &str) -> String {
        self.kind.split(text).join(" ")
    }
}

/// Named tokenizers available to a run.
#[derive(Debug, Default, Clone)]
pub struct TokenizerRegistry {
    entries: BTreeMap<String, Arc<Tokenizer>>,
}

impl TokenizerRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, tokenizer: Tokenizer) -> Arc<Tokenizer> {
        let tok = Arc::new(tokenizer);
        self.entries.insert(name.into(), tok.clone());
        tok
    }

    pub fn get(&self, name: &str) -> Result<&Arc<Tokenizer>> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown tokenizer id '{name}'")))
    }

    pub fn tokenize(&self, text: &str, tokenizer_id: &str) -> Result<TokenSeq> {
        Ok(self.get(tokenizer_id)?.encode(text))
    }
}
