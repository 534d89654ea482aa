use std::collections::{HashMap, HashSet};
use std::hash::Hash;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{TokenId, TokenSeq};
use crate::error::{Error, Result};
use crate::http::{EndpointConfig, HttpClient};
use crate::models::{DecodingParams, LanguageModel};
use crate::rng::RngKey;

/// Empirical unigram entropy in nats.
pub fn shannon_entropy<T: Eq + Hash>(tokens: &[T]) -> Result<f64> {
    if tokens.is_empty() {
        return Err(Error::Argument("entropy of an empty sequence".into()));
    }
    let mut counts: HashMap<&T, usize> = HashMap::new();
    for t in tokens {
        *counts.entry(t).or_default() += 1;
    }
    let mut c: Vec<usize> = counts.into_values().collect();
    c.sort_unstable();
    let n = tokens.len() as f64;
    let h: f64 = c
        .iter()
        .map(|&k| {
            let p = k as f64 / n;
            -p * p.ln()
        })
        .sum();
    Ok(h.max(0.0))
}

/// Mean negative log-probability of `text` after `context`, every position
/// scored. Infinite when a token has zero probability.
pub fn mean_nll(model: &dyn LanguageModel, context: &[TokenId], text: &[TokenId]) -> Result<f64> {
    if text.is_empty() {
        return Err(Error::Argument("perplexity of an empty sequence".into()));
    }
    let scores = model.score_continuation(context, text)?;
    Ok(-scores.iter().map(|s| s.logprob).sum::<f64>() / scores.len() as f64)
}

/// `exp(mean_nll)`. A zero-probability transition yields `f64::INFINITY`.
pub fn perplexity(model: &dyn LanguageModel, text: &TokenSeq) -> Result<f64> {
    Ok(mean_nll(model, &[], &text.tokens)?.exp())
}

/// Token-weighted perplexity over a fixed set of held-out sequences.
pub fn static_perplexity(model: &dyn LanguageModel, held_out: &[TokenSeq]) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for seq in held_out.iter().filter(|s| !s.is_empty()) {
        total += mean_nll(model, &[], &seq.tokens)? * seq.len() as f64;
        n += seq.len();
    }
    if n == 0 {
        return Err(Error::Argument("no held-out tokens to score".into()));
    }
    Ok((total / n as f64).exp())
}

/// Fresh generations from a model, each conditioned on a held-out prompt.
#[derive(Debug, Clone)]
pub struct Generations {
    pub prompts: Vec<TokenSeq>,
    pub outputs: Vec<TokenSeq>,
}

/// Sample `count` continuations, cycling through `prompts`. Stream `i` is
/// drawn from `key.with_index(i)`.
pub fn sample_generations(
    model: &dyn LanguageModel,
    prompts: &[TokenSeq],
    count: usize,
    decoding: &DecodingParams,
    key: RngKey,
) -> Result<Generations> {
    use rayon::prelude::*;
    if prompts.is_empty() {
        return Err(Error::Argument("no prompts to condition generations on".into()));
    }
    let chosen: Vec<TokenSeq> = (0..count).map(|i| prompts[i % prompts.len()].clone()).collect();
    let outputs = chosen
        .par_iter()
        .enumerate()
        .map(|(i, p)| model.generate(p, decoding, key.with_index(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Generations {
        prompts: chosen,
        outputs,
    })
}

/// Token-weighted perplexity of the model on its own generations.
pub fn dynamic_perplexity(model: &dyn LanguageModel, gens: &Generations) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for (p, o) in gens.prompts.iter().zip(&gens.outputs) {
        if o.is_empty() {
            continue;
        }
        total += mean_nll(model, &p.tokens, &o.tokens)? * o.len() as f64;
        n += o.len();
    }
    if n == 0 {
        return Err(Error::Argument("no generated tokens to score".into()));
    }
    Ok((total / n as f64).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GibberishConfig {
    /// Share of duplicated word 4-grams above which one point is lost.
    pub repeat_threshold: f64,
    /// Above this, a second point is lost.
    pub repeat_severe: f64,
    pub non_dictionary_threshold: f64,
    pub symbol_threshold: f64,
    /// Above this the text is noise and scores 0.
    pub symbol_severe: f64,
    /// Optional remote classifier, `POST {text} → {score}`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<EndpointConfig>,
}

impl Default for GibberishConfig {
    fn default() -> Self {
        Self {
            repeat_threshold: 0.30,
            repeat_severe: 0.60,
            non_dictionary_threshold: 0.40,
            symbol_threshold: 0.30,
            symbol_severe: 0.70,
            endpoint: None,
        }
    }
}

fn word_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[\p{L}\p{N}]+").unwrap())
}

/// The lowercase words the gibberish heuristic looks at.
pub fn words(text: &str) -> Vec<String> {
    word_re().find_iter(text).map(|m| m.as_str().to_lowercase()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GibberishParts {
    pub repeated_4gram_ratio: f64,
    pub non_dictionary_fraction: f64,
    pub symbol_fraction: f64,
}

pub fn gibberish_parts(text: &str, dictionary: Option<&HashSet<String>>) -> GibberishParts {
    let w = words(text);
    let repeated_4gram_ratio = if w.len() >= 4 {
        let grams: Vec<&[String]> = w.windows(4).collect();
        let distinct: HashSet<&[String]> = grams.iter().copied().collect();
        1.0 - distinct.len() as f64 / grams.len() as f64
    } else {
        0.0
    };
    let non_dictionary_fraction = match dictionary {
        Some(d) if !w.is_empty() => w.iter().filter(|x| !d.contains(*x)).count() as f64 / w.len() as f64,
        _ => 0.0,
    };
    let visible: Vec<char> = text.chars().filter(|c| !c.is_whitespace()).collect();
    let symbol_fraction = if visible.is_empty() {
        0.0
    } else {
        visible.iter().filter(|c| !c.is_alphanumeric()).count() as f64 / visible.len() as f64
    };
    GibberishParts {
        repeated_4gram_ratio,
        non_dictionary_fraction,
        symbol_fraction,
    }
}

/// Heuristic 0–3 coherence score (noise, word salad, mild gibberish, clean).
/// Empty text scores 0.
pub fn gibberish_score(text: &str, dictionary: Option<&HashSet<String>>, cfg: &GibberishConfig) -> f64 {
    if text.trim().is_empty() {
        return 0.0;
    }
    let p = gibberish_parts(text, dictionary);
    let mut score = 3.0;
    if p.repeated_4gram_ratio > cfg.repeat_threshold {
        score -= 1.0;
    }
    if p.repeated_4gram_ratio > cfg.repeat_severe {
        score -= 1.0;
    }
    if p.non_dictionary_fraction > cfg.non_dictionary_threshold {
        score -= 1.0;
    }
    if p.symbol_fraction > cfg.symbol_severe {
        score -= 3.0;
    } else if p.symbol_fraction > cfg.symbol_threshold {
        score -= 1.0;
    }
    f64::clamp(score, 0.0, 3.0)
}

#[derive(Serialize)]
struct ClassifyRequest<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct ClassifyResponse {
    score: f64,
}

/// Gibberish scoring with an optional remote classifier. Remote failures fall
/// back to the heuristic and set the returned flag.
#[derive(Debug, Clone)]
pub struct GibberishScorer {
    cfg: GibberishConfig,
    dictionary: Option<HashSet<String>>,
    remote: Option<HttpClient>,
}

impl GibberishScorer {
    pub fn new(cfg: GibberishConfig, dictionary: Option<HashSet<String>>) -> Result<Self> {
        let remote = cfg.endpoint.clone().map(HttpClient::new).transpose()?;
        Ok(Self {
            cfg,
            dictionary,
            remote,
        })
    }

    /// Returns `(score, fell_back)`.
    pub fn score(&self, text: &str) -> (f64, bool) {
        let local = || gibberish_score(text, self.dictionary.as_ref(), &self.cfg);
        match &self.remote {
            None => (local(), false),
            Some(http) => match http.post_json::<_, ClassifyResponse>(&ClassifyRequest { text }) {
                Ok(r) if r.score.is_finite() => (r.score.clamp(0.0, 3.0), false),
                Ok(_) => (local(), true),
                Err(e) => {
                    tracing::warn!("gibberish classifier failed, using heuristic: {e}");
                    (local(), true)
                }
            },
        }
    }
}
