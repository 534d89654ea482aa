//! Client for a completions-style inference endpoint.
//!
//! Token-level operations are bridged through the run's tokenizer: contexts
//! are detokenized to text, and scoring uses `echo` with per-token
//! log-probabilities over the appended span.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::{TokenId, TokenSeq, Tokenizer};
use crate::error::{Error, Result};
use crate::http::{EndpointConfig, HttpClient};
use crate::models::{DecodingParams, LanguageModel, TokenScore};
use crate::rng::RngKey;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteSpec {
    pub endpoint: EndpointConfig,
    pub model: String,
}

#[derive(Debug, Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: usize,
    temperature: f64,
    top_p: f64,
    top_k: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    logprobs: Option<u32>,
    echo: bool,
    seed: u64,
}

#[derive(Debug, Deserialize)]
pub(crate) struct CompletionResponse {
    pub choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
pub(crate) struct Choice {
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub logprobs: Option<Logprobs>,
}

#[derive(Debug, Deserialize)]
pub(crate) struct Logprobs {
    pub tokens: Vec<String>,
    pub token_logprobs: Vec<Option<f64>>,
    #[serde(default)]
    pub top_logprobs: Option<Vec<Option<BTreeMap<String, f64>>>>,
    pub text_offset: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct RemoteModel {
    spec: RemoteSpec,
    tokenizer: Arc<Tokenizer>,
    http: HttpClient,
    generation_index: u32,
    logprobs: bool,
}

impl RemoteModel {
    /// Connect and run a health probe; records whether the endpoint returns
    /// per-token log-probabilities.
    pub fn connect(spec: RemoteSpec, tokenizer: Arc<Tokenizer>, generation_index: u32) -> Result<Self> {
        let http = HttpClient::new(spec.endpoint.clone())?;
        let mut model = Self {
            spec,
            tokenizer,
            http,
            generation_index,
            logprobs: false,
        };
        let probe = model.complete("probe", 0, &DecodingParams::greedy(0), Some(1), true, 0)?;
        model.logprobs = probe
            .choices
            .first()
            .and_then(|c| c.logprobs.as_ref())
            .is_some_and(|lp| !lp.token_logprobs.is_empty());
        Ok(model)
    }

    pub fn spec(&self) -> &RemoteSpec {
        &self.spec
    }

    fn complete(
        &self,
        prompt: &str,
        max_tokens: usize,
        decoding: &DecodingParams,
        logprobs: Option<u32>,
        echo: bool,
        seed: u64,
    ) -> Result<CompletionResponse> {
        let req = CompletionRequest {
            model: &self.spec.model,
            prompt,
            max_tokens,
            temperature: decoding.temperature,
            top_p: decoding.top_p,
            top_k: decoding.top_k,
            logprobs,
            echo,
            seed,
        };
        self.http.post_json(&req)
    }

    fn capability_error(&self) -> Error {
        Error::Capability(format!(
            "endpoint {} ({}) does not return log-probabilities",
            self.http.url(),
            self.spec.model
        ))
    }
}

impl LanguageModel for RemoteModel {
    fn generation_index(&self) -> u32 {
        self.generation_index
    }

    fn describe(&self) -> String {
        self.spec.model.clone()
    }

    fn supports_logprobs(&self) -> bool {
        self.logprobs
    }

    fn next_distribution(&self, _context: &[TokenId]) -> Result<Vec<f64>> {
        Err(Error::Capability(
            "remote endpoints do not expose full next-token distributions".into(),
        ))
    }

    fn sampling_distribution(&self, _context: &[TokenId]) -> Result<Vec<(TokenId, f64)>> {
        Err(Error::Capability(
            "remote endpoints sample server-side".into(),
        ))
    }

    fn token_logprob(&self, context: &[TokenId], token: TokenId) -> Result<f64> {
        Ok(self
            .score_continuation(context, &[token])?
            .iter()
            .map(|s| s.logprob)
            .sum())
    }

    fn score_continuation(&self, context: &[TokenId], continuation: &[TokenId]) -> Result<Vec<TokenScore>> {
        if !self.logprobs {
            return Err(self.capability_error());
        }
        let prefix = self.tokenizer.decode(context);
        let tail = self.tokenizer.decode(continuation);
        let text = if prefix.is_empty() {
            tail
        } else {
            format!("{prefix} {tail}")
        };
        let resp = self.complete(&text, 0, &DecodingParams::greedy(0), Some(1), true, 0)?;
        let lp = resp
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.logprobs)
            .ok_or_else(|| self.capability_error())?;
        let boundary = prefix.len();
        let mut out = Vec::new();
        for (i, tok) in lp.tokens.iter().enumerate() {
            if lp.text_offset.get(i).copied().unwrap_or(0) < boundary {
                continue;
            }
            let Some(logprob) = lp.token_logprobs.get(i).copied().flatten() else {
                continue;
            };
            let greedy = lp
                .top_logprobs
                .as_ref()
                .and_then(|t| t.get(i))
                .and_then(|m| m.as_ref())
                .and_then(|m| {
                    m.iter()
                        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
                })
                .is_some_and(|(best, _)| best == tok);
            out.push(TokenScore { logprob, greedy });
        }
        Ok(out)
    }

    fn generate(&self, prompt: &TokenSeq, decoding: &DecodingParams, key: RngKey) -> Result<TokenSeq> {
        decoding.validate()?;
        let text = self.tokenizer.decode(&prompt.tokens);
        let resp = self.complete(&text, decoding.max_new_tokens, decoding, None, false, key.fold())?;
        let out = resp.choices.into_iter().next().map(|c| c.text).unwrap_or_default();
        let mut seq = self.tokenizer.encode(&out);
        seq.tokens.truncate(decoding.max_new_tokens);
        Ok(seq)
    }
}
