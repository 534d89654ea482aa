//! Generative models behind one interface: a categorical resampler, an n-gram
//! language model and a completions-endpoint client.

mod categorical;
mod ngram;
pub mod remote;
mod resample;
pub mod sampling;

use serde::{Deserialize, Serialize};

use crate::corpus::{MixedCorpus, Provenance, TokenId, TokenSeq};
use crate::error::{Error, Result};
use crate::rng::RngKey;

pub use categorical::CategoricalModel;
pub use ngram::{NGramModel, NGramTable};
pub use remote::{RemoteModel, RemoteSpec};
pub use resample::resample_step;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodingParams {
    pub top_k: usize,
    pub top_p: f64,
    pub temperature: f64,
    pub max_new_tokens: usize,
    pub seed: u64,
}

impl Default for DecodingParams {
    fn default() -> Self {
        Self {
            top_k: 64,
            top_p: 0.95,
            temperature: 1.0,
            max_new_tokens: 64,
            seed: 0,
        }
    }
}

impl DecodingParams {
    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 {
            return Err(Error::Argument("top_k must be at least 1".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Argument(format!("top_p {} not in (0, 1]", self.top_p)));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Argument(format!(
                "temperature {} must be positive",
                self.temperature
            )));
        }
        Ok(())
    }

    pub fn greedy(max_new_tokens: usize) -> Self {
        Self {
            top_k: 1,
            max_new_tokens,
            ..Self::default()
        }
    }
}

/// Log-probability of one continuation token and whether it was the model's
/// top choice at that position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenScore {
    pub logprob: f64,
    pub greedy: bool,
}

pub trait LanguageModel: Send + Sync {
    fn generation_index(&self) -> u32;

    /// A short label for reports (`ngram`, `categorical`, or the remote model name).
    fn describe(&self) -> String;

    fn supports_logprobs(&self) -> bool {
        true
    }

    /// Next-token probabilities over the whole vocabulary, used for scoring.
    fn next_distribution(&self, context: &[TokenId]) -> Result<Vec<f64>>;

    /// Non-zero entries of the distribution generation samples from.
    fn sampling_distribution(&self, context: &[TokenId]) -> Result<Vec<(TokenId, f64)>> {
        Ok(self
            .next_distribution(context)?
            .into_iter()
            .enumerate()
            .filter(|(_, p)| *p > 0.0)
            .map(|(i, p)| (i as TokenId, p))
            .collect())
    }

    /// Natural-log probability of `token` after `context`.
    fn token_logprob(&self, context: &[TokenId], token: TokenId) -> Result<f64> {
        let dist = self.next_distribution(context)?;
        let p = dist
            .get(token as usize)
            .copied()
            .ok_or_else(|| Error::Argument(format!("token {token} outside vocabulary")))?;
        Ok(p.ln())
    }

    /// Score each token of `continuation` given `context` and the tokens before it.
    fn score_continuation(
        &self,
        context: &[TokenId],
        continuation: &[TokenId],
    ) -> Result<Vec<TokenScore>> {
        let mut ctx = context.to_vec();
        let mut out = Vec::with_capacity(continuation.len());
        for &tok in continuation {
            let dist = self.next_distribution(&ctx)?;
            let p = dist
                .get(tok as usize)
                .copied()
                .ok_or_else(|| Error::Argument(format!("token {tok} outside vocabulary")))?;
            let max = dist.iter().copied().fold(0.0, f64::max);
            out.push(TokenScore {
                logprob: p.ln(),
                greedy: p > 0.0 && p >= max,
            });
            ctx.push(tok);
        }
        Ok(out)
    }

    /// Sample exactly `decoding.max_new_tokens` tokens after `prompt`.
    fn generate(&self, prompt: &TokenSeq, decoding: &DecodingParams, key: RngKey) -> Result<TokenSeq> {
        decoding.validate()?;
        let mut rng = key.rng();
        let mut ctx = prompt.tokens.clone();
        let start = ctx.len();
        for _ in 0..decoding.max_new_tokens {
            let dist = self.sampling_distribution(&ctx)?;
            let tok = sampling::sample(&dist, decoding, &mut rng)?;
            ctx.push(tok);
        }
        Ok(TokenSeq::new(ctx.split_off(start), prompt.tokenizer_id.clone()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelState {
    Categorical(CategoricalModel),
    Ngram(NGramModel),
    Remote(RemoteSpec),
}

/// An immutable model value; every training update yields a new handle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHandle {
    pub generation_index: u32,
    pub state: ModelState,
}

/// Light-touch update: interpolate old parameters towards the corpus MLE.
#[derive(Debug, Clone, Copy)]
pub struct TrainUpdate<'a> {
    pub eta: f64,
    pub corpus: &'a MixedCorpus,
}

impl ModelHandle {
    pub fn new(state: ModelState) -> Self {
        Self {
            generation_index: 0,
            state,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self.state {
            ModelState::Categorical(_) => "categorical",
            ModelState::Ngram(_) => "ngram",
            ModelState::Remote(_) => "remote",
        }
    }

    pub fn train_update(&self, update: TrainUpdate<'_>) -> Result<ModelHandle> {
        if !(0.0..=1.0).contains(&update.eta) {
            return Err(Error::Argument(format!("eta {} not in [0, 1]", update.eta)));
        }
        let spans = training_spans(update.corpus);
        let state = match &self.state {
            ModelState::Categorical(m) => ModelState::Categorical(m.updated(&spans, update.eta)?),
            ModelState::Ngram(m) => ModelState::Ngram(m.updated(&spans, update.eta)?),
            ModelState::Remote(_) => {
                return Err(Error::Unsupported(
                    "remote checkpoints are trained externally".into(),
                ))
            }
        };
        Ok(ModelHandle {
            generation_index: self.generation_index + 1,
            state,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    fn local(&self) -> Result<&dyn LanguageModel> {
        match &self.state {
            ModelState::Categorical(m) => Ok(m),
            ModelState::Ngram(m) => Ok(m),
            ModelState::Remote(_) => Err(Error::Unsupported(
                "remote handles must be bound to a tokenizer with RemoteModel::connect".into(),
            )),
        }
    }
}

impl LanguageModel for ModelHandle {
    fn generation_index(&self) -> u32 {
        self.generation_index
    }

    fn describe(&self) -> String {
        match &self.state {
            ModelState::Remote(spec) => spec.model.clone(),
            _ => self.kind_name().to_owned(),
        }
    }

    fn next_distribution(&self, context: &[TokenId]) -> Result<Vec<f64>> {
        self.local()?.next_distribution(context)
    }

    fn sampling_distribution(&self, context: &[TokenId]) -> Result<Vec<(TokenId, f64)>> {
        self.local()?.sampling_distribution(context)
    }

    fn token_logprob(&self, context: &[TokenId], token: TokenId) -> Result<f64> {
        self.local()?.token_logprob(context, token)
    }

    fn score_continuation(&self, context: &[TokenId], continuation: &[TokenId]) -> Result<Vec<TokenScore>> {
        self.local()?.score_continuation(context, continuation)
    }

    fn generate(&self, prompt: &TokenSeq, decoding: &DecodingParams, key: RngKey) -> Result<TokenSeq> {
        self.local()?.generate(prompt, decoding, key)
    }
}

/// What a corpus item contributes to training: `(context, trained tokens)`.
/// Real items train on the prompt; synthetic items train on the continuation
/// with the prompt as conditioning context only.
pub(crate) type Span<'a> = (&'a [TokenId], &'a [TokenId]);

pub(crate) fn training_spans(corpus: &MixedCorpus) -> Vec<Span<'_>> {
    corpus
        .items
        .iter()
        .filter_map(|item| match (item.provenance, &item.continuation) {
            (Provenance::Real, _) => Some((&[][..], item.prompt.seq.tokens.as_slice())),
            (Provenance::Synthetic, Some(c)) => {
                Some((item.prompt.seq.tokens.as_slice(), c.tokens.as_slice()))
            }
            (Provenance::Synthetic, None) => None,
        })
        .collect()
}
