use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{QAItem, TokenId, Tokenizer};
use crate::error::{Error, Result};
use crate::models::{DecodingParams, LanguageModel};
use crate::prompts::{self, FormatKind, InstructionFormat, Templates};
use crate::rng::{Role, RngKey};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptionScore {
    pub option_index: usize,
    /// Mean per-token log-probability in nats.
    pub score: f64,
    /// Best minus second-best score on the best option, 0 elsewhere.
    pub margin_to_next: f64,
    /// Every token of the option was the model's top choice.
    pub fully_greedy: bool,
}

/// Score token-level options appended to a tokenized prompt.
pub fn option_scores_tokens(
    model: &dyn LanguageModel,
    prompt: &[TokenId],
    options: &[Vec<TokenId>],
) -> Result<Vec<OptionScore>> {
    if options.is_empty() {
        return Err(Error::Argument("no options to score".into()));
    }
    if !model.supports_logprobs() {
        return Err(Error::Capability(format!(
            "{} does not provide log-probabilities",
            model.describe()
        )));
    }
    let mut out = Vec::with_capacity(options.len());
    for (i, opt) in options.iter().enumerate() {
        if opt.is_empty() {
            return Err(Error::Argument(format!("option {i} has no tokens")));
        }
        let scores = model.score_continuation(prompt, opt)?;
        if scores.is_empty() {
            return Err(Error::Transport(format!("no scores returned for option {i}")));
        }
        let mean = scores.iter().map(|s| s.logprob).sum::<f64>() / scores.len() as f64;
        out.push(OptionScore {
            option_index: i,
            score: mean,
            margin_to_next: 0.0,
            fully_greedy: scores.iter().all(|s| s.greedy),
        });
    }
    let best = best_index(&out);
    let second = out
        .iter()
        .filter(|s| s.option_index != best)
        .map(|s| s.score)
        .fold(f64::NEG_INFINITY, f64::max);
    let top = out[best].score;
    out[best].margin_to_next = if out.len() < 2 || top == second {
        0.0
    } else {
        top - second
    };
    Ok(out)
}

/// Argmax with ties to the lowest index.
pub fn best_index(scores: &[OptionScore]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if s.score > scores[best].score {
            best = i;
        }
    }
    best
}

/// Score text options after a rendered prompt.
pub fn option_scores(
    model: &dyn LanguageModel,
    tokenizer: &Tokenizer,
    rendered_prompt: &str,
    options: &[String],
) -> Result<Vec<OptionScore>> {
    let prompt = tokenizer.encode(rendered_prompt).tokens;
    let opts: Vec<Vec<TokenId>> = options.iter().map(|o| tokenizer.encode(o).tokens).collect();
    option_scores_tokens(model, &prompt, &opts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub item_id: String,
    pub chosen_index: Option<usize>,
    pub correct: bool,
    /// `exp` of the chosen option's mean token log-probability.
    pub confidence: Option<f64>,
    pub fully_greedy: bool,
    pub raw_text: String,
    /// Option the free-form answer parsed to, when answers are generated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parsed_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub option_scores: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl AnswerRecord {
    /// Whether the record counts towards format adherence.
    pub fn adheres(&self, mode: AnswerMode) -> bool {
        match mode {
            AnswerMode::Loglik => self.chosen_index.is_some(),
            AnswerMode::Generate => self.parsed_index.is_some(),
        }
    }
}

/// How answers are obtained: option log-likelihood, or a generated free-form
/// answer mapped back with [`prompts::parse_answer`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerMode {
    #[default]
    Loglik,
    Generate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub answer_mode: AnswerMode,
    /// Length of generated answers in `generate` mode.
    pub answer_tokens: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            answer_mode: AnswerMode::Loglik,
            answer_tokens: 16,
        }
    }
}

/// Everything needed to evaluate items of one cell.
pub struct Evaluator<'a> {
    pub model: &'a dyn LanguageModel,
    pub tokenizer: &'a Tokenizer,
    pub templates: &'a Templates,
    pub exemplars: &'a [QAItem],
    pub options: &'a EvalOptions,
    pub seed: u64,
}

impl Evaluator<'_> {
    fn prepared(&self, item: &QAItem, format: &InstructionFormat) -> (QAItem, Vec<QAItem>) {
        let ex = &self.exemplars[..format.exemplars_needed().min(self.exemplars.len())];
        if format.kind == FormatKind::ShortAnswer {
            (prompts::to_short_answer(item), ex.iter().map(prompts::to_short_answer).collect())
        } else {
            (item.clone(), ex.to_vec())
        }
    }

    pub fn evaluate_item(&self, item: &QAItem, format: &InstructionFormat, index: usize) -> AnswerRecord {
        match self.try_evaluate(item, format, index) {
            Ok(r) => r,
            Err(e) => AnswerRecord {
                item_id: item.id.clone(),
                chosen_index: None,
                correct: false,
                confidence: None,
                fully_greedy: false,
                raw_text: String::new(),
                parsed_index: None,
                option_scores: None,
                margin: None,
                error: Some(e.to_string()),
            },
        }
    }

    fn try_evaluate(&self, item: &QAItem, format: &InstructionFormat, index: usize) -> Result<AnswerRecord> {
        let (item, exemplars) = self.prepared(item, format);
        let text = prompts::render_with(self.templates, &item, format, &exemplars)?;
        let prompt = self.tokenizer.encode(&text);
        let generate = self.options.answer_mode == AnswerMode::Generate || !self.model.supports_logprobs();

        let mut rec = AnswerRecord {
            item_id: item.id.clone(),
            chosen_index: None,
            correct: false,
            confidence: None,
            fully_greedy: false,
            raw_text: String::new(),
            parsed_index: None,
            option_scores: None,
            margin: None,
            error: None,
        };

        if self.model.supports_logprobs() {
            let opts: Vec<Vec<TokenId>> = item.options.iter().map(|o| self.tokenizer.encode(o).tokens).collect();
            let scores = option_scores_tokens(self.model, &prompt.tokens, &opts)?;
            let best = best_index(&scores);
            rec.chosen_index = Some(best);
            rec.confidence = Some(scores[best].score.exp().clamp(0.0, 1.0));
            rec.fully_greedy = scores[best].fully_greedy;
            rec.margin = Some(scores[best].margin_to_next);
            rec.option_scores = Some(scores.iter().map(|s| s.score).collect());
            rec.raw_text = item.options[best].clone();
        } else {
            rec.error = Some(format!("{} does not provide log-probabilities", self.model.describe()));
        }

        if generate {
            let key = RngKey::new(self.seed, self.model.generation_index().into(), Role::AnswerGeneration, index as u64);
            let out = self
                .model
                .generate(&prompt, &DecodingParams::greedy(self.options.answer_tokens), key)?;
            rec.raw_text = self.tokenizer.decode(&out.tokens);
            rec.parsed_index = prompts::parse_answer(&rec.raw_text, &item.options);
            if !self.model.supports_logprobs() {
                rec.chosen_index = rec.parsed_index;
            }
        }
        rec.correct = rec.chosen_index == Some(item.gold_index);
        Ok(rec)
    }

    /// Evaluate items concurrently; output follows input order.
    pub fn evaluate_all(&self, items: &[QAItem], format: &InstructionFormat) -> Vec<AnswerRecord> {
        items
            .par_iter()
            .enumerate()
            .map(|(i, item)| self.evaluate_item(item, format, i))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n: usize,
    pub accuracy: f64,
    pub greedy_rate: f64,
    /// Largest share any option receives among parsed answers; `None` when
    /// nothing parsed.
    pub max_frequency: Option<f64>,
    pub mean_confidence: Option<f64>,
    pub adherence: f64,
}

/// Fold records in order. Unparsed answers count as wrong and are left out of
/// the `max_frequency` denominator.
pub fn aggregate(records: &[AnswerRecord], mode: AnswerMode) -> Result<Aggregate> {
    if records.is_empty() {
        return Err(Error::Argument("no answer records to aggregate".into()));
    }
    let n = records.len() as f64;
    let correct = records.iter().filter(|r| r.correct).count() as f64;
    let greedy = records.iter().filter(|r| r.fully_greedy).count() as f64;
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for r in records {
        if let Some(c) = r.chosen_index {
            *counts.entry(c).or_default() += 1;
        }
    }
    let parsed: usize = counts.values().sum();
    let max_frequency = (parsed > 0).then(|| *counts.values().max().unwrap() as f64 / parsed as f64);
    let conf: Vec<f64> = records.iter().filter_map(|r| r.confidence).collect();
    let mean_confidence = (!conf.is_empty()).then(|| conf.iter().sum::<f64>() / conf.len() as f64);
    let adherence = records.iter().filter(|r| r.adheres(mode)).count() as f64 / n;
    Ok(Aggregate {
        n: records.len(),
        accuracy: correct / n,
        greedy_rate: greedy / n,
        max_frequency,
        mean_confidence,
        adherence,
    })
}
