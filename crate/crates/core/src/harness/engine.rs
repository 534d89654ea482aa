//! Data loading, per-generation evaluation and the train step, shared by
//! persisted runs, evaluation-only runs and in-memory simulations.

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::config::{ExperimentConfig, ModelSpec};
use crate::analysis::{classify, Stage};
use crate::corpus::{
    self, extract_prompts, mix_corpus, Document, MixedCorpus, Prompt, QAItem, TokenSeq, Tokenizer,
};
use crate::domainfilter::fnv1a;
use crate::error::{Error, Result};
use crate::metrics::{
    aggregate, dynamic_perplexity, sample_generations, shannon_entropy, static_perplexity, words,
    AnswerRecord, EntailmentClient, Evaluator, GenerationReport, GibberishScorer, JudgeClient,
};
use crate::models::{DecodingParams, LanguageModel, ModelHandle, ModelState, NGramModel, TrainUpdate};
use crate::prompts::{InstructionFormat, Templates};
use crate::rng::{Role, RngKey};

/// Tokens of the conditioning prefix for dynamic-perplexity generations.
const CONDITIONING_LEN: usize = 16;

#[derive(Debug, Clone)]
pub struct SubjectData {
    pub name: String,
    /// Held-out items few-shot prompts draw their solved examples from.
    pub exemplars: Vec<QAItem>,
    pub items: Vec<QAItem>,
}

/// Loaded inputs of a run.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub tokenizer: Arc<Tokenizer>,
    pub templates: Templates,
    pub subjects: Vec<SubjectData>,
    pub train: Vec<TokenSeq>,
    pub prompts: Vec<Prompt>,
    pub prompt_shortfall: usize,
    pub heldout: Vec<TokenSeq>,
    pub conditioning: Vec<TokenSeq>,
    pub dictionary: HashSet<String>,
}

/// The raw inputs a workspace is built from.
#[derive(Debug, Clone, Default)]
pub struct Inputs {
    pub train: Vec<Document>,
    /// Defaults to `train` when empty.
    pub prompts: Vec<Document>,
    pub heldout: Vec<Document>,
    pub qa: Vec<QAItem>,
    pub templates: Option<Templates>,
}

impl Inputs {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let train = corpus::io::read_documents(&cfg.data.train)?;
        let prompts = match &cfg.data.prompts {
            Some(p) => corpus::io::read_documents(p)?,
            None => Vec::new(),
        };
        Ok(Self {
            train,
            prompts,
            heldout: corpus::io::read_documents(&cfg.data.heldout)?,
            qa: corpus::io::read_qa(&cfg.data.qa)?,
            templates: cfg.data.templates.as_deref().map(Templates::load_dir).transpose()?,
        })
    }
}

fn tokenizer_texts<'a>(inputs: &'a Inputs, templates: &'a Templates) -> Vec<&'a str> {
    let mut texts: Vec<&str> = Vec::new();
    for d in inputs.train.iter().chain(&inputs.prompts).chain(&inputs.heldout) {
        texts.push(&d.text);
    }
    for q in &inputs.qa {
        texts.push(&q.question);
        texts.extend(q.options.iter().map(String::as_str));
    }
    texts.push(&templates.zero_shot);
    texts.push(&templates.short_answer);
    texts.push(&templates.few_shot);
    texts
}

/// Fit the run's closed vocabulary on every text it will see.
pub fn fit_tokenizer(cfg: &ExperimentConfig, inputs: &Inputs) -> Tokenizer {
    let templates = inputs.templates.clone().unwrap_or_default();
    Tokenizer::fit(cfg.tokenizer, tokenizer_texts(inputs, &templates))
}

impl Workspace {
    pub fn build(cfg: &ExperimentConfig, inputs: &Inputs, tokenizer: Arc<Tokenizer>) -> Result<Self> {
        let templates = inputs.templates.clone().unwrap_or_default();
        let seed = cfg.seeds.master;
        if inputs.train.is_empty() {
            return Err(Error::Config("training corpus is empty".into()));
        }
        let train: Vec<TokenSeq> = inputs.train.iter().map(|d| tokenizer.encode(&d.text)).collect();

        let prompt_docs = if inputs.prompts.is_empty() { &inputs.train } else { &inputs.prompts };
        let ex = extract_prompts(prompt_docs, &tokenizer, cfg.training.prompt_len, cfg.training.prompt_count, seed);
        if ex.prompts.is_empty() && cfg.generations > 0 {
            return Err(Error::Config(format!(
                "no prompt of {} tokens can be cut from the prompt corpus",
                cfg.training.prompt_len
            )));
        }

        let mut heldout_docs: Vec<&Document> = inputs.heldout.iter().collect();
        heldout_docs.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(cap) = cfg.evaluation.static_max_docs {
            heldout_docs.truncate(cap);
        }
        let heldout: Vec<TokenSeq> = heldout_docs
            .iter()
            .map(|d| tokenizer.encode(&d.text))
            .filter(|s| !s.is_empty())
            .collect();
        if heldout.is_empty() {
            return Err(Error::Config("held-out corpus is empty".into()));
        }
        let cond_len = CONDITIONING_LEN.min(cfg.training.prompt_len);
        let conditioning: Vec<TokenSeq> = extract_prompts(
            &inputs.heldout,
            &tokenizer,
            cond_len,
            cfg.evaluation.dynamic_samples.max(1),
            seed,
        )
        .prompts
        .into_iter()
        .map(|p| p.seq)
        .collect();
        if conditioning.is_empty() {
            return Err(Error::Config(format!(
                "held-out corpus has no document of {cond_len} tokens to condition generations on"
            )));
        }

        let subjects = split_subjects(cfg, &inputs.qa, seed)?;
        let dictionary = inputs.train.iter().flat_map(|d| words(&d.text)).collect();
        Ok(Self {
            tokenizer,
            templates,
            subjects,
            train,
            prompts: ex.prompts,
            prompt_shortfall: ex.report.shortfall(),
            heldout,
            conditioning,
            dictionary,
        })
    }

    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let inputs = Inputs::load(cfg)?;
        let tok = Arc::new(fit_tokenizer(cfg, &inputs));
        Self::build(cfg, &inputs, tok)
    }

    /// The generation-0 model: an n-gram fit on the training documents.
    pub fn base_model(&self, cfg: &ExperimentConfig) -> Result<ModelHandle> {
        let ModelSpec::Ngram {
            order,
            smoothing,
            sample_smoothing,
        } = &cfg.model;
        let m = NGramModel::fit(*order, self.tokenizer.vocab_size(), *smoothing, *sample_smoothing, &self.train)?;
        Ok(ModelHandle::new(ModelState::Ngram(m)))
    }
}

/// Per subject: a seeded shuffle sets aside the few-shot exemplar pool, the
/// rest (optionally capped) is evaluated.
fn split_subjects(cfg: &ExperimentConfig, qa: &[QAItem], seed: u64) -> Result<Vec<SubjectData>> {
    let mut by_subject: BTreeMap<&str, Vec<&QAItem>> = BTreeMap::new();
    for q in qa {
        by_subject.entry(&q.subject).or_default().push(q);
    }
    let names: Vec<String> = if cfg.subjects.is_empty() {
        by_subject.keys().map(|s| s.to_string()).collect()
    } else {
        cfg.subjects.clone()
    };
    let pool = cfg.formats.iter().map(|f| f.exemplars_needed()).max().unwrap_or(0);
    let mut out = Vec::new();
    for name in names {
        let mut items: Vec<QAItem> = by_subject
            .get(name.as_str())
            .ok_or_else(|| Error::Config(format!("subject '{name}' has no QA items")))?
            .iter()
            .map(|q| (*q).clone())
            .collect();
        items.sort_by(|a, b| a.id.cmp(&b.id));
        let key = RngKey::new(seed, 0, Role::ExemplarSplit, u64::from(fnv1a(name.as_bytes())));
        items.shuffle(&mut key.rng());
        if items.len() <= pool {
            return Err(Error::Config(format!(
                "subject '{name}' has {} items, need more than {pool} for the exemplar pool",
                items.len()
            )));
        }
        let mut rest = items.split_off(pool);
        rest.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(cap) = cfg.evaluation.max_items_per_subject {
            rest.truncate(cap);
        }
        out.push(SubjectData {
            name,
            exemplars: items,
            items: rest,
        });
    }
    Ok(out)
}

/// Model-level measurements shared by every cell of a generation.
#[derive(Debug, Clone, Default)]
pub struct ModelMetrics {
    pub entropy_nats: Option<f64>,
    pub static_ppl: Option<f64>,
    pub dynamic_ppl: Option<f64>,
    pub gibberish_mean: Option<f64>,
    pub gibberish_fallback: bool,
    pub failures: Vec<String>,
}

pub fn model_metrics(
    model: &dyn LanguageModel,
    ws: &Workspace,
    cfg: &ExperimentConfig,
    generation: u32,
    scorer: &GibberishScorer,
) -> ModelMetrics {
    let mut m = ModelMetrics::default();
    let scored = model.supports_logprobs();
    if scored {
        match static_perplexity(model, &ws.heldout) {
            Ok(p) => m.static_ppl = Some(p),
            Err(e) => m.failures.push(format!("static perplexity: {e}")),
        }
    }
    let decoding = DecodingParams {
        max_new_tokens: cfg.evaluation.dynamic_len,
        ..cfg.decoding.clone()
    };
    let key = RngKey::new(cfg.seeds.master, generation.into(), Role::DynamicGeneration, 0);
    if cfg.evaluation.dynamic_samples == 0 {
        return m;
    }
    match sample_generations(model, &ws.conditioning, cfg.evaluation.dynamic_samples, &decoding, key) {
        Ok(gens) => {
            let pooled: Vec<u32> = gens.outputs.iter().flat_map(|o| o.tokens.iter().copied()).collect();
            m.entropy_nats = shannon_entropy(&pooled).ok();
            if scored {
                match dynamic_perplexity(model, &gens) {
                    Ok(p) => m.dynamic_ppl = Some(p),
                    Err(e) => m.failures.push(format!("dynamic perplexity: {e}")),
                }
            }
            let scores: Vec<(f64, bool)> = gens
                .outputs
                .par_iter()
                .map(|o| scorer.score(&ws.tokenizer.decode(&o.tokens)))
                .collect();
            if !scores.is_empty() {
                m.gibberish_mean = Some(scores.iter().map(|s| s.0).sum::<f64>() / scores.len() as f64);
                m.gibberish_fallback = scores.iter().any(|s| s.1);
            }
        }
        Err(e) => m.failures.push(format!("generation: {e}")),
    }
    m
}

/// Remote clients for the semantic-fidelity metrics.
#[derive(Debug, Clone, Default)]
pub struct Semantic {
    pub judge: Option<JudgeClient>,
    pub entailment: Option<EntailmentClient>,
}

impl Semantic {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        Ok(Self {
            judge: cfg.endpoints.judge.clone().map(JudgeClient::new).transpose()?,
            entailment: cfg.endpoints.entailment.clone().map(EntailmentClient::new).transpose()?,
        })
    }
}

pub type CellKey = (String, String);

#[derive(Debug, Clone)]
pub struct CellResult {
    pub subject: String,
    pub format: String,
    pub report: GenerationReport,
    pub answers: Vec<AnswerRecord>,
    pub failure: Option<String>,
}

impl CellResult {
    pub fn key(&self) -> CellKey {
        (self.subject.clone(), self.format.clone())
    }
}

/// Stage bookkeeping for one series: baseline accuracy and worst stage so
/// far per cell.
#[derive(Debug, Clone, Default)]
pub struct StageTrack {
    pub baseline: BTreeMap<CellKey, f64>,
    pub worst: BTreeMap<CellKey, Stage>,
}

impl StageTrack {
    pub fn observe(&mut self, report: &GenerationReport) {
        let key = (report.subject.clone(), report.format.clone());
        if report.generation == 0 {
            self.baseline.insert(key.clone(), report.accuracy);
        }
        if let Some(s) = report.stage {
            self.worst.insert(key, s);
        }
    }
}

/// Evaluate every (subject, format) cell of one generation.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_cells(
    model: &dyn LanguageModel,
    ws: &Workspace,
    cfg: &ExperimentConfig,
    generation: u32,
    alpha: f64,
    metrics: &ModelMetrics,
    semantic: &Semantic,
    track: &StageTrack,
) -> Vec<CellResult> {
    let cells: Vec<(&SubjectData, &InstructionFormat)> = ws
        .subjects
        .iter()
        .flat_map(|s| cfg.formats.iter().map(move |f| (s, f)))
        .collect();
    cells
        .par_iter()
        .map(|(subject, format)| {
            let ev = Evaluator {
                model,
                tokenizer: &ws.tokenizer,
                templates: &ws.templates,
                exemplars: &subject.exemplars,
                options: &cfg.evaluation.answers,
                seed: cfg.seeds.master,
            };
            let answers = ev.evaluate_all(&subject.items, format);
            let key = (subject.name.clone(), format.name().to_owned());
            let mut failure = None;
            let errors = answers.iter().filter(|a| a.error.is_some()).count();
            if errors > 0 {
                failure = answers
                    .iter()
                    .find_map(|a| a.error.clone())
                    .map(|e| format!("{errors} item(s) failed, first: {e}"));
            }
            let agg = aggregate(&answers, cfg.evaluation.answers.answer_mode);
            let (judge_mean, judge_missing, entailment_mean, entailment_missing) =
                semantic_scores(semantic, &subject.items, &answers, cfg.evaluation.semantic_items);
            let mut report = GenerationReport {
                generation,
                alpha,
                subject: subject.name.clone(),
                format: format.name().to_owned(),
                model: model.describe(),
                n_items: answers.len(),
                accuracy: 0.0,
                greedy_rate: 0.0,
                max_frequency: None,
                mean_confidence: None,
                adherence: 0.0,
                entropy_nats: metrics.entropy_nats,
                static_ppl: metrics.static_ppl,
                dynamic_ppl: metrics.dynamic_ppl,
                gibberish_mean: metrics.gibberish_mean,
                gibberish_fallback: metrics.gibberish_fallback,
                judge_mean,
                judge_missing,
                entailment_mean,
                entailment_missing,
                errors,
                stage: None,
                raw_stage: None,
                note: None,
            };
            match agg {
                Ok(a) => {
                    report.accuracy = a.accuracy;
                    report.greedy_rate = a.greedy_rate;
                    report.max_frequency = a.max_frequency;
                    report.mean_confidence = a.mean_confidence;
                    report.adherence = a.adherence;
                }
                Err(e) => failure = Some(e.to_string()),
            }
            let baseline = if generation == 0 {
                Some(report.accuracy)
            } else {
                track.baseline.get(&key).copied()
            };
            match baseline {
                Some(b) => match classify(
                    report.accuracy,
                    report.adherence,
                    report.gibberish_mean.unwrap_or(3.0),
                    b,
                    &cfg.thresholds,
                ) {
                    Ok(s) => {
                        report.raw_stage = Some(s);
                        report.stage = Some(track.worst.get(&key).map_or(s, |w| (*w).max(s)));
                    }
                    Err(e) => {
                        report.note = Some(e.to_string());
                        failure.get_or_insert_with(|| e.to_string());
                    }
                },
                None => report.note = Some("no baseline report for this cell".into()),
            }
            CellResult {
                subject: subject.name.clone(),
                format: format.name().to_owned(),
                report,
                answers,
                failure,
            }
        })
        .collect()
}

fn semantic_scores(
    semantic: &Semantic,
    items: &[QAItem],
    answers: &[AnswerRecord],
    limit: usize,
) -> (Option<f64>, usize, Option<f64>, usize) {
    let pairs: Vec<(&QAItem, &AnswerRecord)> = items.iter().zip(answers).take(limit).collect();
    let mut judge_mean = None;
    let mut judge_missing = 0;
    if let Some(j) = &semantic.judge {
        let scores: Vec<Option<u8>> = pairs
            .iter()
            .map(|(q, a)| j.judge_score(&q.question, q.gold(), &a.raw_text))
            .collect();
        judge_missing = scores.iter().filter(|s| s.is_none()).count();
        let got: Vec<f64> = scores.iter().flatten().map(|s| f64::from(*s)).collect();
        judge_mean = (!got.is_empty()).then(|| got.iter().sum::<f64>() / got.len() as f64);
    }
    let mut entailment_mean = None;
    let mut entailment_missing = 0;
    if let Some(e) = &semantic.entailment {
        let scores: Vec<Option<f64>> = pairs.iter().map(|(q, a)| e.entailment_score(q.gold(), &a.raw_text)).collect();
        entailment_missing = scores.iter().filter(|s| s.is_none()).count();
        let got: Vec<f64> = scores.iter().flatten().copied().collect();
        entailment_mean = (!got.is_empty()).then(|| got.iter().sum::<f64>() / got.len() as f64);
    }
    (judge_mean, judge_missing, entailment_mean, entailment_missing)
}

/// One recursive step: build the generation-`g` corpus from `model`, then
/// apply the light-touch update.
pub fn train_step(
    model: &ModelHandle,
    ws: &Workspace,
    cfg: &ExperimentConfig,
    alpha: f64,
    generation: u32,
) -> Result<(MixedCorpus, ModelHandle)> {
    let corpus = mix_corpus(&ws.prompts, model, alpha, &cfg.decoding, generation, cfg.seeds.master)?;
    let next = model.train_update(TrainUpdate {
        eta: cfg.training.eta,
        corpus: &corpus,
    })?;
    Ok((corpus, next))
}

/// Run every alpha in memory without persisting anything; returns one
/// report list per alpha, in config order, generation-major.
pub fn simulate(cfg: &ExperimentConfig, ws: &Workspace) -> Result<Vec<Vec<GenerationReport>>> {
    let base = ws.base_model(cfg)?;
    let scorer = GibberishScorer::new(cfg.evaluation.gibberish.clone(), Some(ws.dictionary.clone()))?;
    let semantic = Semantic::from_config(cfg)?;
    let base_metrics = model_metrics(&base, ws, cfg, 0, &scorer);
    let base_cells = evaluate_cells(&base, ws, cfg, 0, 0.0, &base_metrics, &semantic, &StageTrack::default());
    let mut out = Vec::new();
    for &alpha in &cfg.alphas {
        let mut track = StageTrack::default();
        let mut reports = Vec::new();
        for c in &base_cells {
            let r = GenerationReport {
                alpha,
                ..c.report.clone()
            };
            track.observe(&r);
            reports.push(r);
        }
        let mut model = base.clone();
        for g in 1..=cfg.generations {
            let (_, next) = train_step(&model, ws, cfg, alpha, g)?;
            model = next;
            let metrics = model_metrics(&model, ws, cfg, g, &scorer);
            for c in evaluate_cells(&model, ws, cfg, g, alpha, &metrics, &semantic, &track) {
                track.observe(&c.report);
                reports.push(c.report);
            }
        }
        out.push(reports);
    }
    Ok(out)
}
