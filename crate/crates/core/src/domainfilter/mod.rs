//! Domain-aligned corpus construction: sentence-aware segmentation, topic
//! matching against exemplar questions, reranking and block packing.

mod embed;
mod segment;

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{pack_blocks, Document, PackReport, TokenSeq, Tokenizer};
use crate::error::{Error, Result};
use crate::http::{EndpointConfig, HttpClient};
use crate::metrics::{fmt_f64, fmt_opt, words};
use crate::rng::{Role, RngKey};

pub use embed::{fnv1a, term_bucket, EmbedBackend, Embedder, Embedding, TfidfModel, HASH_DIM};
pub use segment::{
    sections, segment, split_sentences, DroppedSection, Section, Segment, SegmentConfig, Segmentation,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicAssignment {
    pub segment_id: String,
    pub topic: String,
    pub similarity: f64,
    pub low_confidence: bool,
}

/// Normalized mean exemplar embedding per topic.
pub fn topic_centroids(
    exemplars: &BTreeMap<String, Vec<String>>,
    embedder: &Embedder,
) -> Result<BTreeMap<String, Embedding>> {
    if exemplars.is_empty() {
        return Err(Error::Config("no topics configured".into()));
    }
    let mut out = BTreeMap::new();
    for (topic, qs) in exemplars {
        if qs.is_empty() {
            return Err(Error::Config(format!("topic '{topic}' has no exemplars")));
        }
        let items: Vec<(&str, &str)> = qs.iter().map(|q| (topic.as_str(), q.as_str())).collect();
        let embs = embedder.embed_all(&items)?;
        let refs: Vec<&Embedding> = embs.iter().collect();
        out.insert(topic.clone(), Embedding::centroid(&refs, embedder.backend_id()).unwrap());
    }
    Ok(out)
}

/// Assign each embedded segment to its most similar centroid; ties go to the
/// topic that sorts first.
pub fn assign_topics(
    segments: &[(&str, &Embedding)],
    centroids: &BTreeMap<String, Embedding>,
    low_confidence_below: f64,
) -> Vec<TopicAssignment> {
    segments
        .iter()
        .map(|(id, e)| {
            let mut best: Option<(&String, f64)> = None;
            for (topic, c) in centroids {
                let s = e.cosine(c);
                if best.is_none_or(|(_, b)| s > b) {
                    best = Some((topic, s));
                }
            }
            let (topic, similarity) = best.expect("at least one topic");
            TopicAssignment {
                segment_id: id.to_string(),
                topic: topic.clone(),
                similarity,
                low_confidence: similarity < low_confidence_below,
            }
        })
        .collect()
}

pub fn topic_match(
    segments: &[Segment],
    exemplars: &BTreeMap<String, Vec<String>>,
    embedder: &Embedder,
    low_confidence_below: f64,
) -> Result<Vec<TopicAssignment>> {
    let centroids = topic_centroids(exemplars, embedder)?;
    let items: Vec<(&str, &str)> = segments.iter().map(|s| (s.id.as_str(), s.text.as_str())).collect();
    let embs = embedder.embed_all(&items)?;
    let pairs: Vec<(&str, &Embedding)> = segments.iter().map(|s| s.id.as_str()).zip(&embs).collect();
    Ok(assign_topics(&pairs, &centroids, low_confidence_below))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "backend", rename_all = "snake_case")]
pub enum RerankBackend {
    #[default]
    Builtin,
    Remote { endpoint: EndpointConfig },
}

/// Idf-weighted Dice overlap between the term sets of a query and a passage.
pub fn overlap_score(idf: &TfidfModel, query: &str, passage: &str) -> f64 {
    let q: HashSet<String> = words(query).into_iter().collect();
    let p: HashSet<String> = words(passage).into_iter().collect();
    let mut qs: Vec<&String> = q.iter().collect();
    qs.sort();
    let wq: f64 = qs.iter().map(|t| idf.idf(t)).sum();
    let mut ps: Vec<&String> = p.iter().collect();
    ps.sort();
    let wp: f64 = ps.iter().map(|t| idf.idf(t)).sum();
    if wq + wp == 0.0 {
        return 0.0;
    }
    let shared: f64 = qs.iter().filter(|t| p.contains(**t)).map(|t| idf.idf(t)).sum();
    2.0 * shared / (wq + wp)
}

#[derive(Serialize)]
struct RerankRequest<'a> {
    query: &'a str,
    passages: &'a [&'a str],
}

#[derive(Deserialize)]
struct RerankResponse {
    scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ranked {
    pub index: usize,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct RerankOutcome {
    /// Top candidates by score, ties in input order.
    pub ranked: Vec<Ranked>,
    /// Every candidate's score, in input order.
    pub scores: Vec<f64>,
    pub fell_back: bool,
}

fn builtin_scores(idf: &TfidfModel, passages: &[&str], queries: &[String]) -> Vec<f64> {
    use rayon::prelude::*;
    passages
        .par_iter()
        .map(|p| {
            queries
                .iter()
                .map(|q| overlap_score(idf, q, p))
                .fold(0.0, f64::max)
        })
        .collect()
}

fn remote_scores(http: &HttpClient, passages: &[&str], queries: &[String]) -> Result<Vec<f64>> {
    let mut best = vec![f64::NEG_INFINITY; passages.len()];
    for q in queries {
        let r: RerankResponse = http.post_json(&RerankRequest { query: q, passages })?;
        if r.scores.len() != passages.len() {
            return Err(Error::Transport(format!(
                "reranker returned {} scores for {} passages",
                r.scores.len(),
                passages.len()
            )));
        }
        for (b, s) in best.iter_mut().zip(r.scores) {
            *b = b.max(s);
        }
    }
    Ok(best)
}

/// Score candidates against the query set (max over queries) and keep the
/// `top_n` best. A failing remote reranker falls back to the built-in score.
pub fn rerank(
    candidates: &[Segment],
    queries: &[String],
    top_n: usize,
    backend: &RerankBackend,
    idf: &TfidfModel,
) -> Result<RerankOutcome> {
    if candidates.is_empty() {
        return Err(Error::Argument("no candidates to rerank".into()));
    }
    if queries.is_empty() {
        return Err(Error::Argument("no queries to rerank against".into()));
    }
    let passages: Vec<&str> = candidates.iter().map(|c| c.text.as_str()).collect();
    let (scores, fell_back) = match backend {
        RerankBackend::Builtin => (builtin_scores(idf, &passages, queries), false),
        RerankBackend::Remote { endpoint } => {
            match HttpClient::new(endpoint.clone()).and_then(|h| remote_scores(&h, &passages, queries)) {
                Ok(s) => (s, false),
                Err(e) => {
                    tracing::warn!("reranker failed, using built-in overlap score: {e}");
                    (builtin_scores(idf, &passages, queries), true)
                }
            }
        }
    };
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(top_n);
    Ok(RerankOutcome {
        ranked: order.into_iter().map(|i| Ranked { index: i, score: scores[i] }).collect(),
        scores,
        fell_back,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DomainConfig {
    pub segment: SegmentConfig,
    /// Segments less similar than this to their topic are discarded.
    pub similarity_floor: f64,
    pub low_confidence_below: f64,
    pub top_n: usize,
    pub target_blocks: usize,
    /// Cycle seeded shuffles of the retained segments until the block target
    /// is met.
    pub allow_oversample: bool,
    pub embed: EmbedBackend,
    pub rerank: RerankBackend,
    pub seed: u64,
}

impl Default for DomainConfig {
    fn default() -> Self {
        Self {
            segment: SegmentConfig::default(),
            similarity_floor: 0.0,
            low_confidence_below: 0.05,
            top_n: 100,
            target_blocks: 8000,
            allow_oversample: false,
            embed: EmbedBackend::default(),
            rerank: RerankBackend::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub segment_id: String,
    pub topic: String,
    pub similarity: f64,
    pub rerank_score: Option<f64>,
    pub retained: bool,
}

pub fn audit_csv(rows: &[AuditRow]) -> String {
    let mut out = String::from("segment_id,topic,similarity,rerank_score,retained\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            crate::metrics::csv_field(&r.segment_id),
            crate::metrics::csv_field(&r.topic),
            fmt_f64(r.similarity),
            fmt_opt(r.rerank_score),
            r.retained
        );
    }
    out
}

#[derive(Debug, Clone)]
pub struct DomainCorpus {
    pub blocks: Vec<TokenSeq>,
    /// Retained segments in rank order.
    pub retained: Vec<Segment>,
    pub audit: Vec<AuditRow>,
    pub pack: PackReport,
    pub dropped_sections: Vec<DroppedSection>,
    pub rerank_fell_back: bool,
    pub diagnostics: Vec<String>,
}

/// segment → topic match (keep `topic` above the floor) → rerank against the
/// topic's exemplars → pack into fixed-length blocks.
pub fn build_domain_corpus(
    documents: &[Document],
    topic: &str,
    exemplars: &BTreeMap<String, Vec<String>>,
    tokenizer: &Tokenizer,
    cfg: &DomainConfig,
) -> Result<DomainCorpus> {
    let queries = exemplars
        .get(topic)
        .ok_or_else(|| Error::Config(format!("topic '{topic}' has no exemplars")))?;
    let seg = segment(documents, tokenizer, &cfg.segment)?;
    let mut diagnostics = Vec::new();
    if !seg.dropped.is_empty() {
        diagnostics.push(format!(
            "dropped {} sections shorter than {:.1} tokens",
            seg.dropped.len(),
            cfg.segment.min_frac * seg.mean_section_len
        ));
    }

    let fit_texts = seg
        .segments
        .iter()
        .map(|s| s.text.as_str())
        .chain(exemplars.values().flatten().map(String::as_str));
    let idf = TfidfModel::fit(fit_texts.clone());
    let embedder = match &cfg.embed {
        EmbedBackend::BuiltinTfidf => Embedder::Tfidf(idf.clone()),
        other => Embedder::new(other, fit_texts)?,
    };
    let assignments = topic_match(&seg.segments, exemplars, &embedder, cfg.low_confidence_below)?;

    let candidates: Vec<usize> = assignments
        .iter()
        .enumerate()
        .filter(|(_, a)| a.topic == topic && a.similarity >= cfg.similarity_floor && !a.low_confidence)
        .map(|(i, _)| i)
        .collect();
    let mut audit: Vec<AuditRow> = assignments
        .iter()
        .map(|a| AuditRow {
            segment_id: a.segment_id.clone(),
            topic: a.topic.clone(),
            similarity: a.similarity,
            rerank_score: None,
            retained: false,
        })
        .collect();

    let mut retained = Vec::new();
    let mut rerank_fell_back = false;
    if candidates.is_empty() {
        diagnostics.push(format!(
            "no segment matched topic '{topic}' at similarity >= {}",
            cfg.similarity_floor
        ));
    } else {
        let cand_segs: Vec<Segment> = candidates.iter().map(|&i| seg.segments[i].clone()).collect();
        let outcome = rerank(&cand_segs, queries, cfg.top_n, &cfg.rerank, &idf)?;
        rerank_fell_back = outcome.fell_back;
        if outcome.fell_back {
            diagnostics.push("remote reranker unavailable; built-in overlap score used".into());
        }
        for (k, &i) in candidates.iter().enumerate() {
            audit[i].rerank_score = Some(outcome.scores[k]);
        }
        for r in &outcome.ranked {
            audit[candidates[r.index]].retained = true;
            retained.push(cand_segs[r.index].clone());
        }
    }

    let block_len = cfg.segment.target_len;
    let mut stream: Vec<TokenSeq> = retained.iter().map(|s| s.tokens.clone()).collect();
    let retained_tokens: usize = stream.iter().map(TokenSeq::len).sum();
    if cfg.allow_oversample && retained_tokens > 0 {
        let needed = cfg.target_blocks * block_len;
        let rounds = needed.div_ceil(retained_tokens) * 5 / 4 + 1;
        for r in 1..rounds {
            let mut order: Vec<usize> = (0..retained.len()).collect();
            order.shuffle(&mut RngKey::new(cfg.seed, 0, Role::Oversample, r as u64).rng());
            stream.extend(order.into_iter().map(|i| retained[i].tokens.clone()));
        }
    }
    let packed = pack_blocks(&stream, block_len, cfg.target_blocks)?;
    if packed.report.shortfall() > 0 {
        diagnostics.push(format!(
            "packed {} of {} requested blocks{}",
            packed.report.returned,
            packed.report.requested,
            if cfg.allow_oversample { "" } else { " (oversampling disabled)" }
        ));
    }
    Ok(DomainCorpus {
        blocks: packed.blocks,
        retained,
        audit,
        pack: packed.report,
        dropped_sections: seg.dropped,
        rerank_fell_back,
        diagnostics,
    })
}
