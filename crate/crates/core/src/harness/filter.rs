//! The `filter` job: build a topic-aligned corpus from a document file and
//! write it with its audit trail.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::manifest::write_atomic;
use super::run::to_jsonl;
use crate::corpus::io::{read_documents, read_qa};
use crate::corpus::{Tokenizer, TokenizerKind};
use crate::domainfilter::{audit_csv, build_domain_corpus, DomainConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub tokenizer: TokenizerKind,
    #[serde(flatten)]
    pub domain: DomainConfig,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            tokenizer: TokenizerKind::WordPunct,
            domain: DomainConfig::default(),
        }
    }
}

impl FilterConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("filter config serializes")
    }
}

/// Exemplar questions per topic, from either a JSON object
/// `{topic: [question, ...]}` or a QA JSONL file grouped by subject.
pub fn load_exemplars(path: &Path) -> Result<BTreeMap<String, Vec<String>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if let Ok(map) = serde_json::from_str::<BTreeMap<String, Vec<String>>>(&text) {
        return Ok(map);
    }
    let mut map: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for q in read_qa(path)? {
        map.entry(q.subject).or_default().push(q.question);
    }
    if map.is_empty() {
        return Err(Error::Config(format!("{} holds no exemplars", path.display())));
    }
    Ok(map)
}

#[derive(Debug, Clone)]
pub struct FilterJob {
    pub corpus: PathBuf,
    pub topic: String,
    pub exemplars: PathBuf,
    pub out: PathBuf,
    pub config: FilterConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSummary {
    pub topic: String,
    pub documents: usize,
    pub segments_retained: usize,
    pub blocks: usize,
    pub shortfall: usize,
    pub dropped_sections: usize,
    pub rerank_fell_back: bool,
    pub diagnostics: Vec<String>,
}

/// Outputs: `corpus.txt` (one block per paragraph, usable as a prompt
/// corpus), `blocks.jsonl`, `segments.jsonl`, `audit.csv`,
/// `dropped_sections.jsonl`, `tokenizer.json` and `summary.json`.
pub fn run_filter(job: &FilterJob) -> Result<FilterSummary> {
    let docs = read_documents(&job.corpus)?;
    let exemplars = load_exemplars(&job.exemplars)?;
    let tok = Tokenizer::fit(job.config.tokenizer, docs.iter().map(|d| d.text.as_str()));
    let dc = build_domain_corpus(&docs, &job.topic, &exemplars, &tok, &job.config.domain)?;
    let out = &job.out;
    let text: Vec<String> = dc.blocks.iter().map(|b| tok.decode(&b.tokens)).collect();
    write_atomic(&out.join("corpus.txt"), (text.join("\n\n") + "\n").as_bytes())?;
    let blocks: Vec<&Vec<u32>> = dc.blocks.iter().map(|b| &b.tokens).collect();
    write_atomic(&out.join("blocks.jsonl"), &to_jsonl(&blocks)?)?;
    write_atomic(&out.join("segments.jsonl"), &to_jsonl(&dc.retained)?)?;
    write_atomic(&out.join("audit.csv"), audit_csv(&dc.audit).as_bytes())?;
    write_atomic(&out.join("dropped_sections.jsonl"), &to_jsonl(&dc.dropped_sections)?)?;
    write_atomic(&out.join("tokenizer.json"), tok.to_json()?.as_bytes())?;
    let summary = FilterSummary {
        topic: job.topic.clone(),
        documents: docs.len(),
        segments_retained: dc.retained.len(),
        blocks: dc.blocks.len(),
        shortfall: dc.pack.shortfall(),
        dropped_sections: dc.dropped_sections.len(),
        rerank_fell_back: dc.rerank_fell_back,
        diagnostics: dc.diagnostics.clone(),
    };
    write_atomic(&out.join("summary.json"), serde_json::to_string_pretty(&summary)?.as_bytes())?;
    Ok(summary)
}
