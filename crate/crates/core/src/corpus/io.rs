//! Reading documents and QA items, writing corpora.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, MixedCorpus, Provenance, QAItem, TokenId};
use crate::error::{Error, Result};

/// Load documents from a directory (one document per file, ids are file
/// names) or from a single file (one document per blank-line separated block).
pub fn read_documents(path: &Path) -> Result<Vec<Document>> {
    if path.is_dir() {
        let mut entries: Vec<_> = fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_file())
            .collect();
        entries.sort();
        entries
            .into_iter()
            .map(|p| {
                let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                let id = p.file_name().unwrap_or_default().to_string_lossy().into_owned();
                Ok(Document::new(id, text))
            })
            .collect()
    } else {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        Ok(split_blocks(&text)
            .into_iter()
            .enumerate()
            .map(|(i, block)| Document::new(format!("{stem}:{i:06}"), block))
            .collect())
    }
}

/// Split text on blank lines, dropping empty blocks.
pub fn split_blocks(text: &str) -> Vec<String> {
    let mut blocks = Vec::new();
    let mut cur: Vec<&str> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !cur.is_empty() {
                blocks.push(cur.join("\n"));
                cur.clear();
            }
        } else {
            cur.push(line);
        }
    }
    if !cur.is_empty() {
        blocks.push(cur.join("\n"));
    }
    blocks
}

pub fn write_documents(path: &Path, docs: &[Document]) -> Result<()> {
    let body: Vec<&str> = docs.iter().map(|d| d.text.as_str()).collect();
    fs::write(path, body.join("\n\n") + "\n").map_err(|e| Error::io(path, e))
}

/// One QA item per line. Missing ids become `<subject>-<line>`.
pub fn read_qa(path: &Path) -> Result<Vec<QAItem>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut items = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut item: QAItem = serde_json::from_str(&line)
            .map_err(|e| Error::Config(format!("{}:{}: {e}", path.display(), n + 1)))?;
        if item.id.is_empty() {
            item.id = format!("{}-{:05}", item.subject, n);
        }
        item.validate()?;
        items.push(item);
    }
    Ok(items)
}

pub fn write_qa(path: &Path, items: &[QAItem]) -> Result<()> {
    write_jsonl(path, items)
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut buf, row)?;
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Output corpus record. `prompt_len` marks where a synthetic continuation
/// starts inside `tokens`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub tokens: Vec<TokenId>,
    pub provenance: Provenance,
    pub generation: u32,
    pub alpha: f64,
    pub prompt_len: usize,
}

pub fn corpus_records(corpus: &MixedCorpus) -> Vec<CorpusRecord> {
    corpus
        .items
        .iter()
        .map(|item| {
            let mut tokens = item.prompt.seq.tokens.clone();
            if let Some(c) = &item.continuation {
                tokens.extend_from_slice(&c.tokens);
            }
            CorpusRecord {
                tokens,
                provenance: item.provenance,
                generation: corpus.generation,
                alpha: corpus.alpha,
                prompt_len: item.prompt.seq.len(),
            }
        })
        .collect()
}

pub fn write_corpus(path: &Path, corpus: &MixedCorpus) -> Result<()> {
    write_jsonl(path, &corpus_records(corpus))
}
