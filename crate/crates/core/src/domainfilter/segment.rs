use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, TokenSeq, Tokenizer};
use crate::error::{Error, Result};

const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "st", "jr", "sr", "vs", "etc", "no", "vol", "pp", "fig", "e.g", "i.e",
    "u.s", "u.k", "a.d", "b.c", "c", "ca", "approx", "dept", "gen", "col", "lt", "capt", "rev", "mt",
];

/// Byte spans of sentences. A sentence ends at `.`, `!` or `?` (plus closing
/// quotes or brackets) followed by whitespace and an uppercase letter, digit
/// or opening quote, unless the word before the period is a known
/// abbreviation or a single letter.
pub fn split_sentences(text: &str) -> Vec<(usize, usize)> {
    static BOUNDARY: OnceLock<Regex> = OnceLock::new();
    let re = BOUNDARY.get_or_init(|| Regex::new(r#"[.!?]+["')\]]*\s+["'(\[]?[\p{Lu}\p{N}]"#).unwrap());
    let mut spans = Vec::new();
    let mut start = 0;
    let mut search = 0;
    while let Some(m) = re.find_at(text, search) {
        let punct_end = m.as_str().find(char::is_whitespace).map_or(m.end(), |o| m.start() + o);
        search = punct_end;
        let before = &text[start..m.start()];
        let last_word = before
            .rsplit(|c: char| c.is_whitespace())
            .next()
            .unwrap_or("")
            .trim_start_matches(['(', '"', '\''])
            .to_lowercase();
        let ends_with_period = text[m.start()..].starts_with('.');
        if ends_with_period
            && (ABBREVIATIONS.contains(&last_word.as_str())
                || (last_word.chars().count() == 1 && last_word.chars().all(char::is_alphabetic)))
        {
            continue;
        }
        let s = text[start..punct_end].trim();
        if !s.is_empty() {
            let lead = text[start..].len() - text[start..].trim_start().len();
            spans.push((start + lead, punct_end));
        }
        start = punct_end;
    }
    let rest = &text[start..];
    if !rest.trim().is_empty() {
        let lead = rest.len() - rest.trim_start().len();
        let trail = rest.len() - rest.trim_end().len();
        spans.push((start + lead, text.len() - trail));
    }
    spans
}

/// A heading-delimited part of a document. Documents without headings are a
/// single section.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Section {
    pub doc: String,
    pub index: usize,
    pub span: (usize, usize),
}

fn heading_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?m)^[ \t]*=+[^=\n]+=+[ \t]*$").unwrap())
}

pub fn sections(doc: &Document) -> Vec<Section> {
    let text = &doc.text;
    let mut bounds = vec![0];
    for m in heading_re().find_iter(text) {
        bounds.push(m.start());
        bounds.push(m.end());
    }
    bounds.push(text.len());
    let mut out = Vec::new();
    for pair in bounds.chunks(2) {
        let (a, b) = (pair[0], pair[1]);
        if !text[a..b].trim().is_empty() {
            out.push(Section {
                doc: doc.id.clone(),
                index: out.len(),
                span: (a, b),
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub id: String,
    pub source_doc: String,
    /// Byte range in the source document.
    pub char_span: (usize, usize),
    pub text: String,
    pub tokens: TokenSeq,
    /// The segment starts and ends on sentence boundaries.
    pub sentence_complete: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentConfig {
    pub target_len: usize,
    /// Sections shorter than this fraction of the mean section length are dropped.
    pub min_frac: f64,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            target_len: 64,
            min_frac: 0.30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedSection {
    pub doc: String,
    pub section: usize,
    pub tokens: usize,
}

#[derive(Debug, Clone)]
pub struct Segmentation {
    pub segments: Vec<Segment>,
    pub dropped: Vec<DroppedSection>,
    pub mean_section_len: f64,
}

/// Split documents into sections, drop short sections, then pack whole
/// sentences greedily into chunks of about `target_len` tokens. A sentence
/// longer than twice the target is cut into target-sized windows, which are
/// marked incomplete.
pub fn segment(documents: &[Document], tokenizer: &Tokenizer, cfg: &SegmentConfig) -> Result<Segmentation> {
    if cfg.target_len < 8 {
        return Err(Error::Argument(format!("target_len {} below 8", cfg.target_len)));
    }
    let kind = tokenizer.kind();
    let mut all = Vec::new();
    for doc in documents {
        for s in sections(doc) {
            let len = kind.split(&doc.text[s.span.0..s.span.1]).len();
            all.push((doc, s, len));
        }
    }
    let mean = if all.is_empty() {
        0.0
    } else {
        all.iter().map(|x| x.2 as f64).sum::<f64>() / all.len() as f64
    };
    let floor = cfg.min_frac * mean;
    let mut segments = Vec::new();
    let mut dropped = Vec::new();
    for (doc, sec, len) in all {
        if (len as f64) < floor {
            dropped.push(DroppedSection {
                doc: doc.id.clone(),
                section: sec.index,
                tokens: len,
            });
            continue;
        }
        pack_section(doc, &sec, tokenizer, cfg.target_len, &mut segments);
    }
    Ok(Segmentation {
        segments,
        dropped,
        mean_section_len: mean,
    })
}

fn pack_section(doc: &Document, sec: &Section, tokenizer: &Tokenizer, target: usize, out: &mut Vec<Segment>) {
    let base = sec.span.0;
    let body = &doc.text[sec.span.0..sec.span.1];
    let sentences: Vec<(usize, usize, usize)> = split_sentences(body)
        .into_iter()
        .map(|(a, b)| (base + a, base + b, tokenizer.kind().split(&doc.text[base + a..base + b]).len()))
        .filter(|s| s.2 > 0)
        .collect();

    // (start, end, tokens, complete)
    let mut chunks: Vec<(usize, usize, usize, bool)> = Vec::new();
    let mut cur: Option<(usize, usize, usize)> = None;
    for &(a, b, n) in &sentences {
        if n > 2 * target {
            if let Some(c) = cur.take() {
                chunks.push((c.0, c.1, c.2, true));
            }
            for (wa, wb, wn) in windows(&doc.text, a, b, tokenizer, target) {
                chunks.push((wa, wb, wn, false));
            }
            continue;
        }
        cur = match cur {
            Some((ca, _, cn)) if cn + n <= target => Some((ca, b, cn + n)),
            Some(c) => {
                chunks.push((c.0, c.1, c.2, true));
                Some((a, b, n))
            }
            None => Some((a, b, n)),
        };
    }
    if let Some(c) = cur {
        match chunks.last_mut() {
            Some(last) if last.3 && c.2 < target / 2 && last.2 + c.2 <= 2 * target => {
                last.1 = c.1;
                last.2 += c.2;
            }
            _ => chunks.push((c.0, c.1, c.2, true)),
        }
    }
    for (k, (a, b, _, complete)) in chunks.into_iter().enumerate() {
        let text = doc.text[a..b].to_owned();
        out.push(Segment {
            id: format!("{}#{}.{k}", doc.id, sec.index),
            source_doc: doc.id.clone(),
            char_span: (a, b),
            tokens: tokenizer.encode(&text),
            text,
            sentence_complete: complete,
        });
    }
}

/// Cut an over-long sentence into windows of `target` surface tokens.
fn windows(text: &str, a: usize, b: usize, tokenizer: &Tokenizer, target: usize) -> Vec<(usize, usize, usize)> {
    let words: Vec<(usize, usize)> = text[a..b]
        .split_whitespace()
        .map(|w| {
            let off = w.as_ptr() as usize - text.as_ptr() as usize;
            (off, off + w.len())
        })
        .collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < words.len() {
        let start = words[i].0;
        let mut n = 0;
        let mut end = words[i].1;
        while i < words.len() {
            let k = tokenizer.kind().split(&text[words[i].0..words[i].1]).len();
            if n > 0 && n + k > target {
                break;
            }
            n += k;
            end = words[i].1;
            i += 1;
        }
        out.push((start, end, n));
    }
    out
}
