use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Prompt, Tokenizer};
use crate::rng::{Role, RngKey};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionReport {
    pub requested: usize,
    pub available: usize,
    pub returned: usize,
    /// Documents too short to yield a single prompt.
    pub short_documents: usize,
}

impl ExtractionReport {
    pub fn shortfall(&self) -> usize {
        self.requested - self.returned
    }
}

#[derive(Debug, Clone)]
pub struct Extraction {
    pub prompts: Vec<Prompt>,
    pub report: ExtractionReport,
}

/// Cut documents into non-overlapping `prompt_len`-token chunks and draw
/// `count` of them with a seeded shuffle.
///
/// Documents are visited in id order, so the result does not depend on how
/// the caller ordered them. Trailing partial chunks are discarded.
pub fn extract_prompts(
    documents: &[Document],
    tokenizer: &Tokenizer,
    prompt_len: usize,
    count: usize,
    seed: u64,
) -> Extraction {
    assert!(prompt_len >= 1, "prompt_len must be at least 1");
    let mut docs: Vec<&Document> = documents.iter().collect();
    docs.sort_by(|a, b| a.id.cmp(&b.id));

    let mut pool = Vec::new();
    let mut short_documents = 0;
    for doc in docs {
        let seq = tokenizer.encode(&doc.text);
        if seq.len() < prompt_len {
            short_documents += 1;
            continue;
        }
        for chunk in seq.tokens.chunks_exact(prompt_len) {
            let index = pool.len();
            pool.push(Prompt {
                seq: crate::corpus::TokenSeq::new(chunk.to_vec(), seq.tokenizer_id.clone()),
                source_doc: doc.id.clone(),
                index,
            });
        }
    }

    let available = pool.len();
    let mut rng = RngKey::new(seed, 0, Role::PromptSelection, 0).rng();
    pool.shuffle(&mut rng);
    pool.truncate(count);
    let report = ExtractionReport {
        requested: count,
        available,
        returned: pool.len(),
        short_documents,
    };
    if report.shortfall() > 0 {
        tracing::warn!(
            requested = count,
            available,
            "prompt extraction shortfall"
        );
    }
    Extraction {
        prompts: pool,
        report,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TokenizerKind;

    fn docs(n: usize, words: usize) -> Vec<Document> {
        (0..n)
            .map(|d| {
                let text: Vec<String> = (0..words).map(|w| format!("d{d}w{w}")).collect();
                Document::new(format!("doc{d:02}"), text.join(" "))
            })
            .collect()
    }

    fn fit(docs: &[Document]) -> Tokenizer {
        Tokenizer::fit(TokenizerKind::WordPunct, docs.iter().map(|d| d.text.as_str()))
    }

    #[test]
    fn short_documents_contribute_nothing() {
        let d = docs(5, 63);
        let ex = extract_prompts(&d, &fit(&d), 64, 100, 42);
        assert!(ex.prompts.is_empty());
        assert_eq!(ex.report.shortfall(), 100);
        assert_eq!(ex.report.short_documents, 5);
    }

    #[test]
    fn seeded_and_order_independent() {
        let d = docs(10, 150);
        let tok = fit(&d);
        let ids = |ex: &Extraction| {
            ex.prompts
                .iter()
                .map(|p| (p.source_doc.clone(), p.index))
                .collect::<Vec<_>>()
        };
        let a = extract_prompts(&d, &tok, 64, 5, 7);
        let b = extract_prompts(&d, &tok, 64, 5, 7);
        assert_eq!(ids(&a), ids(&b));
        assert!(a.prompts.iter().all(|p| p.seq.len() == 64));

        let mut reversed = d.clone();
        reversed.reverse();
        let c = extract_prompts(&reversed, &tok, 64, 5, 7);
        assert_eq!(ids(&a), ids(&c));

        let other = extract_prompts(&d, &tok, 64, 5, 8);
        assert_ne!(ids(&a), ids(&other));
    }

    #[test]
    fn count_is_capped_by_availability() {
        let d = docs(3, 130); // two chunks each
        let ex = extract_prompts(&d, &fit(&d), 64, 100, 1);
        assert_eq!(ex.report.available, 6);
        assert_eq!(ex.prompts.len(), 6);
    }
}
