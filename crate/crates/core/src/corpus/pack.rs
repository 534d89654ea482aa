use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{TokenId, TokenSeq};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackReport {
    pub total_tokens: usize,
    pub raw_blocks: usize,
    pub duplicates: usize,
    pub requested: usize,
    pub returned: usize,
}

impl PackReport {
    pub fn shortfall(&self) -> usize {
        self.requested.saturating_sub(self.returned)
    }
}

#[derive(Debug, Clone)]
pub struct Packed {
    pub blocks: Vec<TokenSeq>,
    pub report: PackReport,
}

/// Concatenate segments, slice into `block_len` blocks, drop exact duplicates
/// (first occurrence wins) and keep at most `target_count`.
pub fn pack_blocks(segments: &[TokenSeq], block_len: usize, target_count: usize) -> Result<Packed> {
    if block_len == 0 {
        return Err(Error::Argument("block_len must be at least 1".into()));
    }
    let tokenizer_id = segments
        .first()
        .map(|s| s.tokenizer_id.clone())
        .unwrap_or_default();
    let stream: Vec<TokenId> = segments.iter().flat_map(|s| s.tokens.iter().copied()).collect();

    let mut seen: HashSet<&[TokenId]> = HashSet::new();
    let mut blocks = Vec::new();
    let mut raw_blocks = 0;
    let mut duplicates = 0;
    for chunk in stream.chunks_exact(block_len) {
        raw_blocks += 1;
        if !seen.insert(chunk) {
            duplicates += 1;
            continue;
        }
        if blocks.len() < target_count {
            blocks.push(TokenSeq::new(chunk.to_vec(), tokenizer_id.clone()));
        }
    }
    let report = PackReport {
        total_tokens: stream.len(),
        raw_blocks,
        duplicates,
        requested: target_count,
        returned: blocks.len(),
    };
    if report.shortfall() > 0 {
        tracing::warn!(requested = target_count, returned = blocks.len(), "block packing shortfall");
    }
    Ok(Packed { blocks, report })
}
