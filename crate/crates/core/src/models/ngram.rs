use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{TokenId, TokenSeq};
use crate::error::{Error, Result};
use crate::models::{LanguageModel, Span};

/// Relative n-gram frequencies of one order, grouped by context.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NGramTable {
    rows: BTreeMap<Vec<TokenId>, Row>,
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Row {
    mass: f64,
    next: BTreeMap<TokenId, f64>,
}

impl NGramTable {
    /// Frequency of the full n-gram `context ++ [token]`.
    pub fn get(&self, ngram: &[TokenId]) -> f64 {
        let (last, ctx) = ngram.split_last().expect("n-gram must be non-empty");
        self.rows
            .get(ctx)
            .and_then(|r| r.next.get(last))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn context_mass(&self, context: &[TokenId]) -> f64 {
        self.rows.get(context).map_or(0.0, |r| r.mass)
    }

    /// Number of distinct n-grams stored.
    pub fn len(&self) -> usize {
        self.rows.values().map(|r| r.next.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (Vec<TokenId>, f64)> + '_ {
        self.rows.iter().flat_map(|(ctx, row)| {
            row.next.iter().map(move |(&t, &f)| {
                let mut g = ctx.clone();
                g.push(t);
                (g, f)
            })
        })
    }

    fn insert(&mut self, ngram: &[TokenId], freq: f64) {
        let (last, ctx) = ngram.split_last().expect("n-gram must be non-empty");
        *self
            .rows
            .entry(ctx.to_vec())
            .or_default()
            .next
            .entry(*last)
            .or_insert(0.0) += freq;
    }

    fn scale(&mut self, factor: f64) {
        if factor == 0.0 {
            self.rows.clear();
            return;
        }
        for row in self.rows.values_mut() {
            for f in row.next.values_mut() {
                *f *= factor;
            }
        }
    }

    fn refresh_masses(&mut self) {
        self.rows.retain(|_, row| {
            row.next.retain(|_, f| *f > 0.0);
            row.mass = row.next.values().sum();
            !row.next.is_empty()
        });
    }
}

/// Interpolated n-gram language model.
///
/// Scoring smooths each order towards the next lower one with a Dirichlet
/// prior of strength `smoothing` (the unigram level is smoothed towards
/// uniform), so every token gets positive mass when `smoothing > 0`. With zero
/// smoothing the highest-order observed context is used as-is, which is what
/// lets repeated self-training lose support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "NGramFile", try_from = "NGramFile")]
pub struct NGramModel {
    order: usize,
    vocab_size: usize,
    smoothing: f64,
    sample_smoothing: f64,
    /// `tables[k - 1]` holds order-`k` frequencies.
    tables: Vec<NGramTable>,
}

impl NGramModel {
    pub fn new(order: usize, vocab_size: usize, smoothing: f64, sample_smoothing: f64) -> Result<Self> {
        if order == 0 {
            return Err(Error::Argument("n-gram order must be at least 1".into()));
        }
        if vocab_size == 0 {
            return Err(Error::Argument("vocabulary is empty".into()));
        }
        if !(smoothing >= 0.0 && sample_smoothing >= 0.0) {
            return Err(Error::Argument("smoothing must be non-negative".into()));
        }
        Ok(Self {
            order,
            vocab_size,
            smoothing,
            sample_smoothing,
            tables: vec![NGramTable::default(); order],
        })
    }

    /// Maximum-likelihood fit on whole sequences.
    pub fn fit(
        order: usize,
        vocab_size: usize,
        smoothing: f64,
        sample_smoothing: f64,
        sequences: &[TokenSeq],
    ) -> Result<Self> {
        let empty = Self::new(order, vocab_size, smoothing, sample_smoothing)?;
        let spans: Vec<Span<'_>> = sequences.iter().map(|s| (&[][..], s.tokens.as_slice())).collect();
        empty.updated(&spans, 1.0)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    pub fn sample_smoothing(&self) -> f64 {
        self.sample_smoothing
    }

    pub fn with_smoothing(mut self, smoothing: f64, sample_smoothing: f64) -> Self {
        self.smoothing = smoothing;
        self.sample_smoothing = sample_smoothing;
        self
    }

    pub fn table(&self, order: usize) -> &NGramTable {
        &self.tables[order - 1]
    }

    /// Tokens with positive unigram frequency.
    pub fn support_size(&self) -> usize {
        self.tables[0].len()
    }

    pub(crate) fn updated(&self, spans: &[Span<'_>], eta: f64) -> Result<Self> {
        let n = self.order;
        let mut counts: Vec<BTreeMap<Vec<TokenId>, u64>> = vec![BTreeMap::new(); n];
        let mut totals = vec![0u64; n];
        for (context, trained) in spans {
            let tail = &context[context.len().saturating_sub(n - 1)..];
            let seq: Vec<TokenId> = tail.iter().chain(trained.iter()).copied().collect();
            if let Some(&bad) = seq.iter().find(|&&t| t as usize >= self.vocab_size) {
                return Err(Error::Argument(format!(
                    "token {bad} outside vocabulary of size {}",
                    self.vocab_size
                )));
            }
            for i in tail.len()..seq.len() {
                for k in 1..=n.min(i + 1) {
                    *counts[k - 1].entry(seq[i + 1 - k..=i].to_vec()).or_insert(0) += 1;
                    totals[k - 1] += 1;
                }
            }
        }
        if totals[0] == 0 && eta > 0.0 {
            return Err(Error::Argument("cannot fit an n-gram model to an empty corpus".into()));
        }

        let mut next = self.clone();
        for k in 0..n {
            let table = &mut next.tables[k];
            table.scale(1.0 - eta);
            if totals[k] > 0 && eta > 0.0 {
                let norm = totals[k] as f64;
                for (gram, c) in &counts[k] {
                    table.insert(gram, eta * (*c as f64 / norm));
                }
            }
            table.refresh_masses();
        }
        Ok(next)
    }

    fn check_token(&self, token: TokenId) -> Result<()> {
        if token as usize >= self.vocab_size {
            return Err(Error::Argument(format!(
                "token {token} outside vocabulary of size {}",
                self.vocab_size
            )));
        }
        Ok(())
    }

    fn degenerate() -> Error {
        Error::DegenerateDistribution("n-gram model has no unigram mass and no smoothing".into())
    }

    /// Probability of a single token under smoothing strength `lambda`.
    pub fn prob(&self, context: &[TokenId], token: TokenId, lambda: f64) -> Result<f64> {
        self.check_token(token)?;
        let uni = &self.tables[0];
        let mass = uni.context_mass(&[]);
        let mut p = if lambda > 0.0 {
            (uni.get(&[token]) + lambda / self.vocab_size as f64) / (mass + lambda)
        } else if mass > 0.0 {
            uni.get(&[token]) / mass
        } else {
            return Err(Self::degenerate());
        };
        let mut gram = Vec::with_capacity(self.order);
        for k in 2..=self.order.min(context.len() + 1) {
            let ctx = &context[context.len() + 1 - k..];
            let table = &self.tables[k - 1];
            let m = table.context_mass(ctx);
            if m == 0.0 {
                continue;
            }
            gram.clear();
            gram.extend_from_slice(ctx);
            gram.push(token);
            let f = table.get(&gram);
            p = if lambda > 0.0 { (f + lambda * p) / (m + lambda) } else { f / m };
        }
        Ok(p)
    }

    /// Full next-token distribution under smoothing strength `lambda`.
    pub fn distribution(&self, context: &[TokenId], lambda: f64) -> Result<Vec<f64>> {
        let v = self.vocab_size;
        let uni = &self.tables[0];
        let mass = uni.context_mass(&[]);
        let mut p = vec![0.0; v];
        if lambda > 0.0 {
            let base = lambda / v as f64;
            let denom = mass + lambda;
            p.iter_mut().for_each(|x| *x = base / denom);
            if let Some(row) = uni.rows.get(&[][..]) {
                for (&t, &f) in &row.next {
                    p[t as usize] = (f + base) / denom;
                }
            }
        } else if mass > 0.0 {
            for (&t, &f) in &uni.rows[&[][..]].next {
                p[t as usize] = f / mass;
            }
        } else {
            return Err(Self::degenerate());
        }
        for k in 2..=self.order.min(context.len() + 1) {
            let ctx = &context[context.len() + 1 - k..];
            let Some(row) = self.tables[k - 1].rows.get(ctx) else {
                continue;
            };
            if lambda > 0.0 {
                let denom = row.mass + lambda;
                let w = lambda / denom;
                p.iter_mut().for_each(|x| *x *= w);
                for (&t, &f) in &row.next {
                    p[t as usize] += f / denom;
                }
            } else {
                p.iter_mut().for_each(|x| *x = 0.0);
                for (&t, &f) in &row.next {
                    p[t as usize] = f / row.mass;
                }
            }
        }
        Ok(p)
    }
}

impl LanguageModel for NGramModel {
    fn generation_index(&self) -> u32 {
        0
    }

    fn describe(&self) -> String {
        format!("{}-gram", self.order)
    }

    fn next_distribution(&self, context: &[TokenId]) -> Result<Vec<f64>> {
        self.distribution(context, self.smoothing)
    }

    fn sampling_distribution(&self, context: &[TokenId]) -> Result<Vec<(TokenId, f64)>> {
        if self.sample_smoothing > 0.0 {
            let p = self.distribution(context, self.sample_smoothing)?;
            return Ok(p
                .into_iter()
                .enumerate()
                .filter(|(_, x)| *x > 0.0)
                .map(|(i, x)| (i as TokenId, x))
                .collect());
        }
        // Unsmoothed: the highest-order context that has been observed.
        for k in (1..=self.order.min(context.len() + 1)).rev() {
            let ctx = &context[context.len() + 1 - k..];
            if let Some(row) = self.tables[k - 1].rows.get(ctx) {
                return Ok(row.next.iter().map(|(&t, &f)| (t, f / row.mass)).collect());
            }
        }
        Err(Self::degenerate())
    }

    fn token_logprob(&self, context: &[TokenId], token: TokenId) -> Result<f64> {
        Ok(self.prob(context, token, self.smoothing)?.ln())
    }
}

#[derive(Serialize, Deserialize)]
struct NGramFile {
    order: usize,
    vocab_size: usize,
    smoothing: f64,
    sample_smoothing: f64,
    /// `[ngram..., frequency]` rows per order, lowest order first.
    tables: Vec<Vec<(Vec<TokenId>, f64)>>,
}

impl From<NGramModel> for NGramFile {
    fn from(m: NGramModel) -> Self {
        Self {
            order: m.order,
            vocab_size: m.vocab_size,
            smoothing: m.smoothing,
            sample_smoothing: m.sample_smoothing,
            tables: m.tables.iter().map(|t| t.entries().collect()).collect(),
        }
    }
}

impl TryFrom<NGramFile> for NGramModel {
    type Error = String;

    fn try_from(f: NGramFile) -> std::result::Result<Self, String> {
        if f.tables.len() != f.order {
            return Err(format!("expected {} tables, found {}", f.order, f.tables.len()));
        }
        let mut m = NGramModel::new(f.order, f.vocab_size, f.smoothing, f.sample_smoothing)
            .map_err(|e| e.to_string())?;
        for (k, rows) in f.tables.into_iter().enumerate() {
            for (gram, freq) in rows {
                if gram.len() != k + 1 {
                    return Err(format!("n-gram {gram:?} in order-{} table", k + 1));
                }
                if !(freq >= 0.0 && freq.is_finite()) {
                    return Err(format!("invalid frequency {freq}"));
                }
                if gram.iter().any(|&t| t as usize >= f.vocab_size) {
                    return Err(format!("n-gram {gram:?} outside vocabulary"));
                }
                m.tables[k].insert(&gram, freq);
            }
            m.tables[k].refresh_masses();
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Role, RngKey};
    use crate::models::DecodingParams;
    use proptest::prelude::*;

    fn seq(t: &[TokenId]) -> TokenSeq {
        TokenSeq::new(t.to_vec(), "t")
    }

    #[test]
    fn unsmoothed_probabilities_are_count_ratios() {
        // a b a c a b
        let m = NGramModel::fit(2, 3, 0.0, 0.0, &[seq(&[0, 1, 0, 2, 0, 1])]).unwrap();
        assert!((m.prob(&[0], 1, 0.0).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.prob(&[0], 2, 0.0).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.prob(&[0], 0, 0.0).unwrap(), 0.0);
        // unseen context backs off to the unigram
        let m2 = NGramModel::fit(2, 4, 0.0, 0.0, &[seq(&[0, 1, 0, 2])]).unwrap();
        assert!((m2.prob(&[3], 0, 0.0).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn peaked_bigram_greedy_generation() {
        let m = NGramModel::fit(2, 4, 1e-6, 0.0, &[seq(&[0, 1, 2, 3, 0, 1, 2, 3, 0, 1, 2, 3])]).unwrap();
        let out = m
            .generate(&seq(&[0]), &DecodingParams::greedy(6), RngKey::new(1, 0, Role::Synthesis, 0))
            .unwrap();
        assert_eq!(out.tokens, vec![1, 2, 3, 0, 1, 2]);
    }

    #[test]
    fn empty_model_is_degenerate_without_smoothing() {
        let m = NGramModel::new(3, 5, 0.0, 0.0).unwrap();
        assert!(matches!(m.distribution(&[], 0.0), Err(Error::DegenerateDistribution(_))));
        let s = NGramModel::new(3, 5, 1e-6, 0.0).unwrap();
        let p = s.distribution(&[1, 2], 1e-6).unwrap();
        assert!(p.iter().all(|x| (x - 0.2).abs() < 1e-12));
    }

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let m = NGramModel::fit(3, 6, 1e-6, 0.0, &[seq(&[0, 1, 2, 3, 4, 5, 1, 2, 3])]).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        let back: NGramModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
        assert_eq!(serde_json::to_string(&back).unwrap(), json);
    }

    proptest! {
        #[test]
        fn distribution_sums_to_one_and_matches_prob(
            tokens in prop::collection::vec(0u32..6, 1..60),
            ctx in prop::collection::vec(0u32..6, 0..4),
            lambda in prop_oneof![Just(0.0), Just(1e-6), 0.001f64..1.0],
        ) {
            let m = NGramModel::fit(3, 6, lambda, 0.0, &[seq(&tokens)]).unwrap();
            let d = m.distribution(&ctx, lambda).unwrap();
            let s: f64 = d.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
            for t in 0..6u32 {
                let p = m.prob(&ctx, t, lambda).unwrap();
                prop_assert!((p - d[t as usize]).abs() < 1e-12);
                if lambda > 0.0 {
                    prop_assert!(p > 0.0);
                }
            }
        }
    }
}
