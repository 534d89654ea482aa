use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::corpus::{CorpusItem, MixedCorpus, Prompt, Provenance};
use crate::error::{Error, Result};
use crate::models::{DecodingParams, LanguageModel};
use crate::rng::{Role, RngKey};

/// Prompts per error-reporting batch when synthesizing continuations.
const BATCH: usize = 32;

/// `round(alpha * total)` with halves rounded up.
pub fn synthetic_count(alpha: f64, total: usize) -> usize {
    let exact = alpha * total as f64;
    // absorb representation error such as 0.35 * 10 = 3.4999999999999996
    let n = (exact + 0.5 + 1e-9).floor() as usize;
    n.min(total)
}

/// Build one generation's training set: a seeded permutation picks
/// `round(alpha * N)` prompts whose continuations come from `model`; the rest
/// pass through as real data. Items keep the input prompt order.
pub fn mix_corpus(
    real: &[Prompt],
    model: &dyn LanguageModel,
    alpha: f64,
    decoding: &DecodingParams,
    generation: u32,
    seed: u64,
) -> Result<MixedCorpus> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Argument(format!("alpha {alpha} not in [0, 1]")));
    }
    let n = real.len();
    let n_syn = synthetic_count(alpha, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut RngKey::new(seed, generation.into(), Role::MixPermutation, 0).rng());
    let mut synthetic = vec![false; n];
    for &i in &order[..n_syn] {
        synthetic[i] = true;
    }

    let items = real
        .par_iter()
        .enumerate()
        .map(|(i, prompt)| {
            if !synthetic[i] {
                return Ok(CorpusItem {
                    prompt: prompt.clone(),
                    continuation: None,
                    provenance: Provenance::Real,
                });
            }
            let key = RngKey::new(seed, generation.into(), Role::Synthesis, i as u64);
            let continuation = model.generate(&prompt.seq, decoding, key).map_err(|e| match e {
                Error::Transport(msg) => {
                    let b = i / BATCH;
                    Error::Transport(format!(
                        "prompt batch {b} (items {}..{}): {msg}",
                        b * BATCH,
                        ((b + 1) * BATCH).min(n)
                    ))
                }
                other => other,
            })?;
            Ok(CorpusItem {
                prompt: prompt.clone(),
                continuation: Some(continuation),
                provenance: Provenance::Synthetic,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(MixedCorpus {
        items,
        alpha,
        generation,
        seed,
    })
}
