//! Top-k / nucleus truncation and sampling over sparse distributions.

use std::cmp::Ordering;

use rand::Rng;

use crate::corpus::TokenId;
use crate::error::{Error, Result};
use crate::models::DecodingParams;

/// Stable ranking: probability descending, then token id ascending.
fn rank(a: &(TokenId, f64), b: &(TokenId, f64)) -> Ordering {
    b.1.partial_cmp(&a.1)
        .unwrap_or(Ordering::Equal)
        .then(a.0.cmp(&b.0))
}

/// The renormalized candidate set generation draws from: temperature, then the
/// `top_k` most probable tokens, then the smallest prefix whose mass reaches
/// `top_p`.
pub fn candidates(dist: &[(TokenId, f64)], decoding: &DecodingParams) -> Result<Vec<(TokenId, f64)>> {
    let inv_t = 1.0 / decoding.temperature;
    let mut cands: Vec<(TokenId, f64)> = dist
        .iter()
        .filter(|(_, p)| *p > 0.0 && p.is_finite())
        .map(|&(t, p)| (t, if inv_t == 1.0 { p } else { p.powf(inv_t) }))
        .filter(|(_, p)| *p > 0.0)
        .collect();
    if cands.is_empty() {
        return Err(Error::DegenerateDistribution(
            "no token has positive probability".into(),
        ));
    }
    if cands.len() > decoding.top_k {
        cands.select_nth_unstable_by(decoding.top_k - 1, rank);
        cands.truncate(decoding.top_k);
    }
    cands.sort_by(rank);

    let total: f64 = cands.iter().map(|c| c.1).sum();
    let mut cum = 0.0;
    let mut keep = cands.len();
    for (i, c) in cands.iter_mut().enumerate() {
        c.1 /= total;
        cum += c.1;
        if cum >= decoding.top_p - 1e-12 {
            keep = i + 1;
            break;
        }
    }
    cands.truncate(keep);
    let kept: f64 = cands.iter().map(|c| c.1).sum();
    for c in &mut cands {
        c.1 /= kept;
    }
    Ok(cands)
}

pub fn sample<R: Rng + ?Sized>(
    dist: &[(TokenId, f64)],
    decoding: &DecodingParams,
    rng: &mut R,
) -> Result<TokenId> {
    let cands = candidates(dist, decoding)?;
    if cands.len() == 1 {
        return Ok(cands[0].0);
    }
    let u: f64 = rng.random();
    let mut cum = 0.0;
    for &(tok, p) in &cands {
        cum += p;
        if u < cum {
            return Ok(tok);
        }
    }
    Ok(cands[cands.len() - 1].0)
}
