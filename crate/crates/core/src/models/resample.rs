use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;

use crate::error::{Error, Result};
use crate::models::categorical::validate_distribution;
use crate::rng::RngKey;

/// One step of the finite-sample resampling chain:
/// `(1 - alpha) * anchor + alpha * empirical(sample_size draws from dist)`.
///
/// With `alpha = 1` a symbol that is never drawn is gone for good, so the
/// chain is absorbed at delta distributions.
pub fn resample_step(
    dist: &[f64],
    sample_size: usize,
    alpha: f64,
    anchor: &[f64],
    key: RngKey,
) -> Result<Vec<f64>> {
    if sample_size == 0 {
        return Err(Error::Argument("sample_size must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Argument(format!("alpha {alpha} not in [0, 1]")));
    }
    validate_distribution(dist, 1e-9)?;
    validate_distribution(anchor, 1e-9)?;
    if dist.len() != anchor.len() {
        return Err(Error::Argument(format!(
            "dist has {} symbols but anchor has {}",
            dist.len(),
            anchor.len()
        )));
    }
    let mut counts = vec![0usize; dist.len()];
    let sampler = WeightedIndex::new(dist).map_err(|e| Error::Argument(e.to_string()))?;
    let mut rng = key.rng();
    for _ in 0..sample_size {
        counts[sampler.sample(&mut rng)] += 1;
    }
    let n = sample_size as f64;
    Ok(anchor
        .iter()
        .zip(&counts)
        .map(|(&a, &c)| (1.0 - alpha) * a + alpha * (c as f64 / n))
        .collect())
}
