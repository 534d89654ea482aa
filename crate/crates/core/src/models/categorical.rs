use serde::{Deserialize, Serialize};

use crate::corpus::TokenId;
use crate::error::{Error, Result};
use crate::models::{LanguageModel, Span};

/// A context-free distribution over `K` symbols.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalModel {
    pub probs: Vec<f64>,
}

impl CategoricalModel {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        validate_distribution(&probs, 1e-12)?;
        Ok(Self { probs })
    }

    pub fn uniform(k: usize) -> Self {
        Self {
            probs: vec![1.0 / k as f64; k],
        }
    }

    pub fn k(&self) -> usize {
        self.probs.len()
    }

    pub(crate) fn updated(&self, spans: &[Span<'_>], eta: f64) -> Result<Self> {
        let mut counts = vec![0u64; self.k()];
        let mut total = 0u64;
        for (_, tokens) in spans {
            for &t in *tokens {
                let slot = counts.get_mut(t as usize).ok_or_else(|| {
                    Error::Argument(format!("token {t} outside categorical support of size {}", self.k()))
                })?;
                *slot += 1;
                total += 1;
            }
        }
        if total == 0 {
            if eta == 0.0 {
                return Ok(self.clone());
            }
            return Err(Error::Argument("cannot fit a categorical model to an empty corpus".into()));
        }
        let probs = self
            .probs
            .iter()
            .zip(&counts)
            .map(|(&p, &c)| (1.0 - eta) * p + eta * (c as f64 / total as f64))
            .collect();
        Ok(Self { probs })
    }
}

pub(crate) fn validate_distribution(p: &[f64], tol: f64) -> Result<()> {
    if p.is_empty() {
        return Err(Error::Argument("distribution is empty".into()));
    }
    if p.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::Argument("distribution has negative or non-finite entries".into()));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > tol {
        return Err(Error::Argument(format!("distribution sums to {sum}, not 1")));
    }
    Ok(())
}

impl LanguageModel for CategoricalModel {
    fn generation_index(&self) -> u32 {
        0
    }

    fn describe(&self) -> String {
        "categorical".into()
    }

    fn next_distribution(&self, _context: &[TokenId]) -> Result<Vec<f64>> {
        Ok(self.probs.clone())
    }
}
