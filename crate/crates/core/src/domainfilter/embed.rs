use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::http::{EndpointConfig, HttpClient};
use crate::metrics::words;

pub const HASH_DIM: usize = 1 << 15;

/// A unit-norm vector stored as sorted `(dimension, value)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub dim: usize,
    pub entries: Vec<(u32, f64)>,
    pub backend_id: String,
}

impl Embedding {
    fn from_map(dim: usize, map: BTreeMap<u32, f64>, backend_id: &str) -> Self {
        let norm = map.values().map(|v| v * v).sum::<f64>().sqrt();
        let entries = if norm > 0.0 {
            map.into_iter().filter(|(_, v)| *v != 0.0).map(|(k, v)| (k, v / norm)).collect()
        } else {
            Vec::new()
        };
        Self {
            dim,
            entries,
            backend_id: backend_id.to_owned(),
        }
    }

    pub fn from_dense(v: &[f64], backend_id: &str) -> Self {
        let map = v.iter().enumerate().map(|(i, x)| (i as u32, *x)).collect();
        Self::from_map(v.len(), map, backend_id)
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for &(i, x) in &self.entries {
            v[i as usize] = x;
        }
        v
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        let (mut i, mut j) = (0, 0);
        let mut s = 0.0;
        while i < self.entries.len() && j < other.entries.len() {
            let (a, b) = (self.entries[i], other.entries[j]);
            match a.0.cmp(&b.0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    s += a.1 * b.1;
                    i += 1;
                    j += 1;
                }
            }
        }
        s
    }

    /// Cosine similarity; both vectors are unit or zero, so this is the dot
    /// product clamped to [-1, 1].
    pub fn cosine(&self, other: &Embedding) -> f64 {
        self.dot(other).clamp(-1.0, 1.0)
    }

    /// Normalized mean of several embeddings.
    pub fn centroid(items: &[&Embedding], backend_id: &str) -> Option<Embedding> {
        let first = items.first()?;
        let mut map: BTreeMap<u32, f64> = BTreeMap::new();
        for e in items {
            for &(i, x) in &e.entries {
                *map.entry(i).or_default() += x;
            }
        }
        let n = items.len() as f64;
        for v in map.values_mut() {
            *v /= n;
        }
        Some(Self::from_map(first.dim, map, backend_id))
    }
}

/// 32-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u32 {
    let mut h: u32 = 0x811c_9dc5;
    for &b in bytes {
        h ^= u32::from(b);
        h = h.wrapping_mul(0x0100_0193);
    }
    h
}

pub fn term_bucket(term: &str) -> u32 {
    fnv1a(term.as_bytes()) % HASH_DIM as u32
}

/// Hashed TF-IDF with smooth idf `ln((1 + N) / (1 + df)) + 1`.
#[derive(Debug, Clone)]
pub struct TfidfModel {
    n_docs: usize,
    df: HashMap<u32, usize>,
}

impl TfidfModel {
    pub const BACKEND_ID: &'static str = "tfidf-fnv1a-32768";

    pub fn fit<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut df: HashMap<u32, usize> = HashMap::new();
        let mut n_docs = 0;
        for t in texts {
            n_docs += 1;
            let mut buckets: Vec<u32> = words(t).iter().map(|w| term_bucket(w)).collect();
            buckets.sort_unstable();
            buckets.dedup();
            for b in buckets {
                *df.entry(b).or_default() += 1;
            }
        }
        Self { n_docs, df }
    }

    pub fn idf_bucket(&self, bucket: u32) -> f64 {
        let df = self.df.get(&bucket).copied().unwrap_or(0);
        ((1.0 + self.n_docs as f64) / (1.0 + df as f64)).ln() + 1.0
    }

    pub fn idf(&self, term: &str) -> f64 {
        self.idf_bucket(term_bucket(term))
    }

    pub fn embed(&self, text: &str) -> Embedding {
        let mut tf: BTreeMap<u32, f64> = BTreeMap::new();
        for w in words(text) {
            *tf.entry(term_bucket(&w)).or_default() += 1.0;
        }
        for (b, v) in tf.iter_mut() {
            *v *= self.idf_bucket(*b);
        }
        Embedding::from_map(HASH_DIM, tf, Self::BACKEND_ID)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "backend", rename_all = "snake_case")]
pub enum EmbedBackend {
    #[default]
    BuiltinTfidf,
    Remote { endpoint: EndpointConfig },
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// Embeds texts with the built-in model or a remote `{texts} → {vectors}` endpoint.
#[derive(Debug, Clone)]
pub enum Embedder {
    Tfidf(TfidfModel),
    Remote { http: HttpClient, id: String },
}

impl Embedder {
    pub fn new<'a>(backend: &EmbedBackend, fit_texts: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        Ok(match backend {
            EmbedBackend::BuiltinTfidf => Embedder::Tfidf(TfidfModel::fit(fit_texts)),
            EmbedBackend::Remote { endpoint } => Embedder::Remote {
                id: format!("remote:{}", endpoint.url),
                http: HttpClient::new(endpoint.clone())?,
            },
        })
    }

    pub fn backend_id(&self) -> &str {
        match self {
            Embedder::Tfidf(_) => TfidfModel::BACKEND_ID,
            Embedder::Remote { id, .. } => id,
        }
    }

    /// Embed `(id, text)` pairs; remote failures name the first id of the batch.
    pub fn embed_all(&self, items: &[(&str, &str)]) -> Result<Vec<Embedding>> {
        use rayon::prelude::*;
        match self {
            Embedder::Tfidf(m) => Ok(items.par_iter().map(|(_, t)| m.embed(t)).collect()),
            Embedder::Remote { http, id } => {
                let mut out = Vec::with_capacity(items.len());
                for batch in items.chunks(64) {
                    let texts: Vec<&str> = batch.iter().map(|(_, t)| *t).collect();
                    let resp: EmbedResponse = http.post_json(&EmbedRequest { texts: &texts }).map_err(|e| {
                        Error::Transport(format!("embedding document {}: {e}", batch[0].0))
                    })?;
                    if resp.vectors.len() != batch.len() {
                        return Err(Error::Transport(format!(
                            "embedding document {}: expected {} vectors, got {}",
                            batch[0].0,
                            batch.len(),
                            resp.vectors.len()
                        )));
                    }
                    out.extend(resp.vectors.iter().map(|v| Embedding::from_dense(v, id)));
                }
                Ok(out)
            }
        }
    }
}
