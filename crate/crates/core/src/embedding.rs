//! Word vectors and normalized bag-of-words documents.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DEFAULT_DIM: usize = 64;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("line {line}: expected a token followed by numbers ({reason})")]
    MalformedLine { line: usize, reason: String },
    #[error("line {line}: vector has {found} components, table dimension is {expected}")]
    InconsistentDim {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("word-vector file contains no entries")]
    EmptyTable,
    #[error("cannot embed an empty document")]
    EmptyDocument,
    #[error("embedding dimension must be positive")]
    ZeroDim,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingConfig {
    pub path: Option<String>,
    pub dim: usize,
    pub seed: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            path: None,
            dim: DEFAULT_DIM,
            seed: 0,
        }
    }
}

/// Token vectors with a deterministic hashed fallback for unknown tokens.
#[derive(Debug, Clone)]
pub struct WordVectorTable {
    dim: usize,
    entries: HashMap<String, Vec<f64>>,
    seed: u64,
}

impl WordVectorTable {
    /// A table with no stored vectors; every token goes through the fallback.
    pub fn hashed(dim: usize, seed: u64) -> Result<Self, EmbeddingError> {
        if dim == 0 {
            return Err(EmbeddingError::ZeroDim);
        }
        Ok(Self {
            dim,
            entries: HashMap::new(),
            seed,
        })
    }

    pub fn from_config(cfg: &EmbeddingConfig) -> Result<Self, EmbeddingError> {
        match &cfg.path {
            Some(path) => Ok(Self::load(path)?.with_seed(cfg.seed)),
            None => Self::hashed(cfg.dim, cfg.seed),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EmbeddingError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Parses GloVe-style text: a token followed by `dim` floats per line.
    pub fn parse(text: &str) -> Result<Self, EmbeddingError> {
        let mut dim: Option<usize> = None;
        let mut entries = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let mut fields = line.split_whitespace();
            let Some(token) = fields.next() else { continue };
            let values = fields
                .map(|f| f.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| EmbeddingError::MalformedLine {
                    line: line_no,
                    reason: e.to_string(),
                })?;
            if values.is_empty() {
                return Err(EmbeddingError::MalformedLine {
                    line: line_no,
                    reason: "no vector components".into(),
                });
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(EmbeddingError::MalformedLine {
                    line: line_no,
                    reason: "non-finite component".into(),
                });
            }
            match dim {
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(EmbeddingError::InconsistentDim {
                        line: line_no,
                        expected: d,
                        found: values.len(),
                    })
                }
                Some(_) => {}
            }
            if entries.insert(token.to_string(), values).is_some() {
                warn!(
                    "duplicate word vector for {token:?} on line {line_no}; keeping the last one"
                );
            }
        }
        let dim = dim.ok_or(EmbeddingError::EmptyTable)?;
        Ok(Self {
            dim,
            entries,
            seed: 0,
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.entries.contains_key(token)
    }

    /// Stored vector (exact match, then lowercase) or the hashed fallback.
    pub fn vector(&self, token: &str) -> Vec<f64> {
        if let Some(v) = self.entries.get(token) {
            return v.clone();
        }
        if let Some(v) = self.entries.get(&token.to_lowercase()) {
            return v.clone();
        }
        self.hashed_vector(token)
    }

    fn hashed_vector(&self, token: &str) -> Vec<f64> {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(token.as_bytes());
        let digest: [u8; 32] = hasher.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(digest);
        let mut v: Vec<f64> = (0..self.dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

/// A discrete distribution over embedding-space points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedDoc {
    pub support: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub source_tokens: Vec<String>,
}

impl EmbeddedDoc {
    /// Uniform distribution over the given points (duplicates allowed).
    pub fn uniform(points: Vec<Vec<f64>>) -> Result<Self, EmbeddingError> {
        let n = points.len();
        Self::weighted(points, vec![1.0; n])
    }

    /// Distribution from arbitrary nonnegative masses, normalized to one.
    pub fn weighted(points: Vec<Vec<f64>>, masses: Vec<f64>) -> Result<Self, EmbeddingError> {
        let total: f64 = masses.iter().sum();
        if points.is_empty() || points.len() != masses.len() || !(total > 0.0) {
            return Err(EmbeddingError::EmptyDocument);
        }
        Ok(Self {
            weights: masses.iter().map(|m| m / total).collect(),
            source_tokens: Vec::new(),
            support: points,
        })
    }

    pub fn dim(&self) -> usize {
        self.support.first().map_or(0, Vec::len)
    }

    pub fn centroid(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.dim()];
        for (point, w) in self.support.iter().zip(&self.weights) {
            for (ci, x) in c.iter_mut().zip(point) {
                *ci += w * x;
            }
        }
        c
    }
}

/// Normalized bag-of-words: unique tokens in first-occurrence order, weighted
/// by term frequency.
pub fn embed_doc<S: AsRef<str>>(
    tokens: &[S],
    table: &WordVectorTable,
) -> Result<EmbeddedDoc, EmbeddingError> {
    if tokens.is_empty() {
        return Err(EmbeddingError::EmptyDocument);
    }
    let mut order: Vec<String> = Vec::new();
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in tokens {
        let t = t.as_ref();
        let c = counts.entry(t).or_insert(0);
        if *c == 0 {
            order.push(t.to_string());
        }
        *c += 1;
    }
    let total = tokens.len() as f64;
    let weights = order
        .iter()
        .map(|t| counts[t.as_str()] as f64 / total)
        .collect();
    let support = order.iter().map(|t| table.vector(t)).collect();
    Ok(EmbeddedDoc {
        support,
        weights,
        source_tokens: order,
    })
}

/// One point per token occurrence, as used by the bootstrap test.
pub fn embed_points<S: AsRef<str>>(tokens: &[S], table: &WordVectorTable) -> Vec<Vec<f64>> {
    tokens.iter().map(|t| table.vector(t.as_ref())).collect()
}
