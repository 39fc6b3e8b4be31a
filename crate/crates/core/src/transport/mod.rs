//! Distances between documents and distributions.
//!
//! `emd` solves the exact transport problem between two embedded documents
//! (Word Mover's Distance when the ground cost is Euclidean and `p = 1`).
//! The remaining functions are closed forms: sorted-sample Wasserstein-P on
//! the real line, centroid cosine distance, and total variation.

mod simplex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{embed_doc, EmbeddedDoc, EmbeddingError, WordVectorTable};
use crate::text::{segment, PerturbedPrompt, TokenizedPrompt, TokenizerConfig};

pub const DEFAULT_MAX_SUPPORT: usize = 512;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("empty input")]
    EmptyInput,
    #[error("support of size {size} exceeds the limit of {limit}")]
    SupportTooLarge { size: usize, limit: usize },
    #[error("transport solver failed: {0}")]
    SolverFailure(String),
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("distributions have supports of size {0} and {1}")]
    SupportMismatch(usize, usize),
    #[error("points have dimensions {0} and {1}")]
    DimensionMismatch(usize, usize),
    #[error("unsupported norm order p = {0}; expected 1 or 2")]
    UnsupportedOrder(u32),
    #[error("cannot embed an empty document")]
    EmptyDocument,
    #[error("model output contains no tokens")]
    EmptyOutput,
}

impl From<EmbeddingError> for TransportError {
    fn from(_: EmbeddingError) -> Self {
        TransportError::EmptyDocument
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransportConfig {
    pub p: u32,
    pub max_support: usize,
}

impl Default for TransportConfig {
    fn default() -> Self {
        Self {
            p: 1,
            max_support: DEFAULT_MAX_SUPPORT,
        }
    }
}

impl TransportConfig {
    pub fn validate(&self) -> Result<(), TransportError> {
        if !(1..=2).contains(&self.p) {
            return Err(TransportError::UnsupportedOrder(self.p));
        }
        if self.max_support == 0 {
            return Err(TransportError::SupportTooLarge { size: 0, limit: 0 });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    Exact,
    ClosedForm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceResult {
    pub value: f64,
    pub solver: Solver,
    pub iterations: usize,
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Wasserstein-P between two empirical samples on the real line.
///
/// Equal sizes pair the order statistics directly. Otherwise the quantile
/// functions are integrated over the common refinement of `{i/n}` and `{j/m}`.
pub fn wasserstein_1d(xs: &[f64], ys: &[f64], p: u32) -> Result<DistanceResult, TransportError> {
    if xs.is_empty() || ys.is_empty() {
        return Err(TransportError::EmptyInput);
    }
    if p == 0 {
        return Err(TransportError::UnsupportedOrder(p));
    }
    let mut xs = xs.to_vec();
    let mut ys = ys.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let p_f = p as f64;

    let integral = if xs.len() == ys.len() {
        xs.iter()
            .zip(&ys)
            .map(|(x, y)| (x - y).abs().powf(p_f))
            .sum::<f64>()
            / xs.len() as f64
    } else {
        let (n, m) = (xs.len(), ys.len());
        let (mut i, mut j) = (0usize, 0usize);
        let mut t = 0.0;
        let mut acc = 0.0;
        while i < n && j < m {
            // compare (i+1)/n against (j+1)/m exactly
            let lhs = (i + 1) * m;
            let rhs = (j + 1) * n;
            let next = if lhs <= rhs {
                (i + 1) as f64 / n as f64
            } else {
                (j + 1) as f64 / m as f64
            };
            acc += (next - t) * (xs[i] - ys[j]).abs().powf(p_f);
            t = next;
            if lhs <= rhs {
                i += 1;
            }
            if rhs <= lhs {
                j += 1;
            }
        }
        acc
    };
    Ok(DistanceResult {
        value: integral.max(0.0).powf(1.0 / p_f),
        solver: Solver::ClosedForm,
        iterations: 0,
    })
}

/// Exact optimal transport cost between two documents with ground cost
/// `||u_i - v_j||^p`, returned as `cost^(1/p)`.
pub fn emd(
    a: &EmbeddedDoc,
    b: &EmbeddedDoc,
    cfg: &TransportConfig,
) -> Result<DistanceResult, TransportError> {
    cfg.validate()?;
    if a.support.is_empty() || b.support.is_empty() {
        return Err(TransportError::EmptyInput);
    }
    for doc in [a, b] {
        if doc.support.len() > cfg.max_support {
            return Err(TransportError::SupportTooLarge {
                size: doc.support.len(),
                limit: cfg.max_support,
            });
        }
    }
    let dim = a.dim();
    if let Some(bad) = a.support.iter().chain(&b.support).find(|v| v.len() != dim) {
        return Err(TransportError::DimensionMismatch(dim, bad.len()));
    }

    let p = cfg.p as i32;
    let mut cost = Vec::with_capacity(a.support.len() * b.support.len());
    for u in &a.support {
        for v in &b.support {
            cost.push(euclidean(u, v).powi(p));
        }
    }
    emd_with_cost(&a.weights, &b.weights, &cost, cfg.p)
}

/// Exact transport between two mass vectors given a precomputed row-major
/// ground cost (already raised to the power `p`).
pub fn emd_with_cost(
    a: &[f64],
    b: &[f64],
    cost: &[f64],
    p: u32,
) -> Result<DistanceResult, TransportError> {
    if a.is_empty() || b.is_empty() {
        return Err(TransportError::EmptyInput);
    }
    if cost.len() != a.len() * b.len() {
        return Err(TransportError::DimensionMismatch(
            a.len() * b.len(),
            cost.len(),
        ));
    }
    let plan =
        simplex::solve(a, b, cost).map_err(|e| TransportError::SolverFailure(format!("{e:?}")))?;
    let value = if p == 1 {
        plan.cost
    } else {
        plan.cost.max(0.0).powf(1.0 / p as f64)
    };
    Ok(DistanceResult {
        value,
        solver: Solver::Exact,
        iterations: plan.iterations,
    })
}

/// Input-level distance between a prompt and one of its perturbations.
pub fn iwmd(
    x: &TokenizedPrompt,
    xj: &PerturbedPrompt,
    table: &WordVectorTable,
    cfg: &TransportConfig,
) -> Result<DistanceResult, TransportError> {
    let a = embed_doc(&x.token_texts(), table)?;
    let b = embed_doc(&xj.tokens, table)?;
    emd(&a, &b, cfg)
}

/// Token texts of a model output.
pub fn output_tokens(text: &str, tokenizer: &TokenizerConfig) -> Vec<String> {
    segment(text, tokenizer).token_texts()
}

/// Output-level shift between two generations.
pub fn owmd(
    y_org: &str,
    y_pert: &str,
    table: &WordVectorTable,
    cfg: &TransportConfig,
    tokenizer: &TokenizerConfig,
) -> Result<DistanceResult, TransportError> {
    let a = output_tokens(y_org, tokenizer);
    let b = output_tokens(y_pert, tokenizer);
    owmd_tokens(&a, &b, table, cfg)
}

pub fn owmd_tokens(
    y_org: &[String],
    y_pert: &[String],
    table: &WordVectorTable,
    cfg: &TransportConfig,
) -> Result<DistanceResult, TransportError> {
    if y_org.is_empty() || y_pert.is_empty() {
        return Err(TransportError::EmptyOutput);
    }
    emd(&embed_doc(y_org, table)?, &embed_doc(y_pert, table)?, cfg)
}

pub fn cosine_distance_vectors(a: &[f64], b: &[f64]) -> Result<f64, TransportError> {
    if a.len() != b.len() {
        return Err(TransportError::DimensionMismatch(a.len(), b.len()));
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(TransportError::ZeroVector);
    }
    if a == b {
        return Ok(0.0);
    }
    let cos = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb);
    Ok((1.0 - cos).clamp(0.0, 2.0))
}

/// `1 - cos` between the weighted centroids of two documents.
pub fn cosine_distance(a: &EmbeddedDoc, b: &EmbeddedDoc) -> Result<f64, TransportError> {
    cosine_distance_vectors(&a.centroid(), &b.centroid())
}

/// Half the L1 difference between two distributions on a shared support.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64, TransportError> {
    if p.len() != q.len() {
        return Err(TransportError::SupportMismatch(p.len(), q.len()));
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Largest pairwise ground distance within a point set.
pub fn diameter(points: &[Vec<f64>]) -> f64 {
    let mut best = 0.0f64;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            best = best.max(euclidean(a, b));
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(points: Vec<Vec<f64>>) -> EmbeddedDoc {
        EmbeddedDoc::uniform(points).unwrap()
    }

    #[test]
    fn one_dimensional_examples() {
        let r = wasserstein_1d(&[0.0, 1.0, 2.0], &[1.0, 2.0, 3.0], 1).unwrap();
        assert_eq!(r.value, 1.0);
        assert_eq!(r.solver, Solver::ClosedForm);
        assert_eq!(
            wasserstein_1d(&[4.0, 1.0], &[1.0, 4.0], 2).unwrap().value,
            0.0
        );
        assert_eq!(wasserstein_1d(&[0.0], &[3.0], 2).unwrap().value, 3.0);
        assert_eq!(
            wasserstein_1d(&[], &[3.0], 1),
            Err(TransportError::EmptyInput)
        );
    }

    #[test]
    fn unequal_sizes_use_quantile_integral() {
        // F^-1 of {0,1}: 0 on (0,.5], 1 on (.5,1]; G^-1 of {0,0,3}: 0 on (0,2/3], 3 after
        // |diff|: 0 on (0,.5], 1 on (.5,2/3], 2 on (2/3,1]  => 1/6 + 2/3 = 5/6
        let r = wasserstein_1d(&[1.0, 0.0], &[0.0, 3.0, 0.0], 1).unwrap();
        assert!((r.value - 5.0 / 6.0).abs() < 1e-15);
        // a sample against itself duplicated
        let r = wasserstein_1d(&[1.0, 2.0], &[1.0, 1.0, 2.0, 2.0], 1).unwrap();
        assert!(r.value.abs() < 1e-15);
    }

    #[test]
    fn unit_masses_at_distance_d() {
        let a = doc(vec![vec![0.0, 0.0]]);
        let b = doc(vec![vec![3.0, 4.0]]);
        let r = emd(&a, &b, &TransportConfig::default()).unwrap();
        assert!((r.value - 5.0).abs() < 1e-12);
        assert_eq!(r.solver, Solver::Exact);
    }

    #[test]
    fn identical_documents_are_at_zero() {
        let a = doc(vec![vec![0.0, 1.0], vec![2.0, 0.5], vec![-1.0, 3.0]]);
        assert!(
            emd(&a, &a, &TransportConfig::default())
                .unwrap()
                .value
                .abs()
                < 1e-12
        );
    }

    #[test]
    fn p_two_of_single_masses() {
        let a = doc(vec![vec![0.0]]);
        let b = doc(vec![vec![3.0]]);
        let cfg = TransportConfig {
            p: 2,
            ..Default::default()
        };
        assert!((emd(&a, &b, &cfg).unwrap().value - 3.0).abs() < 1e-12);
    }

    #[test]
    fn guards() {
        let a = doc(vec![vec![0.0]; 3]);
        let b = doc(vec![vec![1.0]]);
        let cfg = TransportConfig {
            max_support: 2,
            ..Default::default()
        };
        assert_eq!(
            emd(&a, &b, &cfg),
            Err(TransportError::SupportTooLarge { size: 3, limit: 2 })
        );
        let cfg = TransportConfig {
            p: 3,
            ..Default::default()
        };
        assert_eq!(emd(&a, &b, &cfg), Err(TransportError::UnsupportedOrder(3)));
        let c = doc(vec![vec![1.0, 2.0]]);
        assert_eq!(
            emd(&b, &c, &TransportConfig::default()),
            Err(TransportError::DimensionMismatch(1, 2))
        );
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(
            cosine_distance_vectors(&[1.0, 2.0], &[1.0, 2.0]).unwrap(),
            0.0
        );
        assert!((cosine_distance_vectors(&[1.0, 0.0], &[0.0, 3.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((cosine_distance_vectors(&[1.0, 1.0], &[-2.0, -2.0]).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(
            cosine_distance_vectors(&[0.0, 0.0], &[1.0, 0.0]),
            Err(TransportError::ZeroVector)
        );
    }

    #[test]
    fn tv_examples() {
        assert_eq!(tv_distance(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_eq!(tv_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(tv_distance(&[0.5, 0.5], &[1.0, 0.0]).unwrap(), 0.5);
        assert_eq!(
            tv_distance(&[1.0], &[0.5, 0.5]),
            Err(TransportError::SupportMismatch(1, 2))
        );
    }

    #[test]
    fn one_word_prompts_are_their_vector_distance() {
        let table = WordVectorTable::hashed(16, 3).unwrap();
        let tok = TokenizerConfig::default();
        let r = owmd("cat", "dog", &table, &TransportConfig::default(), &tok).unwrap();
        let expected = euclidean(&table.vector("cat"), &table.vector("dog"));
        assert!((r.value - expected).abs() < 1e-12);
    }

    #[test]
    fn empty_output_is_reported() {
        let table = WordVectorTable::hashed(16, 3).unwrap();
        let tok = TokenizerConfig::default();
        assert_eq!(
            owmd("cat", "   ", &table, &TransportConfig::default(), &tok),
            Err(TransportError::EmptyOutput)
        );
    }

    #[test]
    fn partial_overlap_is_closer_than_disjoint() {
        let table = WordVectorTable::hashed(32, 5).unwrap();
        let tok = TokenizerConfig::default();
        let cfg = TransportConfig::default();
        let base = "the quick brown fox jumps over the lazy dog today";
        let one_word = "the quick brown fox jumps over the lazy cat today";
        let disjoint = "seven purple engines hum beneath frozen lakes quietly at dawn";
        let same = owmd(base, base, &table, &cfg, &tok).unwrap().value;
        let near = owmd(base, one_word, &table, &cfg, &tok).unwrap().value;
        let far = owmd(base, disjoint, &table, &cfg, &tok).unwrap().value;
        assert_eq!(same, 0.0);
        assert!(near > 0.0 && near < far, "{near} {far}");
    }
}
