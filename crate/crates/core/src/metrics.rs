//! Attribution quality metrics: fidelity, accuracy, stability, consistency
//! and faithfulness.

use std::collections::HashSet;
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::surrogate::rank_by_magnitude;

pub const DEFAULT_TOP_K: usize = 3;

/// Scores at or below this fraction of the largest magnitude count as zero
/// when building important-token sets.
pub const NEGLIGIBLE_SCORE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("inputs have lengths {0} and {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} points, got {found}")]
    TooFewPoints { needed: usize, found: usize },
    #[error("weights must be positive and finite")]
    InvalidWeights,
    #[error("ground truth has a single class; AUROC is undefined")]
    UndefinedAuroc,
    #[error("both sets are empty")]
    BothEmpty,
    #[error("at least two runs are required, got {0}")]
    TooFewRuns(usize),
    #[error("input has zero variance")]
    ZeroVariance,
    #[error("labels must be 0 or 1")]
    InvalidLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub wmse: f64,
    pub wmae: f64,
    pub mean_l1: f64,
    pub mean_l2: f64,
    /// `None` when the observed values have zero spread.
    pub r2: Option<f64>,
    pub r2_w: Option<f64>,
    /// `None` also when `n_points <= n_features + 1`.
    pub r2_w_adj: Option<f64>,
    pub n_points: usize,
    pub n_features: usize,
}

/// Agreement between black-box values `f` and surrogate predictions `g`.
///
/// The weighted coefficient of determination compares the residual sum of
/// squares with the spread of `f` around its weighted mean; both sums are
/// unweighted.
pub fn fidelity(
    f: &[f64],
    g: &[f64],
    w: &[f64],
    n_features: usize,
) -> Result<FidelityReport, MetricsError> {
    if f.len() != g.len() {
        return Err(MetricsError::LengthMismatch(f.len(), g.len()));
    }
    if f.len() != w.len() {
        return Err(MetricsError::LengthMismatch(f.len(), w.len()));
    }
    let n = f.len();
    if n < 2 {
        return Err(MetricsError::TooFewPoints {
            needed: 2,
            found: n,
        });
    }
    if w.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(MetricsError::InvalidWeights);
    }
    let np = n as f64;
    let w_sum: f64 = w.iter().sum();
    let residuals: Vec<f64> = f.iter().zip(g).map(|(a, b)| a - b).collect();
    let rss: f64 = residuals.iter().map(|r| r * r).sum();

    let wmse = residuals
        .iter()
        .zip(w)
        .map(|(r, wi)| wi * r * r)
        .sum::<f64>()
        / w_sum;
    let wmae = residuals
        .iter()
        .zip(w)
        .map(|(r, wi)| wi * r.abs())
        .sum::<f64>()
        / w_sum;
    let mean_l1 = residuals.iter().map(|r| r.abs()).sum::<f64>() / np;
    let mean_l2 = rss / np;

    let f_mean = f.iter().sum::<f64>() / np;
    let f_wmean = f.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / w_sum;
    let tss: f64 = f.iter().map(|a| (a - f_mean).powi(2)).sum();
    let tss_w: f64 = f.iter().map(|a| (a - f_wmean).powi(2)).sum();

    let r2 = (tss > 0.0).then(|| 1.0 - rss / tss);
    let r2_w = (tss_w > 0.0).then(|| 1.0 - rss / tss_w);
    let r2_w_adj = match r2_w {
        Some(r) if n > n_features + 1 => {
            Some(1.0 - (1.0 - r) * (np - 1.0) / (np - n_features as f64 - 1.0))
        }
        _ => None,
    };
    Ok(FidelityReport {
        wmse,
        wmae,
        mean_l1,
        mean_l2,
        r2,
        r2_w,
        r2_w_adj,
        n_points: n,
        n_features,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub acc: f64,
    pub f1: f64,
    pub auroc: f64,
}

/// Ranking quality of per-token scores against binary labels.
///
/// AUROC is the Mann-Whitney probability that a positive outranks a negative
/// (ties count one half). ACC and F1 binarize by marking the top `k` scores
/// positive, where `k` is the number of positive labels.
pub fn att_accuracy(scores: &[f64], truth: &[u8]) -> Result<AccuracyReport, MetricsError> {
    if scores.len() != truth.len() {
        return Err(MetricsError::LengthMismatch(scores.len(), truth.len()));
    }
    if truth.iter().any(|t| *t > 1) {
        return Err(MetricsError::InvalidLabel);
    }
    let positives: Vec<f64> = scores
        .iter()
        .zip(truth)
        .filter(|(_, t)| **t == 1)
        .map(|(s, _)| *s)
        .collect();
    let negatives: Vec<f64> = scores
        .iter()
        .zip(truth)
        .filter(|(_, t)| **t == 0)
        .map(|(s, _)| *s)
        .collect();
    if positives.is_empty() || negatives.is_empty() {
        return Err(MetricsError::UndefinedAuroc);
    }
    let mut wins = 0.0;
    for p in &positives {
        for q in &negatives {
            wins += if p > q {
                1.0
            } else if p == q {
                0.5
            } else {
                0.0
            };
        }
    }
    let auroc = wins / (positives.len() * negatives.len()) as f64;

    let k = positives.len();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut predicted = vec![0u8; scores.len()];
    for &i in &order[..k] {
        predicted[i] = 1;
    }
    let correct = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    let tp = predicted
        .iter()
        .zip(truth)
        .filter(|(a, b)| **a == 1 && **b == 1)
        .count() as f64;
    let fp = predicted
        .iter()
        .zip(truth)
        .filter(|(a, b)| **a == 1 && **b == 0)
        .count() as f64;
    let fn_ = predicted
        .iter()
        .zip(truth)
        .filter(|(a, b)| **a == 0 && **b == 1)
        .count() as f64;
    let f1 = if tp == 0.0 {
        0.0
    } else {
        2.0 * tp / (2.0 * tp + fp + fn_)
    };
    Ok(AccuracyReport {
        acc: correct as f64 / scores.len() as f64,
        f1,
        auroc,
    })
}

pub fn jaccard<T: Eq + Hash>(a: &HashSet<T>, b: &HashSet<T>) -> Result<f64, MetricsError> {
    let union = a.union(b).count();
    if union == 0 {
        return Err(MetricsError::BothEmpty);
    }
    Ok(a.intersection(b).count() as f64 / union as f64)
}

/// Positions of the `k` largest-magnitude scores, ties broken by position.
/// Scores negligible relative to the largest magnitude are never included.
pub fn top_k_set(scores: &[f64], k: usize) -> HashSet<usize> {
    let max = scores.iter().fold(0.0f64, |a, s| a.max(s.abs()));
    rank_by_magnitude(scores)
        .into_iter()
        .filter(|&i| scores[i].abs() > NEGLIGIBLE_SCORE * max)
        .take(k)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyStats {
    pub variance: Vec<f64>,
    pub std: Vec<f64>,
    pub mean_variance: f64,
    pub mean_std: f64,
    pub runs: usize,
}

/// Per-token sample variance (n - 1 denominator) across runs.
pub fn consistency(runs: &[Vec<f64>]) -> Result<ConsistencyStats, MetricsError> {
    if runs.len() < 2 {
        return Err(MetricsError::TooFewRuns(runs.len()));
    }
    let width = runs[0].len();
    if let Some(bad) = runs.iter().find(|r| r.len() != width) {
        return Err(MetricsError::LengthMismatch(width, bad.len()));
    }
    let n = runs.len() as f64;
    let variance: Vec<f64> = (0..width)
        .map(|t| {
            // shifted by the first run so identical runs give exactly zero
            let shifted: Vec<f64> = runs.iter().map(|r| r[t] - runs[0][t]).collect();
            let mean = shifted.iter().sum::<f64>() / n;
            shifted.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)
        })
        .collect();
    let std: Vec<f64> = variance.iter().map(|v| v.sqrt()).collect();
    let denom = width.max(1) as f64;
    Ok(ConsistencyStats {
        mean_variance: variance.iter().sum::<f64>() / denom,
        mean_std: std.iter().sum::<f64>() / denom,
        variance,
        std,
        runs: runs.len(),
    })
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(MetricsError::TooFewPoints {
            needed: 2,
            found: x.len(),
        });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricsError::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}
