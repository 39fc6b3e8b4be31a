use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{
    explain, explain_tokenized, fit_cell, prepare, DistanceKind, Explanation, PipelineError,
};
use crate::gateway::Gateway;
use crate::metrics::{
    consistency, jaccard, top_k_set, ConsistencyStats, FidelityReport, MetricsError,
};
use crate::surrogate::SurrogateMethod;
use crate::text::{tokenize, tokenize_with_frozen_suffix};

use super::ExplainConfig;

pub const DEFAULT_SENTINEL: &str = "***";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub sentinel: String,
    pub top_k: usize,
    pub jaccard: f64,
    /// Prompt positions of the important tokens without and with the sentinel.
    pub base_top: Vec<usize>,
    pub sentinel_top: Vec<usize>,
    pub base: Explanation,
    pub with_sentinel: Explanation,
}

fn important_positions(e: &Explanation, k: usize) -> HashSet<usize> {
    top_k_set(&e.fit.theta, k)
        .into_iter()
        .map(|i| e.attributions[i].token_index)
        .collect()
}

fn sorted(set: &HashSet<usize>) -> Vec<usize> {
    let mut v: Vec<usize> = set.iter().copied().collect();
    v.sort_unstable();
    v
}

/// Explains `prompt` with and without a frozen trailing sentinel and compares
/// the important-token sets.
pub fn evaluate_stability(
    prompt: &str,
    gateway: &Gateway,
    cfg: &ExplainConfig,
    sentinel: &str,
) -> Result<StabilityReport, PipelineError> {
    if sentinel.trim().is_empty() {
        return Err(PipelineError::Invalid("sentinel must be non-empty".into()));
    }
    let base = explain_tokenized(tokenize(prompt, &cfg.tokenizer)?, gateway, cfg)?;
    let with_sentinel = explain_tokenized(
        tokenize_with_frozen_suffix(prompt, sentinel, &cfg.tokenizer)?,
        gateway,
        cfg,
    )?;
    let a = important_positions(&base, cfg.top_k);
    let b = important_positions(&with_sentinel, cfg.top_k);
    Ok(StabilityReport {
        sentinel: sentinel.to_string(),
        top_k: cfg.top_k,
        jaccard: jaccard(&a, &b)?,
        base_top: sorted(&a),
        sentinel_top: sorted(&b),
        base,
        with_sentinel,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub stats: ConsistencyStats,
    pub shared_seed: bool,
    pub seeds: Vec<u64>,
    pub tokens: Vec<String>,
    /// One score vector per run.
    pub scores: Vec<Vec<f64>>,
}

/// Repeats the explanation `runs` times. With `shared_seed` every run draws
/// the same perturbations; otherwise run `r` uses seed `cfg.seed + r`.
pub fn evaluate_consistency(
    prompt: &str,
    gateway: &Gateway,
    cfg: &ExplainConfig,
    runs: usize,
    shared_seed: bool,
) -> Result<ConsistencyReport, PipelineError> {
    if runs < 2 {
        return Err(MetricsError::TooFewRuns(runs).into());
    }
    let seeds: Vec<u64> = (0..runs as u64)
        .map(|r| {
            if shared_seed {
                cfg.seed
            } else {
                cfg.seed.wrapping_add(r)
            }
        })
        .collect();
    let mut scores = Vec::with_capacity(runs);
    let mut tokens = Vec::new();
    for &seed in &seeds {
        let e = explain(
            prompt,
            gateway,
            &ExplainConfig {
                seed,
                ..cfg.clone()
            },
        )?;
        tokens = e.attributions.iter().map(|a| a.text.clone()).collect();
        scores.push(e.scores());
    }
    Ok(ConsistencyReport {
        stats: consistency(&scores)?,
        shared_seed,
        seeds,
        tokens,
        scores,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub requested: usize,
    pub n_perturbations: usize,
    pub rows_used: usize,
    pub fidelity: Option<FidelityReport>,
    /// Smaller counts reuse a prefix of the larger counts' perturbations.
    pub shared_prefix: bool,
}

pub fn sweep_perturbations(
    prompt: &str,
    gateway: &Gateway,
    cfg: &ExplainConfig,
    counts: &[usize],
) -> Result<Vec<SweepRow>, PipelineError> {
    if counts.is_empty() {
        return Err(PipelineError::EmptySweep);
    }
    counts
        .iter()
        .map(|&count| {
            let e = explain(
                prompt,
                gateway,
                &ExplainConfig {
                    n_perturbations: count,
                    ..cfg.clone()
                },
            )?;
            Ok(SweepRow {
                requested: count,
                n_perturbations: e.perturbations.len(),
                rows_used: e.diagnostics.rows_used,
                fidelity: e.fidelity,
                shared_prefix: true,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MethodCell {
    pub input_distance: DistanceKind,
    pub output_distance: DistanceKind,
    pub method: SurrogateMethod,
}

/// Five input/output distance pairings, each with both surrogates.
pub fn default_matrix() -> Vec<MethodCell> {
    use DistanceKind::*;
    let pairs = [
        (Cosine, Cosine),
        (Cosine, Wmd),
        (Wmd, Wmd),
        (Wmd, Cosine),
        (WmdCosine, WmdCosine),
    ];
    pairs
        .iter()
        .flat_map(|&(i, o)| {
            [SurrogateMethod::Wls, SurrogateMethod::BayesRidge].map(|method| MethodCell {
                input_distance: i,
                output_distance: o,
                method,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub cell: MethodCell,
    pub sigma: f64,
    pub rows_used: usize,
    pub fidelity: Option<FidelityReport>,
    pub scores: Vec<f64>,
    pub top_tokens: Vec<usize>,
}

/// Fits every cell on one shared set of generations.
pub fn compare_methods(
    prompt: &str,
    gateway: &Gateway,
    cfg: &ExplainConfig,
    matrix: &[MethodCell],
) -> Result<Vec<CompareRow>, PipelineError> {
    if matrix.is_empty() {
        return Err(PipelineError::Invalid("comparison matrix is empty".into()));
    }
    let prep = prepare(tokenize(prompt, &cfg.tokenizer)?, gateway, cfg)?;
    matrix
        .iter()
        .map(|&cell| {
            let f = fit_cell(
                &prep,
                cell.input_distance,
                cell.output_distance,
                cell.method,
                cfg,
            )?;
            let top: HashSet<usize> = top_k_set(&f.fit.theta, cfg.top_k)
                .into_iter()
                .map(|i| f.attributions[i].token_index)
                .collect();
            Ok(CompareRow {
                cell,
                sigma: f.diagnostics.sigma,
                rows_used: f.diagnostics.rows_used,
                fidelity: f.fidelity,
                scores: f.fit.theta,
                top_tokens: sorted(&top),
            })
        })
        .collect()
}
