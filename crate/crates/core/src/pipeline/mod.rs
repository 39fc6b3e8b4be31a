//! End-to-end explanation of one prompt, plus the evaluation harnesses built
//! on top of it.

mod harness;
mod ingest;

use std::collections::HashMap;
use std::fmt;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{embed_doc, embed_points, EmbeddingConfig, EmbeddingError, WordVectorTable};
use crate::gateway::{Gateway, GatewayConfig, GatewayError, GenerationRecord, GeneratorSpec};
use crate::metrics::{fidelity, FidelityReport, MetricsError};
use crate::significance::{bootstrap_pvalue, BootstrapConfig, SignificanceError};
use crate::surrogate::{
    attributions, fit_bayes_ridge, fit_wls, kernel_weight, resolve_sigma, RegressionProblem,
    SurrogateConfig, SurrogateError, SurrogateFit, SurrogateMethod, TokenAttribution,
};
use crate::text::{
    apply_mask, sample_masks, tokenize, EditMode, PerturbationMask, PerturbedPrompt, TextError,
    TokenizedPrompt, TokenizerConfig,
};
use crate::transport::{cosine_distance, emd, output_tokens, TransportConfig, TransportError};

pub use harness::{
    compare_methods, default_matrix, evaluate_consistency, evaluate_stability, sweep_perturbations,
    CompareRow, ConsistencyReport, MethodCell, StabilityReport, SweepRow, DEFAULT_SENTINEL,
};
pub use ingest::{load_prompt_batch, parse_prompt_batch, PromptRecord};

/// Below this many perturbations the fit is flagged as unstable.
pub const MIN_STABLE_PERTURBATIONS: usize = 8;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Text(#[from] TextError),
    #[error("prompt has {0} perturbable token(s); at least 2 are required")]
    DegeneratePrompt(usize),
    #[error("all {total} perturbations were filtered out or unusable")]
    AllPerturbationsFiltered { total: usize },
    #[error("the model returned no tokens for the original prompt")]
    EmptyOriginalOutput,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Significance(#[from] SignificanceError),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("perturbation count list is empty")]
    EmptySweep,
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl PipelineError {
    /// Stable identifier for machine-readable error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::Text(_) => "text",
            PipelineError::DegeneratePrompt(_) => "degenerate_prompt",
            PipelineError::AllPerturbationsFiltered { .. } => "all_perturbations_filtered",
            PipelineError::EmptyOriginalOutput => "empty_output",
            PipelineError::Gateway(GatewayError::Auth(_)) => "auth",
            PipelineError::Gateway(_) => "gateway",
            PipelineError::Embedding(_) => "embedding",
            PipelineError::Transport(_) => "transport",
            PipelineError::Significance(_) => "significance",
            PipelineError::Surrogate(_) => "surrogate",
            PipelineError::Metrics(_) => "metrics",
            PipelineError::EmptySweep => "empty_sweep",
            PipelineError::Invalid(_) => "invalid",
            PipelineError::Io { .. } => "io",
        }
    }
}

/// How two texts are compared, at the prompt or at the output level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum DistanceKind {
    #[serde(rename = "cosine")]
    Cosine,
    #[default]
    #[serde(rename = "wmd")]
    Wmd,
    /// Mean of batch min-max normalized WMD and cosine distances.
    #[serde(rename = "wmd+c")]
    WmdCosine,
}

impl fmt::Display for DistanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DistanceKind::Cosine => "cosine",
            DistanceKind::Wmd => "wmd",
            DistanceKind::WmdCosine => "wmd+c",
        })
    }
}

impl std::str::FromStr for DistanceKind {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cosine" => Ok(DistanceKind::Cosine),
            "wmd" => Ok(DistanceKind::Wmd),
            "wmd+c" => Ok(DistanceKind::WmdCosine),
            other => Err(PipelineError::Invalid(format!(
                "unknown distance {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainConfig {
    pub n_perturbations: usize,
    pub seed: u64,
    pub edit_mode: EditMode,
    pub input_distance: DistanceKind,
    pub output_distance: DistanceKind,
    /// Size of the important-token set used by the stability check.
    pub top_k: usize,
    pub tokenizer: TokenizerConfig,
    pub embedding: EmbeddingConfig,
    pub transport: TransportConfig,
    pub significance: BootstrapConfig,
    pub surrogate: SurrogateConfig,
    pub gateway: GatewayConfig,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self {
            n_perturbations: 64,
            seed: 0,
            edit_mode: EditMode::Drop,
            input_distance: DistanceKind::Wmd,
            output_distance: DistanceKind::Wmd,
            top_k: crate::metrics::DEFAULT_TOP_K,
            tokenizer: TokenizerConfig::default(),
            embedding: EmbeddingConfig::default(),
            transport: TransportConfig::default(),
            significance: BootstrapConfig::default(),
            surrogate: SurrogateConfig::default(),
            gateway: GatewayConfig::default(),
        }
    }
}

impl ExplainConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.n_perturbations == 0 {
            return Err(TextError::ZeroCount.into());
        }
        self.transport.validate()?;
        if self.significance.enabled {
            self.significance.validate()?;
        }
        if self.top_k == 0 {
            return Err(PipelineError::Invalid("top_k must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationRecord {
    pub mask: PerturbationMask,
    pub prompt: String,
    pub output: String,
    pub input_distance: Option<f64>,
    pub weight: Option<f64>,
    pub output_distance: Option<f64>,
    pub p_value: Option<f64>,
    /// Whether the row entered the regression.
    pub kept: bool,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub sigma: f64,
    pub rows_total: usize,
    pub rows_used: usize,
    pub rows_filtered: usize,
    pub rows_unusable: usize,
    pub method: SurrogateMethod,
    pub input_distance: DistanceKind,
    pub output_distance: DistanceKind,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub prompt: TokenizedPrompt,
    pub attributions: Vec<TokenAttribution>,
    /// Mean p-value over the perturbations that removed each perturbable
    /// token; `None` when the significance filter is off or never applied.
    pub token_p_values: Vec<Option<f64>>,
    pub fit: SurrogateFit,
    pub fidelity: Option<FidelityReport>,
    pub diagnostics: FitDiagnostics,
    pub perturbations: Vec<PerturbationRecord>,
    pub original: GenerationRecord,
    /// Every distinct generation used, original first.
    pub generations: Vec<GenerationRecord>,
    pub config: ExplainConfig,
    pub generator: GeneratorSpec,
}

impl Explanation {
    /// Scores over the perturbable tokens, in prompt order.
    pub fn scores(&self) -> Vec<f64> {
        self.fit.theta.clone()
    }

    /// Copy with wall-clock fields zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> Self {
        let mut e = self.clone();
        e.original.latency_ms = 0;
        for g in &mut e.generations {
            g.latency_ms = 0;
        }
        e
    }
}

struct Row {
    perturbed: PerturbedPrompt,
    output: String,
    output_tokens: Vec<String>,
    p_value: Option<f64>,
    usable: bool,
    note: Option<String>,
}

/// Generations and significance results shared by every fit of one prompt.
struct Prepared {
    prompt: TokenizedPrompt,
    table: WordVectorTable,
    original: GenerationRecord,
    original_tokens: Vec<String>,
    rows: Vec<Row>,
    generations: Vec<GenerationRecord>,
    warnings: Vec<String>,
}

struct Fitted {
    fit: SurrogateFit,
    attributions: Vec<TokenAttribution>,
    fidelity: Option<FidelityReport>,
    diagnostics: FitDiagnostics,
    /// Per row: (input distance, weight, output distance) for rows used.
    per_row: Vec<Option<(f64, f64, f64)>>,
}

fn bootstrap_seed(base: u64, run_seed: u64, mask_id: usize) -> u64 {
    base.wrapping_add(run_seed.wrapping_mul(0xD1B5_4A32_D192_ED03))
        .wrapping_add((mask_id as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn prepare(
    prompt: TokenizedPrompt,
    gateway: &Gateway,
    cfg: &ExplainConfig,
) -> Result<Prepared, PipelineError> {
    cfg.validate()?;
    let n = prompt.perturbable_count();
    if n < 2 {
        return Err(PipelineError::DegeneratePrompt(n));
    }
    let mut warnings = Vec::new();
    if cfg.n_perturbations < MIN_STABLE_PERTURBATIONS {
        warnings.push(format!(
            "only {} perturbations requested; the fit may be unstable",
            cfg.n_perturbations
        ));
    }
    if !gateway.spec().is_deterministic() {
        warnings.push(format!(
            "temperature {} makes generations non-repeatable",
            gateway.spec().temperature
        ));
    }
    let table = WordVectorTable::from_config(&cfg.embedding)?;
    let masks = sample_masks(n, cfg.n_perturbations, cfg.seed)?;
    if masks.len() < cfg.n_perturbations {
        warnings.push(format!(
            "only {} distinct perturbations exist for {n} tokens",
            masks.len()
        ));
    }
    let perturbed: Vec<PerturbedPrompt> = masks
        .iter()
        .map(|m| apply_mask(&prompt, m, cfg.edit_mode, &cfg.tokenizer.placeholder))
        .collect::<Result<_, _>>()?;

    // one request per distinct prompt text, original first
    let mut unique: Vec<String> = Vec::new();
    let mut slot: HashMap<String, usize> = HashMap::new();
    for text in std::iter::once(&prompt.raw_text).chain(perturbed.iter().map(|p| &p.text)) {
        if !slot.contains_key(text) {
            slot.insert(text.clone(), unique.len());
            unique.push(text.clone());
        }
    }
    let generations: Vec<GenerationRecord> = gateway
        .generate_batch(&unique, gateway.parallelism())
        .into_iter()
        .collect::<Result<_, _>>()?;

    let original = generations[0].clone();
    let original_tokens = output_tokens(&original.output, &cfg.tokenizer);
    if original_tokens.is_empty() {
        return Err(PipelineError::EmptyOriginalOutput);
    }
    let original_points = embed_points(&original_tokens, &table);

    let mut rows = Vec::with_capacity(perturbed.len());
    for p in perturbed {
        let output = generations[slot[&p.text]].output.clone();
        let tokens = output_tokens(&output, &cfg.tokenizer);
        let mut row = Row {
            perturbed: p,
            output,
            output_tokens: tokens,
            p_value: None,
            usable: true,
            note: None,
        };
        if row.output_tokens.is_empty() {
            warn!(
                "perturbation {} produced an empty output; dropped",
                row.perturbed.mask.id
            );
            row.usable = false;
            row.note = Some("empty output".into());
        } else if cfg.significance.enabled {
            let mut sig = cfg.significance;
            sig.seed = bootstrap_seed(sig.seed, cfg.seed, row.perturbed.mask.id);
            let result = bootstrap_pvalue(
                &original_points,
                &embed_points(&row.output_tokens, &table),
                &sig,
                &cfg.transport,
            )?;
            row.p_value = Some(result.p_value);
            if !result.kept {
                row.usable = false;
                row.note = Some(format!("not significant (p = {})", result.p_value));
            }
        }
        rows.push(row);
    }
    Ok(Prepared {
        prompt,
        table,
        original,
        original_tokens,
        rows,
        generations,
        warnings,
    })
}

fn min_max(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        values.iter().map(|v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![0.0; values.len()]
    }
}

/// Distances from `reference` to each document under `kind`.
fn batch_distances<S: AsRef<str>>(
    reference: &[S],
    docs: &[&[String]],
    kind: DistanceKind,
    table: &WordVectorTable,
    transport: &TransportConfig,
) -> Result<Vec<f64>, PipelineError> {
    let base = embed_doc(reference, table)?;
    let embedded: Vec<_> = docs
        .iter()
        .map(|d| embed_doc(d, table))
        .collect::<Result<_, _>>()?;
    let wmd = || -> Result<Vec<f64>, PipelineError> {
        embedded
            .iter()
            .map(|d| Ok(emd(&base, d, transport)?.value))
            .collect()
    };
    let cos = || -> Result<Vec<f64>, PipelineError> {
        embedded
            .iter()
            .map(|d| Ok(cosine_distance(&base, d)?))
            .collect()
    };
    Ok(match kind {
        DistanceKind::Wmd => wmd()?,
        DistanceKind::Cosine => cos()?,
        DistanceKind::WmdCosine => {
            let (a, b) = (min_max(&wmd()?), min_max(&cos()?));
            a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect()
        }
    })
}

fn fit_cell(
    prep: &Prepared,
    input: DistanceKind,
    output: DistanceKind,
    method: SurrogateMethod,
    cfg: &ExplainConfig,
) -> Result<Fitted, PipelineError> {
    let used: Vec<usize> = (0..prep.rows.len())
        .filter(|&i| prep.rows[i].usable)
        .collect();
    if used.is_empty() {
        return Err(PipelineError::AllPerturbationsFiltered {
            total: prep.rows.len(),
        });
    }
    let rows_filtered = prep
        .rows
        .iter()
        .filter(|r| r.p_value.is_some() && !r.usable)
        .count();
    let rows_unusable = prep
        .rows
        .iter()
        .filter(|r| r.p_value.is_none() && !r.usable)
        .count();

    let out_docs: Vec<&[String]> = used
        .iter()
        .map(|&i| prep.rows[i].output_tokens.as_slice())
        .collect();
    let deltas = batch_distances(
        &prep.original_tokens,
        &out_docs,
        output,
        &prep.table,
        &cfg.transport,
    )?;
    let in_docs: Vec<&[String]> = used
        .iter()
        .map(|&i| prep.rows[i].perturbed.tokens.as_slice())
        .collect();
    let input_dists = batch_distances(
        &prep.prompt.token_texts(),
        &in_docs,
        input,
        &prep.table,
        &cfg.transport,
    )?;

    let sigma = resolve_sigma(&input_dists, cfg.surrogate.sigma)?;
    let weights: Vec<f64> = input_dists
        .iter()
        .map(|d| kernel_weight(*d, sigma))
        .collect::<Result<_, _>>()?;

    let mut design: Vec<Vec<f64>> = used
        .iter()
        .map(|&i| prep.rows[i].perturbed.mask.features())
        .collect();
    let mut response = deltas.clone();
    let mut w = weights.clone();
    if cfg.surrogate.include_origin {
        design.push(vec![1.0; prep.prompt.perturbable_count()]);
        response.push(0.0);
        w.push(1.0);
    }
    let problem = RegressionProblem::new(design.clone(), response.clone(), w.clone())?;
    let fit = match method {
        SurrogateMethod::Wls => fit_wls(&problem, cfg.surrogate.ridge_lambda)?,
        SurrogateMethod::BayesRidge => fit_bayes_ridge(
            &problem,
            cfg.surrogate.prior_precision,
            cfg.surrogate.noise_precision,
        )?,
    };
    let attributions = attributions(&fit, &prep.prompt)?;

    let mut warnings = prep.warnings.clone();
    let n_features = fit.theta.len();
    let fidelity = if design.len() >= 2 && design.len() >= n_features {
        let predicted: Vec<f64> = design.iter().map(|z| fit.predict(z)).collect();
        Some(fidelity(&response, &predicted, &w, n_features)?)
    } else {
        warnings.push(format!(
            "{} usable rows for {n_features} features; fidelity not reported",
            design.len()
        ));
        None
    };
    if let Some(f) = &fidelity {
        if f.r2_w.is_none() {
            warnings.push("observed output shifts have zero spread; R-squared is undefined".into());
        }
    }

    let mut per_row = vec![None; prep.rows.len()];
    for (k, &i) in used.iter().enumerate() {
        per_row[i] = Some((input_dists[k], weights[k], deltas[k]));
    }
    Ok(Fitted {
        fit,
        attributions,
        fidelity,
        diagnostics: FitDiagnostics {
            sigma,
            rows_total: prep.rows.len(),
            rows_used: used.len(),
            rows_filtered,
            rows_unusable,
            method,
            input_distance: input,
            output_distance: output,
            warnings,
        },
        per_row,
    })
}

fn assemble(prep: Prepared, fitted: Fitted, gateway: &Gateway, cfg: &ExplainConfig) -> Explanation {
    let n = prep.prompt.perturbable_count();
    let token_p_values = (0..n)
        .map(|t| {
            let ps: Vec<f64> = prep
                .rows
                .iter()
                .filter(|r| !r.perturbed.mask.bits[t])
                .filter_map(|r| r.p_value)
                .collect();
            (!ps.is_empty()).then(|| ps.iter().sum::<f64>() / ps.len() as f64)
        })
        .collect();
    let perturbations = prep
        .rows
        .into_iter()
        .zip(&fitted.per_row)
        .map(|(r, used)| PerturbationRecord {
            mask: r.perturbed.mask,
            prompt: r.perturbed.text,
            output: r.output,
            input_distance: used.map(|u| u.0),
            weight: used.map(|u| u.1),
            output_distance: used.map(|u| u.2),
            p_value: r.p_value,
            kept: used.is_some(),
            note: r.note,
        })
        .collect();
    Explanation {
        prompt: prep.prompt,
        attributions: fitted.attributions,
        token_p_values,
        fit: fitted.fit,
        fidelity: fitted.fidelity,
        diagnostics: fitted.diagnostics,
        perturbations,
        original: prep.original,
        generations: prep.generations,
        config: cfg.clone(),
        generator: gateway.spec().clone(),
    }
}

/// Explains an already tokenized prompt (for example one with frozen tokens).
pub fn explain_tokenized(
    prompt: TokenizedPrompt,
    gateway: &Gateway,
    cfg: &ExplainConfig,
) -> Result<Explanation, PipelineError> {
    let prep = prepare(prompt, gateway, cfg)?;
    let fitted = fit_cell(
        &prep,
        cfg.input_distance,
        cfg.output_distance,
        cfg.surrogate.method,
        cfg,
    )?;
    Ok(assemble(prep, fitted, gateway, cfg))
}

pub fn explain(
    prompt: &str,
    gateway: &Gateway,
    cfg: &ExplainConfig,
) -> Result<Explanation, PipelineError> {
    let tokens = tokenize(prompt, &cfg.tokenizer)?;
    explain_tokenized(tokens, gateway, cfg)
}
