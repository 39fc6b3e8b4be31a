//! Kernel weighting and the local linear surrogate.

use std::fmt;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::text::TokenizedPrompt;

pub const DEFAULT_RIDGE_LAMBDA: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SurrogateError {
    #[error("kernel width must be positive, got {0}")]
    NonpositiveSigma(f64),
    #[error("all input distances are zero; adaptive kernel width is undefined")]
    AllZeroDistances,
    #[error("weighted Gram matrix is singular")]
    SingularSystem,
    #[error("precisions must be positive (prior {prior}, noise {noise})")]
    NonpositivePrecision { prior: f64, noise: f64 },
    #[error("expected {expected} values, got {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("regression problem has no rows")]
    EmptyProblem,
    #[error("invalid regression problem: {0}")]
    InvalidProblem(String),
}

/// Gaussian kernel `exp(-(delta / sigma)^2)`.
///
/// Far points are floored at the smallest positive double so a weight never
/// underflows to zero.
pub fn kernel_weight(delta: f64, sigma: f64) -> Result<f64, SurrogateError> {
    if !(sigma > 0.0) {
        return Err(SurrogateError::NonpositiveSigma(sigma));
    }
    let r = delta / sigma;
    Ok((-r * r).exp().max(f64::MIN_POSITIVE))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sigma {
    Fixed(f64),
    AdaptiveMedian,
}

impl Default for Sigma {
    fn default() -> Self {
        Sigma::AdaptiveMedian
    }
}

impl Serialize for Sigma {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Sigma::Fixed(v) => s.serialize_f64(*v),
            Sigma::AdaptiveMedian => s.serialize_str("adaptive-median"),
        }
    }
}

impl<'de> Deserialize<'de> for Sigma {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct SigmaVisitor;
        impl Visitor<'_> for SigmaVisitor {
            type Value = Sigma;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a positive number or \"adaptive-median\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Sigma, E> {
                Ok(Sigma::Fixed(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Sigma, E> {
                Ok(Sigma::Fixed(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Sigma, E> {
                Ok(Sigma::Fixed(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<Sigma, E> {
                match v {
                    "adaptive-median" | "adaptive_median" | "adaptive" => Ok(Sigma::AdaptiveMedian),
                    other => other
                        .parse::<f64>()
                        .map(Sigma::Fixed)
                        .map_err(|_| E::invalid_value(de::Unexpected::Str(other), &self)),
                }
            }
        }
        d.deserialize_any(SigmaVisitor)
    }
}

pub fn resolve_sigma(deltas: &[f64], sigma: Sigma) -> Result<f64, SurrogateError> {
    match sigma {
        Sigma::Fixed(v) if v > 0.0 => Ok(v),
        Sigma::Fixed(v) => Err(SurrogateError::NonpositiveSigma(v)),
        Sigma::AdaptiveMedian => {
            let mut positive: Vec<f64> = deltas.iter().copied().filter(|d| *d > 0.0).collect();
            if positive.is_empty() {
                return Err(SurrogateError::AllZeroDistances);
            }
            positive.sort_by(f64::total_cmp);
            let mid = positive.len() / 2;
            Ok(if positive.len() % 2 == 1 {
                positive[mid]
            } else {
                0.5 * (positive[mid - 1] + positive[mid])
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateMethod {
    #[default]
    Wls,
    BayesRidge,
}

impl fmt::Display for SurrogateMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SurrogateMethod::Wls => "wls",
            SurrogateMethod::BayesRidge => "bayes_ridge",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateConfig {
    pub method: SurrogateMethod,
    pub sigma: Sigma,
    pub ridge_lambda: f64,
    pub include_origin: bool,
    pub prior_precision: f64,
    pub noise_precision: f64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            method: SurrogateMethod::Wls,
            sigma: Sigma::AdaptiveMedian,
            ridge_lambda: DEFAULT_RIDGE_LAMBDA,
            include_origin: false,
            prior_precision: 1e-2,
            noise_precision: 1.0,
        }
    }
}

/// Rows are perturbation masks (1 = token kept), one response and one kernel
/// weight per row.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionProblem {
    design: Vec<Vec<f64>>,
    response: Vec<f64>,
    weights: Vec<f64>,
    n_features: usize,
}

impl RegressionProblem {
    pub fn new(
        design: Vec<Vec<f64>>,
        response: Vec<f64>,
        weights: Vec<f64>,
    ) -> Result<Self, SurrogateError> {
        let rows = design.len();
        if rows == 0 {
            return Err(SurrogateError::EmptyProblem);
        }
        let n_features = design[0].len();
        if let Some(bad) = design.iter().find(|r| r.len() != n_features) {
            return Err(SurrogateError::LengthMismatch {
                expected: n_features,
                found: bad.len(),
            });
        }
        for v in [&response, &weights] {
            if v.len() != rows {
                return Err(SurrogateError::LengthMismatch {
                    expected: rows,
                    found: v.len(),
                });
            }
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && **w <= 1.0)) {
            return Err(SurrogateError::InvalidProblem(format!(
                "weight {w} outside (0, 1]"
            )));
        }
        if response.iter().any(|d| !d.is_finite()) {
            return Err(SurrogateError::InvalidProblem("non-finite response".into()));
        }
        if rows < n_features + 1 {
            warn!("{rows} perturbations for {n_features} features; the fit is underdetermined without ridge");
        }
        Ok(Self {
            design,
            response,
            weights,
            n_features,
        })
    }

    pub fn rows(&self) -> usize {
        self.response.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn design(&self) -> &[Vec<f64>] {
        &self.design
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `(X^T W X, X^T W y)` with a leading intercept column in `X`.
    fn weighted_normal_equations(&self) -> (DMatrix<f64>, DVector<f64>) {
        let p = self.n_features + 1;
        let x = DMatrix::from_fn(self.rows(), p, |i, j| {
            if j == 0 {
                1.0
            } else {
                self.design[i][j - 1]
            }
        });
        let w = DVector::from_column_slice(&self.weights);
        let y = DVector::from_column_slice(&self.response);
        let mut xw = x.clone();
        for (i, mut row) in xw.row_iter_mut().enumerate() {
            row *= w[i];
        }
        (xw.transpose() * &x, xw.transpose() * y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateFit {
    pub theta0: f64,
    pub theta: Vec<f64>,
    pub method: SurrogateMethod,
    pub ridge_lambda: f64,
    pub posterior_var: Option<Vec<f64>>,
}

impl SurrogateFit {
    pub fn predict(&self, features: &[f64]) -> f64 {
        self.theta0
            + self
                .theta
                .iter()
                .zip(features)
                .map(|(t, z)| t * z)
                .sum::<f64>()
    }
}

fn add_coefficient_penalty(gram: &mut DMatrix<f64>, lambda: f64) {
    for i in 1..gram.nrows() {
        gram[(i, i)] += lambda;
    }
}

/// Weighted least squares with a ridge penalty on the coefficients only.
pub fn fit_wls(
    problem: &RegressionProblem,
    ridge_lambda: f64,
) -> Result<SurrogateFit, SurrogateError> {
    if !(ridge_lambda >= 0.0) {
        return Err(SurrogateError::InvalidProblem(format!(
            "ridge lambda {ridge_lambda}"
        )));
    }
    let (mut gram, rhs) = problem.weighted_normal_equations();
    add_coefficient_penalty(&mut gram, ridge_lambda);

    let eig = gram.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |a, b| a.min(*b));
    if !(min > max * 1e-13) {
        return Err(SurrogateError::SingularSystem);
    }
    let beta = gram
        .cholesky()
        .ok_or(SurrogateError::SingularSystem)?
        .solve(&rhs);
    Ok(SurrogateFit {
        theta0: beta[0],
        theta: beta.iter().skip(1).copied().collect(),
        method: SurrogateMethod::Wls,
        ridge_lambda,
        posterior_var: None,
    })
}

/// Posterior of a linear model with a zero-mean Gaussian prior of precision
/// `prior_precision` on the coefficients (flat on the intercept) and noise
/// precision `noise_precision` on kernel-weighted residuals.
pub fn fit_bayes_ridge(
    problem: &RegressionProblem,
    prior_precision: f64,
    noise_precision: f64,
) -> Result<SurrogateFit, SurrogateError> {
    if !(prior_precision > 0.0 && noise_precision > 0.0) {
        return Err(SurrogateError::NonpositivePrecision {
            prior: prior_precision,
            noise: noise_precision,
        });
    }
    let (gram, rhs) = problem.weighted_normal_equations();
    let mut precision = gram * noise_precision;
    add_coefficient_penalty(&mut precision, prior_precision);
    let chol = precision.cholesky().ok_or(SurrogateError::SingularSystem)?;
    let mean = chol.solve(&(rhs * noise_precision));
    let covariance = chol.inverse();
    Ok(SurrogateFit {
        theta0: mean[0],
        theta: mean.iter().skip(1).copied().collect(),
        method: SurrogateMethod::BayesRidge,
        ridge_lambda: prior_precision / noise_precision,
        posterior_var: Some(
            (1..covariance.nrows())
                .map(|i| covariance[(i, i)])
                .collect(),
        ),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    Positive,
    Negative,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenAttribution {
    /// Position of the token in the prompt (all tokens, frozen included).
    pub token_index: usize,
    pub text: String,
    pub score: f64,
    pub intensity: f64,
    pub sign: Sign,
}

pub fn attributions(
    fit: &SurrogateFit,
    prompt: &TokenizedPrompt,
) -> Result<Vec<TokenAttribution>, SurrogateError> {
    let n = prompt.perturbable_count();
    if fit.theta.len() != n {
        return Err(SurrogateError::LengthMismatch {
            expected: n,
            found: fit.theta.len(),
        });
    }
    let max = fit.theta.iter().fold(0.0f64, |a, t| a.max(t.abs()));
    Ok(prompt
        .perturbable_tokens()
        .zip(&fit.theta)
        .map(|(token, &score)| TokenAttribution {
            token_index: token.index,
            text: token.surface.clone(),
            score,
            intensity: if max > 0.0 { score.abs() / max } else { 0.0 },
            sign: if score > 0.0 {
                Sign::Positive
            } else if score < 0.0 {
                Sign::Negative
            } else {
                Sign::Zero
            },
        })
        .collect())
}

/// Positions into `scores` ordered by descending magnitude, ties by position.
pub fn rank_by_magnitude(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].abs().total_cmp(&scores[a].abs()).then(a.cmp(&b)));
    order
}
