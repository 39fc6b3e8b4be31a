//! Bootstrap p-values for output shifts.
//!
//! The observed distance between two embedding clouds is compared against
//! distances between clouds resampled from their pooled union. The p-value is
//! the fraction of resampled distances strictly above the observed one.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::transport::{emd_with_cost, euclidean, TransportConfig, TransportError};

pub const MIN_REPORTED_ITERATIONS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignificanceError {
    #[error("both embedding clouds must be non-empty")]
    EmptyInput,
    #[error("max_itr = {0} is below the minimum of {MIN_REPORTED_ITERATIONS}")]
    TooFewIterations(usize),
    #[error("alpha must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleScheme {
    /// Draw both resamples independently from the pool, each without
    /// replacement; the two may overlap.
    Independent,
    /// Shuffle the pool once per iteration and split it in two.
    Partition,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapConfig {
    pub enabled: bool,
    pub max_itr: usize,
    pub seed: u64,
    pub alpha: f64,
    pub scheme: ResampleScheme,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            max_itr: 1000,
            seed: 0,
            alpha: 0.05,
            scheme: ResampleScheme::Independent,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<(), SignificanceError> {
        if self.max_itr < MIN_REPORTED_ITERATIONS {
            return Err(SignificanceError::TooFewIterations(self.max_itr));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(SignificanceError::InvalidAlpha(self.alpha));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignificanceResult {
    pub observed: f64,
    pub p_value: f64,
    pub bigger: usize,
    pub kept: bool,
}

/// Runs the pooled-resample test between clouds `x` and `y`.
///
/// Iteration `i` draws from its own ChaCha stream, so the count does not
/// depend on how the iterations are scheduled across threads. When the
/// observed distance is exactly zero no resample can fall below it, and the
/// count is taken as `max_itr` (p = 1).
pub fn bootstrap_pvalue(
    x: &[Vec<f64>],
    y: &[Vec<f64>],
    cfg: &BootstrapConfig,
    transport: &TransportConfig,
) -> Result<SignificanceResult, SignificanceError> {
    if x.is_empty() || y.is_empty() {
        return Err(SignificanceError::EmptyInput);
    }
    cfg.validate()?;
    transport.validate()?;
    let pool = Pool::new(x.iter().chain(y), transport.p)?;
    let (lx, ly) = (x.len(), y.len());
    let all: Vec<usize> = (0..pool.ids.len()).collect();
    let observed = pool.distance(&all[..lx], &all[lx..])?;

    let bigger = if observed == 0.0 {
        cfg.max_itr
    } else {
        (0..cfg.max_itr)
            .into_par_iter()
            .map(|i| -> Result<usize, TransportError> {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(i as u64);
                let n = pool.ids.len();
                let (e, f) = match cfg.scheme {
                    ResampleScheme::Independent => (
                        index::sample(&mut rng, n, lx).into_vec(),
                        index::sample(&mut rng, n, ly).into_vec(),
                    ),
                    ResampleScheme::Partition => {
                        let order = index::sample(&mut rng, n, n).into_vec();
                        (order[..lx].to_vec(), order[lx..].to_vec())
                    }
                };
                Ok(usize::from(pool.distance(&e, &f)? > observed))
            })
            .try_reduce(|| 0, |a, b| Ok(a + b))?
    };

    let p_value = bigger as f64 / cfg.max_itr as f64;
    Ok(SignificanceResult {
        observed,
        p_value,
        bigger,
        kept: p_value <= cfg.alpha,
    })
}

/// Pooled points with exact duplicates merged and all pairwise ground costs
/// computed once.
struct Pool {
    /// Distinct-point id of every pooled point.
    ids: Vec<usize>,
    distinct: usize,
    cost: Vec<f64>,
    p: u32,
}

impl Pool {
    fn new<'a>(points: impl Iterator<Item = &'a Vec<f64>>, p: u32) -> Result<Self, TransportError> {
        let mut distinct: Vec<&Vec<f64>> = Vec::new();
        let mut ids = Vec::new();
        for point in points {
            if let Some(first) = distinct.first() {
                if first.len() != point.len() {
                    return Err(TransportError::DimensionMismatch(first.len(), point.len()));
                }
            }
            match distinct.iter().position(|d| *d == point) {
                Some(k) => ids.push(k),
                None => {
                    ids.push(distinct.len());
                    distinct.push(point);
                }
            }
        }
        let k = distinct.len();
        let mut cost = vec![0.0; k * k];
        for i in 0..k {
            for j in (i + 1)..k {
                let c = euclidean(distinct[i], distinct[j]).powi(p as i32);
                cost[i * k + j] = c;
                cost[j * k + i] = c;
            }
        }
        Ok(Self {
            ids,
            distinct: k,
            cost,
            p,
        })
    }

    /// Distinct ids present in `members` (ascending) with their masses.
    fn masses(&self, members: &[usize]) -> (Vec<usize>, Vec<f64>) {
        let mut counts = vec![0usize; self.distinct];
        for &m in members {
            counts[self.ids[m]] += 1;
        }
        let total = members.len() as f64;
        counts
            .iter()
            .enumerate()
            .filter(|(_, c)| **c > 0)
            .map(|(id, c)| (id, *c as f64 / total))
            .unzip()
    }

    fn distance(&self, a: &[usize], b: &[usize]) -> Result<f64, TransportError> {
        let (sa, wa) = self.masses(a);
        let (sb, wb) = self.masses(b);
        if sa == sb && wa == wb {
            return Ok(0.0);
        }
        let mut cost = Vec::with_capacity(sa.len() * sb.len());
        for &i in &sa {
            for &j in &sb {
                cost.push(self.cost[i * self.distinct + j]);
            }
        }
        Ok(emd_with_cost(&wa, &wb, &cost, self.p)?.value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn cloud(rng: &mut ChaCha8Rng, n: usize, center: f64, spread: f64) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                (0..3)
                    .map(|_| center + rng.gen_range(-spread..spread))
                    .collect()
            })
            .collect()
    }

    #[test]
    fn identical_clouds_are_not_significant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = cloud(&mut rng, 8, 0.0, 1.0);
        let r = bootstrap_pvalue(
            &x,
            &x,
            &BootstrapConfig::default(),
            &TransportConfig::default(),
        )
        .unwrap();
        assert_eq!(r.observed, 0.0);
        assert!(r.p_value >= 0.95);
        assert!(!r.kept);
    }

    #[test]
    fn degenerate_single_point_clouds_give_p_one() {
        let x = vec![vec![1.0, 2.0]; 4];
        let r = bootstrap_pvalue(
            &x,
            &x[..2],
            &BootstrapConfig::default(),
            &TransportConfig::default(),
        )
        .unwrap();
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn separated_clouds_are_significant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = cloud(&mut rng, 10, 0.0, 1.0);
        let y = cloud(&mut rng, 10, 100.0, 1.0);
        let cfg = BootstrapConfig {
            max_itr: 2000,
            ..Default::default()
        };
        let r = bootstrap_pvalue(&x, &y, &cfg, &TransportConfig::default()).unwrap();
        assert!(r.p_value <= 0.01);
        assert!(r.kept);
    }

    #[test]
    fn seeded_runs_are_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = cloud(&mut rng, 6, 0.0, 1.0);
        let y = cloud(&mut rng, 5, 0.7, 1.0);
        let cfg = BootstrapConfig {
            seed: 42,
            ..Default::default()
        };
        let a = bootstrap_pvalue(&x, &y, &cfg, &TransportConfig::default()).unwrap();
        let b = bootstrap_pvalue(&x, &y, &cfg, &TransportConfig::default()).unwrap();
        assert_eq!(a.p_value.to_bits(), b.p_value.to_bits());
        assert_eq!(a.p_value, a.bigger as f64 / cfg.max_itr as f64);
    }

    #[test]
    fn partition_scheme_runs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = cloud(&mut rng, 6, 0.0, 1.0);
        let y = cloud(&mut rng, 4, 50.0, 1.0);
        let cfg = BootstrapConfig {
            scheme: ResampleScheme::Partition,
            ..Default::default()
        };
        let r = bootstrap_pvalue(&x, &y, &cfg, &TransportConfig::default()).unwrap();
        assert!(r.p_value <= 0.01);
    }

    #[test]
    fn invalid_inputs() {
        let x = vec![vec![0.0]];
        let t = TransportConfig::default();
        assert_eq!(
            bootstrap_pvalue(&x, &[], &BootstrapConfig::default(), &t),
            Err(SignificanceError::EmptyInput)
        );
        let cfg = BootstrapConfig {
            max_itr: 10,
            ..Default::default()
        };
        assert_eq!(
            bootstrap_pvalue(&x, &x, &cfg, &t),
            Err(SignificanceError::TooFewIterations(10))
        );
        let cfg = BootstrapConfig {
            alpha: 1.5,
            ..Default::default()
        };
        assert_eq!(
            bootstrap_pvalue(&x, &x, &cfg, &t),
            Err(SignificanceError::InvalidAlpha(1.5))
        );
    }

    #[test]
    fn translating_farther_never_raises_p() {
        // one-dimensional family: y = x + shift
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<Vec<f64>> = (0..8).map(|_| vec![rng.gen_range(0.0..1.0)]).collect();
        let cfg = BootstrapConfig {
            max_itr: 500,
            seed: 9,
            ..Default::default()
        };
        let mut last = f64::INFINITY;
        for shift in [0.05, 0.1, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0] {
            let y: Vec<Vec<f64>> = x.iter().map(|v| vec![v[0] + shift]).collect();
            let p = bootstrap_pvalue(&x, &y, &cfg, &TransportConfig::default())
                .unwrap()
                .p_value;
            assert!(p <= last, "shift {shift}: {p} > {last}");
            last = p;
        }
    }
}
