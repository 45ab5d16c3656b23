//! Horvitz-Thompson style estimators of totals and proportions.
//!
//! The list of `I` units is drawn from a population of `N` with known
//! inclusion probability `I / N`; of the listed units only the responders are
//! observed. Inflation happens twice: each responder stands for `1 / s` listed
//! units, and each listed unit for `N / I` population units.

use alloc::vec::Vec;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::deconvolve::{fit, FitConfig};
use crate::error::{domain, Error, Result};
use crate::kernels::KernelMatrix;
use crate::mixture::{expected_inverse, CountVector, DiscreteMixture};

/// Population size `N` and list size `I`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PopulationFrame {
    population: f64,
    list_size: f64,
}

impl PopulationFrame {
    pub fn new(population: f64, list_size: f64) -> Result<Self> {
        if !(list_size >= 1.0 && population >= list_size && population.is_finite()) {
            return Err(domain!("need 1 <= I <= N, got I = {list_size}, N = {population}"));
        }
        Ok(Self { population, list_size })
    }

    /// A frame where the list is the whole population.
    pub fn census(list_size: f64) -> Result<Self> {
        Self::new(list_size, list_size)
    }

    pub fn population(&self) -> f64 {
        self.population
    }

    pub fn list_size(&self) -> f64 {
        self.list_size
    }

    /// `N / I`.
    pub fn inflation(&self) -> f64 {
        self.population / self.list_size
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    Naive,
    ModifiedHorvitzThompson,
    Oracle,
}

impl EstimatorKind {
    pub fn short_name(&self) -> &'static str {
        match self {
            Self::Naive => "NV",
            Self::ModifiedHorvitzThompson => "MHT",
            Self::Oracle => "OR",
        }
    }
}

/// Point estimates of one estimator over the outcome groups.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub kind: EstimatorKind,
    pub values: Vec<f64>,
}

/// `(N / I) Σ 1 / p*_i` over the responders, with their true response probabilities.
pub fn ht_oracle_total(p_stars: &[f64], frame: &PopulationFrame) -> Result<f64> {
    let mut theta = 0.0;
    for &p in p_stars {
        if !(p > 0.0 && p <= 1.0) {
            return Err(domain!("response probability {p} is outside (0, 1]"));
        }
        theta += 1.0 / p;
    }
    Ok(frame.inflation() * theta)
}

/// `(N / I) m E_Ĝ[1/S]`.
pub fn mht_total(g_hat: &DiscreteMixture, responders: u64, frame: &PopulationFrame) -> f64 {
    frame.inflation() * responders as f64 * expected_inverse(g_hat)
}

/// `m_l E_Ĝl[1/S] / Σ_l m_l E_Ĝl[1/S]`.
///
/// Groups with no responders contribute zero and may omit their mixture.
pub fn mht_proportions(fits: &[(u64, Option<&DiscreteMixture>)]) -> Result<Vec<f64>> {
    let inflated: Vec<f64> = fits
        .iter()
        .map(|&(m, g)| match (m, g) {
            (0, _) => Ok(0.0),
            (m, Some(g)) => Ok(m as f64 * expected_inverse(g)),
            (_, None) => Err(Error::Invalid("nonempty group without a fitted mixture".into())),
        })
        .collect::<Result<_>>()?;
    normalize(&inflated)
}

/// `m_l / Σ m_l`.
pub fn naive_proportions(responders: &[u64]) -> Result<Vec<f64>> {
    let as_f: Vec<f64> = responders.iter().map(|&m| m as f64).collect();
    normalize(&as_f)
}

fn normalize(values: &[f64]) -> Result<Vec<f64>> {
    let total: f64 = values.iter().sum();
    if !(total > 0.0) {
        return Err(Error::EmptySample);
    }
    Ok(values.iter().map(|v| v / total).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    /// Mean squared deviation of the refitted totals from `center`.
    pub mse: f64,
    /// `(N / I) m E_Ĝ[1/S]`, the total at the bootstrap truth.
    pub center: f64,
    pub replications: usize,
    pub failures: usize,
}

/// Replication `k` of the parametric bootstrap: draw `m` response
/// probabilities from `g_hat`, an effort value for each from its kernel
/// column, refit and return the estimated total.
///
/// Replication `k` uses ChaCha8 seeded with `seed` on stream `k`, so results
/// do not depend on which replications run or in what order.
pub fn bootstrap_replicate(
    g_hat: &DiscreteMixture,
    responders: u64,
    frame: &PopulationFrame,
    p: &KernelMatrix,
    fit_config: &FitConfig,
    seed: u64,
    k: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    let support = WeightedIndex::new(g_hat.weights()).map_err(|e| domain!("mixture weights: {e}"))?;
    let columns: Vec<Option<WeightedIndex<f64>>> = (0..p.cols())
        .map(|i| {
            if g_hat.weights()[i] > 0.0 {
                WeightedIndex::new(p.entries().column(i).iter().copied()).ok()
            } else {
                None
            }
        })
        .collect();
    let mut counts = CountVector::zeros(p.rows());
    for _ in 0..responders {
        let i = support.sample(&mut rng);
        let column = columns[i]
            .as_ref()
            .ok_or_else(|| domain!("kernel column {i} is not a distribution"))?;
        counts.record(column.sample(&mut rng) + 1)?;
    }
    let refit = fit(&counts, p, fit_config)?;
    Ok(mht_total(&refit.mixture, responders, frame))
}

/// Combine replicate totals in index order. Failed replications are dropped
/// and counted; more than 10% failures is an error.
pub fn summarize_bootstrap(center: f64, replicates: &[Result<f64>]) -> Result<BootstrapResult> {
    let failures = replicates.iter().filter(|r| r.is_err()).count();
    let total = replicates.len();
    if total == 0 || failures * 10 > total || failures == total {
        return Err(Error::TooManyFailures {
            failed: failures,
            total,
        });
    }
    let mut sum = 0.0;
    for t in replicates.iter().flatten() {
        sum += (t - center) * (t - center);
    }
    Ok(BootstrapResult {
        mse: sum / (total - failures) as f64,
        center,
        replications: total,
        failures,
    })
}

/// Parametric-bootstrap estimate of `E(T̂ - (N/I) θ)²`, treating `g_hat` as
/// the truth.
#[allow(clippy::too_many_arguments)]
pub fn bootstrap_mse_term(
    g_hat: &DiscreteMixture,
    responders: u64,
    frame: &PopulationFrame,
    p: &KernelMatrix,
    replications: usize,
    seed: u64,
    fit_config: &FitConfig,
) -> Result<BootstrapResult> {
    if replications == 0 {
        return Err(Error::Invalid("bootstrap needs at least one replication".into()));
    }
    if responders == 0 {
        return Err(Error::EmptySample);
    }
    let center = mht_total(g_hat, responders, frame);
    let reps: Vec<Result<f64>> = (0..replications as u64)
        .map(|k| bootstrap_replicate(g_hat, responders, frame, p, fit_config, seed, k))
        .collect();
    summarize_bootstrap(center, &reps)
}
