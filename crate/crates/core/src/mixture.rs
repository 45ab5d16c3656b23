//! Discrete mixing distributions, observed count vectors and the moments of
//! the mixture they induce.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{domain, Error, Result};
use crate::kernels::KernelMatrix;

/// Weights `g` over support points `s` (overall response probabilities).
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMixture {
    support: Vec<f64>,
    weights: Vec<f64>,
}

impl DiscreteMixture {
    pub fn new(support: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if support.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                context: "mixture weights",
                expected: support.len(),
                found: weights.len(),
            });
        }
        if support.is_empty() {
            return Err(domain!("mixture needs at least one support point"));
        }
        if let Some(s) = support.iter().find(|&&s| !(s > 0.0 && s <= 1.0)) {
            return Err(domain!("support point {s} is outside (0, 1]"));
        }
        if let Some(w) = weights.iter().find(|&&w| !(w >= 0.0)) {
            return Err(domain!("negative or NaN weight {w}"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(domain!("weights sum to {total}, not 1"));
        }
        Ok(Self { support, weights })
    }

    /// Mixture over the columns of `p`, supported on their response probabilities.
    pub fn on_kernel(p: &KernelMatrix, weights: Vec<f64>) -> Result<Self> {
        Self::new(p.response_probs().to_vec(), weights)
    }

    /// Unit mass on column `index` of `p`.
    pub fn point_mass_on(p: &KernelMatrix, index: usize) -> Result<Self> {
        let mut w = alloc::vec![0.0; p.cols()];
        *w.get_mut(index).ok_or(Error::DimensionMismatch {
            context: "point mass index",
            expected: p.cols(),
            found: index,
        })? = 1.0;
        Self::on_kernel(p, w)
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `(support, weight)` pairs with weight strictly above `threshold`.
    pub fn atoms_above(&self, threshold: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.support
            .iter()
            .copied()
            .zip(self.weights.iter().copied())
            .filter(move |&(_, w)| w > threshold)
    }

    fn check_matches(&self, p: &KernelMatrix) -> Result<()> {
        if self.len() != p.cols() {
            return Err(Error::DimensionMismatch {
                context: "mixture support vs kernel columns",
                expected: p.cols(),
                found: self.len(),
            });
        }
        let same = self
            .support
            .iter()
            .zip(p.response_probs())
            .all(|(a, b)| (a - b).abs() <= 1e-12);
        if !same {
            return Err(domain!("mixture support does not match the kernel grid"));
        }
        Ok(())
    }
}

/// Observed frequencies of the effort values `1..=J`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct CountVector {
    counts: Vec<u64>,
}

impl CountVector {
    pub fn new(counts: Vec<u64>) -> Self {
        Self { counts }
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            counts: alloc::vec![0; len],
        }
    }

    /// Tally observations `y ∈ 1..=len`.
    pub fn from_observations<I: IntoIterator<Item = usize>>(len: usize, ys: I) -> Result<Self> {
        let mut c = Self::zeros(len);
        for y in ys {
            c.record(y)?;
        }
        Ok(c)
    }

    pub fn record(&mut self, y: usize) -> Result<()> {
        if y == 0 || y > self.counts.len() {
            return Err(domain!("observation {y} outside 1..={}", self.counts.len()));
        }
        self.counts[y - 1] += 1;
        Ok(())
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Sample size `m`.
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovarianceModel {
    /// Parameters drawn i.i.d. from the mixture: multinomial covariance.
    #[default]
    EmpiricalBayes,
    /// Parameters fixed at the mixture's empirical configuration: sum of
    /// per-item categorical covariances.
    CompoundDecision,
}

/// `f = P g`.
pub fn mixture_pmf(p: &KernelMatrix, g: &DiscreteMixture) -> Result<Vec<f64>> {
    g.check_matches(p)?;
    let f = p.entries() * DVector::from_column_slice(g.weights());
    Ok(f.iter().copied().collect())
}

/// `f̂ = C / m`.
pub fn counts_to_freq(c: &CountVector) -> Result<Vec<f64>> {
    let m = c.total();
    if m == 0 {
        return Err(Error::EmptySample);
    }
    let m = m as f64;
    Ok(c.counts().iter().map(|&k| k as f64 / m).collect())
}

/// `E_G[1/S] = Σ g_i / s_i`.
pub fn expected_inverse(g: &DiscreteMixture) -> f64 {
    g.support().iter().zip(g.weights()).map(|(s, w)| w / s).sum()
}

/// `E_G[h(S)] = Σ g_i h(s_i)`.
pub fn expected_functional<F: Fn(f64) -> f64>(g: &DiscreteMixture, h: F) -> f64 {
    g.support().iter().zip(g.weights()).map(|(&s, w)| w * h(s)).sum()
}

/// Covariance of the first `J - 1` coordinates of the count vector of `m`
/// observations from the mixture.
pub fn covariance_star(p: &KernelMatrix, g: &DiscreteMixture, m: u64, model: CovarianceModel) -> Result<DMatrix<f64>> {
    if m == 0 {
        return Err(Error::EmptySample);
    }
    g.check_matches(p)?;
    let j = p.rows();
    let entries = p.entries();
    let mut full = DMatrix::<f64>::zeros(j, j);
    match model {
        CovarianceModel::EmpiricalBayes => {
            let f = entries * DVector::from_column_slice(g.weights());
            categorical_covariance_into(&mut full, f.as_slice(), 1.0);
        }
        CovarianceModel::CompoundDecision => {
            for (i, &w) in g.weights().iter().enumerate() {
                if w > 0.0 {
                    let col: Vec<f64> = entries.column(i).iter().copied().collect();
                    categorical_covariance_into(&mut full, &col, w);
                }
            }
        }
    }
    full *= m as f64;
    Ok(full.view((0, 0), (j - 1, j - 1)).into_owned())
}

/// `acc += weight * (diag(p) - p pᵀ)`
fn categorical_covariance_into(acc: &mut DMatrix<f64>, p: &[f64], weight: f64) {
    for a in 0..p.len() {
        for b in 0..p.len() {
            let diag = if a == b { p[a] } else { 0.0 };
            acc[(a, b)] += weight * (diag - p[a] * p[b]);
        }
    }
}

/// Inverse of a covariance matrix used as a quadratic weight.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightInverse {
    pub matrix: DMatrix<f64>,
    /// Ridge added to the diagonal before inversion, zero when none was needed.
    pub ridge: f64,
}

/// Inverts `sigma`, adding `1e-8 * trace / dim` to the diagonal when the
/// smallest eigenvalue falls below `1e-10 * trace`.
///
/// Returns `None` for a zero (or non-finite) trace, where no meaningful
/// weight exists.
pub fn regularized_inverse(sigma: &DMatrix<f64>) -> Option<WeightInverse> {
    let dim = sigma.nrows();
    let trace = sigma.trace();
    if dim == 0 || !(trace > 0.0) || !trace.is_finite() {
        return None;
    }
    let eig = sigma.clone().symmetric_eigen();
    let min_eig = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let mut work = sigma.clone();
    let mut ridge = 0.0;
    if min_eig < 1e-10 * trace {
        ridge = 1e-8 * trace / dim as f64;
        for d in 0..dim {
            work[(d, d)] += ridge;
        }
    }
    let chol = work.cholesky()?;
    Some(WeightInverse {
        matrix: chol.inverse(),
        ridge,
    })
}
