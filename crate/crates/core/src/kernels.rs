//! Discrete observation models for response effort.
//!
//! A unit with per-attempt response probability `p̃` that is contacted up to
//! `M₀` times responds with overall probability `p* = 1 - (1 - p̃)^M₀`; the
//! attempt on which it responds, conditional on responding, is a truncated
//! geometric variable on `1..=M₀`. The panel model observes `Y = 1 + W` with
//! `W ~ Binomial(n, p*)`.
//!
//! [`KernelMatrix`] tabulates `P(Y = j | s_i)` over a [`Grid`] of candidate
//! probabilities. Whatever the grid parametrization, each column also carries
//! its overall response probability, which is the quantity every downstream
//! inverse-probability weight divides by.

use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{domain, Error, Result};

/// Strictly increasing support points in `(0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    points: Vec<f64>,
}

impl Grid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidGrid(alloc::format!(
                "need at least 2 points, got {}",
                points.len()
            )));
        }
        for (i, &p) in points.iter().enumerate() {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::InvalidGrid(alloc::format!("point {i} = {p} is outside (0, 1]")));
            }
        }
        if let Some(i) = points.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid(alloc::format!(
                "points not strictly increasing at index {}",
                i + 1
            )));
        }
        Ok(Self { points })
    }

    /// Evenly spaced points `start, start + step, ..., end`.
    ///
    /// `(end - start) / step` must be an integer to within `1e-9`; the last
    /// point is set to `end` exactly so that e.g. `0.1..=1.0` by `0.02`
    /// really ends at `1.0`.
    pub fn arithmetic(start: f64, step: f64, end: f64) -> Result<Self> {
        if !(step > 0.0) || !start.is_finite() || !end.is_finite() {
            return Err(Error::InvalidGrid(alloc::format!(
                "bad range start={start} step={step} end={end}"
            )));
        }
        if start >= end {
            return Err(Error::InvalidGrid(alloc::format!(
                "start {start} must be below end {end}"
            )));
        }
        let intervals = (end - start) / step;
        let rounded = libm::round(intervals);
        if libm::fabs(intervals - rounded) > 1e-9 * rounded.max(1.0) {
            return Err(Error::InvalidGrid(alloc::format!(
                "step {step} does not divide [{start}, {end}] evenly"
            )));
        }
        let n = rounded as usize;
        let mut points: Vec<f64> = (0..n).map(|k| start + k as f64 * step).collect();
        points.push(end);
        Self::new(points)
    }

    /// `p̃ ∈ {0.10, 0.12, ..., 1.00}`, 46 points.
    pub fn per_attempt_default() -> Self {
        Self::arithmetic(0.1, 0.02, 1.0).expect("static grid")
    }

    /// `p* ∈ {0.10, 0.11, ..., 1.00}`, 91 points.
    pub fn panel_default() -> Self {
        Self::arithmetic(0.1, 0.01, 1.0).expect("static grid")
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Which probability the grid points of a truncated geometric kernel denote.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Parametrization {
    /// Per-attempt probability `p̃`.
    #[default]
    PerAttempt,
    /// Overall response probability `p*`.
    Overall,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObservationKernel {
    /// Attempt number of the first response, capped at `cap` attempts.
    TruncatedGeometric {
        cap: usize,
        parametrization: Parametrization,
    },
    /// `Y = 1 + W`, `W ~ Binomial(prior_attempts, p*)`.
    ShiftedBinomial { prior_attempts: usize },
}

impl ObservationKernel {
    pub fn truncated_geometric(cap: usize) -> Self {
        Self::TruncatedGeometric {
            cap,
            parametrization: Parametrization::PerAttempt,
        }
    }

    pub fn shifted_binomial(prior_attempts: usize) -> Self {
        Self::ShiftedBinomial { prior_attempts }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::TruncatedGeometric { cap, .. } if cap < 2 => {
                Err(domain!("attempt cap must be at least 2, got {cap}"))
            }
            Self::ShiftedBinomial { prior_attempts } if prior_attempts < 1 => {
                Err(domain!("prior attempt count must be at least 1"))
            }
            _ => Ok(()),
        }
    }

    /// Number of observable values `J`; observations take values `1..=J`.
    pub fn support_size(&self) -> usize {
        match *self {
            Self::TruncatedGeometric { cap, .. } => cap,
            Self::ShiftedBinomial { prior_attempts } => prior_attempts + 1,
        }
    }

    /// Overall response probability of a unit whose grid value is `param`.
    pub fn response_probability(&self, param: f64) -> Result<f64> {
        match *self {
            Self::TruncatedGeometric {
                cap,
                parametrization: Parametrization::PerAttempt,
            } => response_prob(param, cap),
            Self::TruncatedGeometric {
                parametrization: Parametrization::Overall,
                ..
            }
            | Self::ShiftedBinomial { .. } => {
                check_unit_open(param, "response probability")?;
                Ok(param)
            }
        }
    }

    /// Distribution of `Y` over `1..=J` at grid value `param`.
    pub fn pmf(&self, param: f64) -> Result<Vec<f64>> {
        match *self {
            Self::TruncatedGeometric {
                cap,
                parametrization: Parametrization::PerAttempt,
            } => truncated_geometric_pmf(param, cap),
            Self::TruncatedGeometric {
                cap,
                parametrization: Parametrization::Overall,
            } => truncated_geometric_pmf(per_attempt_prob(param, cap)?, cap),
            Self::ShiftedBinomial { prior_attempts } => shifted_binomial_pmf(param, prior_attempts),
        }
    }
}

fn check_unit_open(p: f64, what: &str) -> Result<()> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(domain!("{what} must lie in (0, 1], got {p}"))
    }
}

/// `1 - (1 - p̃)^cap`, evaluated as `-expm1(cap * log1p(-p̃))`.
pub fn response_prob(p_tilde: f64, cap: usize) -> Result<f64> {
    check_unit_open(p_tilde, "per-attempt probability")?;
    if cap < 1 {
        return Err(domain!("attempt cap must be at least 1"));
    }
    if p_tilde == 1.0 {
        return Ok(1.0);
    }
    Ok(-libm::expm1(cap as f64 * libm::log1p(-p_tilde)))
}

/// Inverse of [`response_prob`]: `p̃ = 1 - (1 - p*)^(1/cap)`.
pub fn per_attempt_prob(p_star: f64, cap: usize) -> Result<f64> {
    check_unit_open(p_star, "response probability")?;
    if cap < 1 {
        return Err(domain!("attempt cap must be at least 1"));
    }
    if p_star == 1.0 {
        return Ok(1.0);
    }
    Ok(-libm::expm1(libm::log1p(-p_star) / cap as f64))
}

/// `P(Y = j) = (1 - p̃)^(j-1) p̃ / (1 - (1 - p̃)^cap)` for `j = 1..=cap`.
pub fn truncated_geometric_pmf(p_tilde: f64, cap: usize) -> Result<Vec<f64>> {
    let norm = response_prob(p_tilde, cap)?;
    let mut pmf = alloc::vec![0.0; cap];
    if p_tilde == 1.0 {
        pmf[0] = 1.0;
        return Ok(pmf);
    }
    let q = 1.0 - p_tilde;
    let mut term = p_tilde / norm;
    for v in pmf.iter_mut() {
        *v = term;
        term *= q;
    }
    Ok(pmf)
}

/// `P(Y = j) = C(n, j-1) p*^(j-1) (1 - p*)^(n-j+1)` for `j = 1..=n+1`.
pub fn shifted_binomial_pmf(p_star: f64, n: usize) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&p_star) {
        return Err(domain!("response probability must lie in [0, 1], got {p_star}"));
    }
    if n < 1 {
        return Err(domain!("prior attempt count must be at least 1"));
    }
    let q = 1.0 - p_star;
    let mut binom = 1.0_f64;
    let mut pmf = Vec::with_capacity(n + 1);
    for k in 0..=n {
        pmf.push(binom * libm::pow(p_star, k as f64) * libm::pow(q, (n - k) as f64));
        binom = binom * (n - k) as f64 / (k + 1) as f64;
    }
    Ok(pmf)
}

/// `J × κ` matrix with entry `(j, i) = P(Y = j + 1 | s_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    entries: DMatrix<f64>,
    params: Vec<f64>,
    response_probs: Vec<f64>,
    kernel: Option<ObservationKernel>,
}

impl KernelMatrix {
    /// Kernel of `kernel` evaluated at each of `points`, which need not form
    /// a valid [`Grid`] (e.g. a single point).
    pub fn at_points(points: &[f64], kernel: ObservationKernel) -> Result<Self> {
        kernel.validate()?;
        if points.is_empty() {
            return Err(Error::InvalidGrid("no points".into()));
        }
        let mut entries = DMatrix::zeros(kernel.support_size(), points.len());
        let mut response_probs = Vec::with_capacity(points.len());
        for (i, &s) in points.iter().enumerate() {
            entries.column_mut(i).copy_from_slice(&kernel.pmf(s)?);
            response_probs.push(kernel.response_probability(s)?);
        }
        Ok(Self {
            entries,
            params: points.to_vec(),
            response_probs,
            kernel: Some(kernel),
        })
    }

    /// Arbitrary column-stochastic kernel; column `i` has overall response
    /// probability `response_probs[i]`.
    pub fn from_columns(entries: DMatrix<f64>, response_probs: Vec<f64>) -> Result<Self> {
        if entries.ncols() != response_probs.len() {
            return Err(Error::DimensionMismatch {
                context: "kernel columns vs response probabilities",
                expected: entries.ncols(),
                found: response_probs.len(),
            });
        }
        if entries.nrows() < 2 || entries.ncols() == 0 {
            return Err(domain!("kernel needs at least 2 rows and 1 column"));
        }
        for &s in &response_probs {
            check_unit_open(s, "response probability")?;
        }
        for (i, col) in entries.column_iter().enumerate() {
            if col.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(domain!("column {i} has entries outside [0, 1]"));
            }
            let sum: f64 = col.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(domain!("column {i} sums to {sum}"));
            }
        }
        Ok(Self {
            entries,
            params: response_probs.clone(),
            response_probs,
            kernel: None,
        })
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// Construction parameter of every column (the grid points).
    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// The parametric family the columns were evaluated from, if any.
    pub fn kernel(&self) -> Option<ObservationKernel> {
        self.kernel
    }

    /// Overall response probability `s_i` of every column.
    pub fn response_probs(&self) -> &[f64] {
        &self.response_probs
    }

    /// Number of observable values `J`.
    pub fn rows(&self) -> usize {
        self.entries.nrows()
    }

    /// Number of grid points `κ`.
    pub fn cols(&self) -> usize {
        self.entries.ncols()
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        self.entries.column(i).iter().copied().collect()
    }
}

pub fn build_kernel_matrix(grid: &Grid, kernel: ObservationKernel) -> Result<KernelMatrix> {
    KernelMatrix::at_points(grid.points(), kernel)
}
