//! Estimating the mixing distribution of response probabilities from effort
//! counts.
//!
//! All fits are functions of the count vector only. The moments fit matches
//! the observed relative frequencies to `P g` in unweighted least squares over
//! the simplex. The asymptotic-likelihood fit drops the last coordinate and
//! weights the residual by the inverse covariance of the remaining counts,
//! re-estimating that covariance from the previous fit on every pass. The
//! joint fit estimates one mixture per outcome group in a single program, tied
//! together by the known list size and optional calibration totals; both are
//! linear in the weights because the grid values `s_i` are constants.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::kernels::KernelMatrix;
use crate::mixture::{
    counts_to_freq, covariance_star, regularized_inverse, CountVector, CovarianceModel, DiscreteMixture,
};
use crate::qp::{self, LinearEquality, LsBlock};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FitMethod {
    #[default]
    Moments,
    Mle,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub method: FitMethod,
    /// Covariance used to weight the residual when `method` is `Mle`.
    pub covariance_model: CovarianceModel,
    /// Weighted re-solves after the moments initializer.
    pub mle_iterations: usize,
    /// Weights at or below this are left out of reports (never out of the fit).
    pub report_threshold: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            method: FitMethod::Moments,
            covariance_model: CovarianceModel::EmpiricalBayes,
            mle_iterations: 2,
            report_threshold: 1e-6,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.method == FitMethod::Mle && self.mle_iterations < 1 {
            return Err(Error::Invalid("mle_iterations must be at least 1".to_string()));
        }
        if !(self.report_threshold >= 0.0) {
            return Err(Error::Invalid("report_threshold must be non-negative".to_string()));
        }
        Ok(())
    }
}

/// Diagnostics of one solve within a fit.
#[derive(Debug, Clone, PartialEq)]
pub struct PassInfo {
    /// Achieved objective of this pass.
    pub objective: f64,
    /// Ridge added to each group's covariance before inversion (weighted passes).
    pub ridge: Vec<f64>,
    /// Groups whose covariance had zero trace, fitted with identity weight instead.
    pub identity_fallback: Vec<bool>,
    pub qp_iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fit {
    pub mixture: DiscreteMixture,
    /// Objective of the final pass.
    pub objective: f64,
    /// Pass 0 is the moments fit; later passes are weighted.
    pub passes: Vec<PassInfo>,
}

pub fn fit_moments(counts: &CountVector, p: &KernelMatrix) -> Result<Fit> {
    fit(counts, p, &FitConfig::default())
}

/// Moments fit followed by `config.mle_iterations` covariance-weighted passes.
pub fn fit_mle(counts: &CountVector, p: &KernelMatrix, config: &FitConfig) -> Result<Fit> {
    let config = FitConfig {
        method: FitMethod::Mle,
        ..*config
    };
    fit(counts, p, &config)
}

/// Fit a single group according to `config.method`.
pub fn fit(counts: &CountVector, p: &KernelMatrix, config: &FitConfig) -> Result<Fit> {
    let group = GroupData::new("0", counts.clone());
    let mut joint = fit_joint(&[group], p, None, &[], config)?;
    let g = joint.groups.pop().expect("one group");
    Ok(Fit {
        mixture: g.mixture.ok_or(Error::EmptySample)?,
        objective: joint.objective,
        passes: joint.passes,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupData {
    pub label: String,
    /// Effort counts the group's mixture is fitted to.
    pub counts: CountVector,
    /// Responders entering the inflated total, when they are not the fitted
    /// sample (e.g. the fit pools historical records).
    pub inflated_responders: Option<u64>,
}

impl GroupData {
    pub fn new(label: impl Into<String>, counts: CountVector) -> Self {
        Self {
            label: label.into(),
            counts,
            inflated_responders: None,
        }
    }

    pub fn with_inflated_responders(mut self, m: u64) -> Self {
        self.inflated_responders = Some(m);
        self
    }

    /// `m_l` of the inflated total.
    pub fn responders(&self) -> u64 {
        self.inflated_responders.unwrap_or_else(|| self.counts.total())
    }
}

/// `Σ_l coef_l · m_l Σ_i g_{l,i} / s_i = rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationConstraint {
    pub name: String,
    pub group_coefficients: Vec<(String, f64)>,
    pub rhs: f64,
}

impl CalibrationConstraint {
    pub fn validate(&self) -> Result<()> {
        if !self.group_coefficients.iter().any(|(_, c)| *c != 0.0) {
            return Err(Error::Invalid(alloc::format!(
                "calibration {} has no nonzero coefficient",
                self.name
            )));
        }
        if !(self.rhs > 0.0) {
            return Err(Error::Invalid(alloc::format!(
                "calibration {} needs a positive total",
                self.name
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupFit {
    pub label: String,
    pub responders: u64,
    /// `None` for an empty group, whose distribution is not identified.
    pub mixture: Option<DiscreteMixture>,
    /// This group's term of the final objective.
    pub residual: f64,
}

impl GroupFit {
    /// `m_l Σ_i g_{l,i} / s_i`, zero for an empty group.
    pub fn inflated_total(&self) -> f64 {
        match &self.mixture {
            Some(g) => self.responders as f64 * crate::mixture::expected_inverse(g),
            None => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointFit {
    pub groups: Vec<GroupFit>,
    pub objective: f64,
    pub passes: Vec<PassInfo>,
    /// `lhs - rhs` of the list-size row (if any) followed by each calibration row.
    pub constraint_residuals: Vec<f64>,
}

/// Joint fit of one mixture per group on the shared kernel `p`.
///
/// With `list_size = Some(I)` the inflated totals must add up to `I`; each
/// calibration adds one more linear total. Empty groups are left out of the
/// objective and of every constraint.
pub fn fit_joint(
    groups: &[GroupData],
    p: &KernelMatrix,
    list_size: Option<f64>,
    calibrations: &[CalibrationConstraint],
    config: &FitConfig,
) -> Result<JointFit> {
    config.validate()?;
    let j = p.rows();
    let k = p.cols();
    for g in groups {
        if g.counts.len() != j {
            return Err(Error::DimensionMismatch {
                context: "count vector vs kernel rows",
                expected: j,
                found: g.counts.len(),
            });
        }
    }
    for cal in calibrations {
        cal.validate()?;
        for (label, coef) in &cal.group_coefficients {
            let group = groups.iter().find(|g| &g.label == label).ok_or_else(|| {
                Error::Invalid(alloc::format!("calibration {} names unknown group {label}", cal.name))
            })?;
            if group.counts.total() == 0 && *coef != 0.0 {
                return Err(Error::EmptyGroup { label: label.clone() });
            }
        }
    }
    let active: Vec<usize> = (0..groups.len()).filter(|&i| groups[i].counts.total() > 0).collect();
    if active.is_empty() {
        return Err(Error::EmptySample);
    }
    if let Some(total) = list_size {
        if !(total > 0.0) {
            return Err(Error::Invalid("list size must be positive".to_string()));
        }
    }

    let freqs: Vec<Vec<f64>> = active
        .iter()
        .map(|&i| counts_to_freq(&groups[i].counts))
        .collect::<Result<_>>()?;
    let inv_s: Vec<f64> = p.response_probs().iter().map(|s| 1.0 / s).collect();

    // rows over the stacked weights of the active groups
    let mut extra = Vec::new();
    let mut names = Vec::new();
    if let Some(total) = list_size {
        let mut coefficients = Vec::with_capacity(active.len() * k);
        for &i in &active {
            let m = groups[i].responders() as f64;
            coefficients.extend(inv_s.iter().map(|v| m * v));
        }
        extra.push(LinearEquality {
            coefficients,
            rhs: total,
        });
        names.push("list-size total".to_string());
    }
    for cal in calibrations {
        let mut coefficients = Vec::with_capacity(active.len() * k);
        for &i in &active {
            let coef: f64 = cal
                .group_coefficients
                .iter()
                .filter(|(l, _)| *l == groups[i].label)
                .map(|(_, c)| c)
                .sum();
            let m = groups[i].responders() as f64;
            coefficients.extend(inv_s.iter().map(|v| coef * m * v));
        }
        extra.push(LinearEquality {
            coefficients,
            rhs: cal.rhs,
        });
        names.push(alloc::format!("calibration {}", cal.name));
    }

    let full = p.entries();
    let reduced: DMatrix<f64> = full.rows(0, j - 1).into_owned();
    let reduced_freqs: Vec<Vec<f64>> = freqs.iter().map(|f| f[..j - 1].to_vec()).collect();

    let map_err = |e: Error, active_len: usize| match e {
        Error::Infeasible { row: Some(r) } if r >= active_len => {
            Error::InfeasibleConstraint(names[r - active_len].clone())
        }
        Error::Infeasible { row: Some(r) } => {
            Error::InfeasibleConstraint(alloc::format!("simplex of group {}", groups[active[r]].label))
        }
        other => other,
    };

    // pass 0: unweighted
    let blocks: Vec<LsBlock<'_>> = freqs
        .iter()
        .map(|f| LsBlock {
            p: full,
            target: f,
            weight: None,
        })
        .collect();
    let first = qp::stacked_simplex_ls(&blocks, &extra).map_err(|e| map_err(e, active.len()))?;
    let mut passes = alloc::vec![PassInfo {
        objective: first.residuals.iter().sum(),
        ridge: alloc::vec![0.0; active.len()],
        identity_fallback: alloc::vec![false; active.len()],
        qp_iterations: first.solution.iterations,
    }];
    let mut weights = first.weights;
    let mut residuals = first.residuals;

    if config.method == FitMethod::Mle {
        for _ in 0..config.mle_iterations {
            let mut inverses = Vec::with_capacity(active.len());
            let mut ridge = Vec::with_capacity(active.len());
            let mut fallback = Vec::with_capacity(active.len());
            for (slot, &i) in active.iter().enumerate() {
                let g = DiscreteMixture::on_kernel(p, weights[slot].clone())?;
                let sigma = covariance_star(p, &g, groups[i].counts.total(), config.covariance_model)?;
                match regularized_inverse(&sigma) {
                    Some(inv) => {
                        ridge.push(inv.ridge);
                        fallback.push(false);
                        inverses.push(Some(inv.matrix));
                    }
                    None => {
                        ridge.push(0.0);
                        fallback.push(true);
                        inverses.push(None);
                    }
                }
            }
            let blocks: Vec<LsBlock<'_>> = reduced_freqs
                .iter()
                .zip(&inverses)
                .map(|(f, w)| LsBlock {
                    p: &reduced,
                    target: f,
                    weight: w.as_ref(),
                })
                .collect();
            let next = qp::stacked_simplex_ls(&blocks, &extra).map_err(|e| map_err(e, active.len()))?;
            passes.push(PassInfo {
                objective: next.residuals.iter().sum(),
                ridge,
                identity_fallback: fallback,
                qp_iterations: next.solution.iterations,
            });
            weights = next.weights;
            residuals = next.residuals;
        }
    }

    let mut out = Vec::with_capacity(groups.len());
    let mut slot = 0;
    for (i, g) in groups.iter().enumerate() {
        if active.get(slot) == Some(&i) {
            out.push(GroupFit {
                label: g.label.clone(),
                responders: g.responders(),
                mixture: Some(DiscreteMixture::on_kernel(p, weights[slot].clone())?),
                residual: residuals[slot],
            });
            slot += 1;
        } else {
            out.push(GroupFit {
                label: g.label.clone(),
                responders: g.responders(),
                mixture: None,
                residual: 0.0,
            });
        }
    }

    let stacked: Vec<f64> = weights.concat();
    let constraint_residuals = extra
        .iter()
        .map(|row| row.coefficients.iter().zip(&stacked).map(|(a, x)| a * x).sum::<f64>() - row.rhs)
        .collect();
    Ok(JointFit {
        objective: passes.last().map(|p| p.objective).unwrap_or_default(),
        groups: out,
        passes,
        constraint_residuals,
    })
}
