//! Run configuration: a TOML document with the sections `[kernel]`,
//! `[population]`, `[fit]`, `[simulate]`, `[[calibration]]`, `[bootstrap]`
//! and `[output]`. Unknown sections and keys are rejected.
//!
//! ```toml
//! [kernel]
//! variant = "truncated_geometric"   # or "shifted_binomial"
//! cap = 4                           # M0, truncated geometric only
//! n = 3                             # binomial trials, shifted binomial only
//! grid_start = 0.1
//! grid_step = 0.02
//! grid_end = 1.0
//! parametrization = "per_attempt"   # or "overall"
//!
//! [population]
//! population_size = 20000           # N
//! list_size = 10000                 # I
//!
//! [fit]
//! method = "moments"                # or "mle"
//! covariance_model = "eb"           # or "cd"
//! mle_iterations = 2
//! report_threshold = 1e-6
//! list_constraint = true            # tie inflated totals to I when it is known
//!
//! [simulate]
//! family = ["2points", "unif", "norm"]
//! m0 = [4, 5, 6, 7]
//! alpha = [0.1, 0.2, 0.3, 0.4]
//! list_size = 10000
//! pr1 = 0.5
//! reps = 1000
//! seed = 1
//! normal_tail = "censored"          # or "truncated"
//! list_constraint = false
//!
//! [[calibration]]
//! covariate = "female"
//! proportion = 0.51
//!
//! [bootstrap]
//! reps = 200
//! seed = 7
//!
//! [output]
//! format = "csv"                    # or "text"
//! path = "table.csv"
//! ```

use std::path::{Path, PathBuf};

use deconv_ht_core::deconvolve::{FitConfig, FitMethod};
use deconv_ht_core::estimators::PopulationFrame;
use deconv_ht_core::kernels::{Grid, ObservationKernel, Parametrization};
use deconv_ht_core::mixture::CovarianceModel;
use deconv_ht_core::simulate::{Family, NormalTail, PairSpec, ScenarioConfig};
use serde::Deserialize;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub kernel: Option<KernelSection>,
    pub population: Option<PopulationSection>,
    pub fit: Option<FitSection>,
    pub simulate: Option<SimulateSection>,
    pub calibration: Option<Vec<CalibrationEntry>>,
    pub bootstrap: Option<BootstrapSection>,
    pub output: Option<OutputSection>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelVariant {
    #[default]
    TruncatedGeometric,
    ShiftedBinomial,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParametrizationName {
    #[default]
    PerAttempt,
    Overall,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    #[serde(default)]
    pub variant: KernelVariant,
    pub cap: Option<usize>,
    pub n: Option<usize>,
    pub grid_start: Option<f64>,
    pub grid_step: Option<f64>,
    pub grid_end: Option<f64>,
    #[serde(default)]
    pub parametrization: ParametrizationName,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationSection {
    pub population_size: f64,
    pub list_size: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    Moments,
    Mle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceName {
    Eb,
    Cd,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    pub method: Option<MethodName>,
    pub covariance_model: Option<CovarianceName>,
    pub mle_iterations: Option<usize>,
    pub report_threshold: Option<f64>,
    pub list_constraint: Option<bool>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            Self::One(v) => vec![v.clone()],
            Self::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailName {
    Censored,
    Truncated,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub family: OneOrMany<String>,
    pub m0: OneOrMany<usize>,
    pub alpha: OneOrMany<f64>,
    pub list_size: u64,
    #[serde(default = "default_pr1")]
    pub pr1: f64,
    pub reps: usize,
    pub seed: u64,
    pub normal_tail: Option<TailName>,
    #[serde(default)]
    pub list_constraint: bool,
}

fn default_pr1() -> f64 {
    0.5
}

/// Known population share of a covariate value.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationEntry {
    pub covariate: String,
    pub proportion: f64,
    pub name: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapSection {
    pub reps: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Text,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub format: Option<OutputFormat>,
    pub path: Option<PathBuf>,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::input(path, e.to_string()))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Usage(m) => CliError::input(path, m),
            other => other,
        })
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| usage(e.to_string().trim_end().to_string()))
    }

    /// Grid and observation model; `cap` fills in a missing `[kernel] cap`.
    pub fn kernel(&self, cap: Option<usize>) -> CliResult<(Grid, ObservationKernel)> {
        let section = self.kernel.clone().unwrap_or_default();
        let kernel = match section.variant {
            KernelVariant::TruncatedGeometric => {
                if section.n.is_some() {
                    return Err(usage("[kernel] n applies to the shifted_binomial variant only"));
                }
                let cap = cap
                    .or(section.cap)
                    .ok_or_else(|| usage("[kernel] cap is required for the truncated_geometric variant"))?;
                ObservationKernel::TruncatedGeometric {
                    cap,
                    parametrization: match section.parametrization {
                        ParametrizationName::PerAttempt => Parametrization::PerAttempt,
                        ParametrizationName::Overall => Parametrization::Overall,
                    },
                }
            }
            KernelVariant::ShiftedBinomial => {
                if section.cap.is_some() {
                    return Err(usage("[kernel] cap applies to the truncated_geometric variant only"));
                }
                ObservationKernel::shifted_binomial(section.n.unwrap_or(3))
            }
        };
        kernel.validate().map_err(|e| usage(format!("[kernel]: {e}")))?;
        let grid = match (section.grid_start, section.grid_step, section.grid_end) {
            (None, None, None) => match section.variant {
                KernelVariant::TruncatedGeometric => Grid::per_attempt_default(),
                KernelVariant::ShiftedBinomial => Grid::panel_default(),
            },
            (Some(a), Some(h), Some(b)) => {
                Grid::arithmetic(a, h, b).map_err(|e| usage(format!("[kernel] grid: {e}")))?
            }
            _ => {
                return Err(usage(
                    "[kernel] grid_start, grid_step and grid_end must be given together",
                ))
            }
        };
        Ok((grid, kernel))
    }

    pub fn fit_config(&self) -> CliResult<FitConfig> {
        let section = self.fit.clone().unwrap_or_default();
        let defaults = FitConfig::default();
        let config = FitConfig {
            method: match section.method {
                Some(MethodName::Mle) => FitMethod::Mle,
                Some(MethodName::Moments) => FitMethod::Moments,
                None => defaults.method,
            },
            covariance_model: match section.covariance_model {
                Some(CovarianceName::Eb) => CovarianceModel::EmpiricalBayes,
                Some(CovarianceName::Cd) => CovarianceModel::CompoundDecision,
                None => defaults.covariance_model,
            },
            mle_iterations: section.mle_iterations.unwrap_or(defaults.mle_iterations),
            report_threshold: section.report_threshold.unwrap_or(defaults.report_threshold),
        };
        config.validate().map_err(|e| usage(format!("[fit]: {e}")))?;
        Ok(config)
    }

    /// Whether estimation should tie inflated totals to the list size.
    pub fn list_constraint(&self) -> bool {
        self.population.is_some() && self.fit.as_ref().and_then(|f| f.list_constraint).unwrap_or(true)
    }

    pub fn frame(&self) -> CliResult<Option<PopulationFrame>> {
        self.population
            .as_ref()
            .map(|p| {
                PopulationFrame::new(p.population_size, p.list_size).map_err(|e| usage(format!("[population]: {e}")))
            })
            .transpose()
    }

    pub fn calibrations(&self) -> CliResult<Vec<CalibrationEntry>> {
        let entries = self.calibration.clone().unwrap_or_default();
        for (i, c) in entries.iter().enumerate() {
            if !(c.proportion > 0.0 && c.proportion <= 1.0) {
                return Err(usage(format!(
                    "[[calibration]] entry {}: proportion must lie in (0, 1]",
                    i + 1
                )));
            }
            if c.covariate.is_empty() || c.covariate.contains(',') {
                return Err(usage(format!(
                    "[[calibration]] entry {}: covariate must be nonempty and comma-free",
                    i + 1
                )));
            }
            if c.name.as_deref().is_some_and(|n| n.contains(',')) {
                return Err(usage(format!(
                    "[[calibration]] entry {}: name must be comma-free",
                    i + 1
                )));
            }
        }
        if !entries.is_empty() && self.population.is_none() {
            return Err(usage("[[calibration]] needs [population] list_size"));
        }
        Ok(entries)
    }

    pub fn bootstrap(&self) -> CliResult<BootstrapSection> {
        let b = self
            .bootstrap
            .clone()
            .ok_or_else(|| usage("missing [bootstrap] section"))?;
        if b.reps == 0 {
            return Err(usage("[bootstrap] reps must be at least 1"));
        }
        Ok(b)
    }

    /// Scenarios ordered by family, then `m0`, then `alpha`.
    pub fn scenarios(&self) -> CliResult<Vec<ScenarioConfig>> {
        let sim = self
            .simulate
            .as_ref()
            .ok_or_else(|| usage("missing [simulate] section"))?;
        if self
            .kernel
            .as_ref()
            .is_some_and(|k| k.variant != KernelVariant::TruncatedGeometric)
        {
            return Err(usage("[simulate] needs the truncated_geometric kernel"));
        }
        if self.kernel.as_ref().is_some_and(|k| k.cap.is_some()) {
            return Err(usage("[simulate] takes its caps from m0; remove [kernel] cap"));
        }
        let fit = self.fit_config()?;
        let tail = match sim.normal_tail {
            Some(TailName::Truncated) => NormalTail::Truncated,
            _ => NormalTail::Censored,
        };
        let families = sim.family.to_vec();
        let caps = sim.m0.to_vec();
        let alphas = sim.alpha.to_vec();
        if families.is_empty() || caps.is_empty() || alphas.is_empty() {
            return Err(usage("[simulate] family, m0 and alpha must be nonempty"));
        }
        let mut out = Vec::new();
        for name in &families {
            let family =
                Family::from_label(name).ok_or_else(|| usage(format!("[simulate] unknown family {name:?}")))?;
            for &cap in &caps {
                let (grid, _) = self.kernel(Some(cap))?;
                for &alpha in &alphas {
                    let pair = PairSpec::new(family, alpha)
                        .map_err(|e| usage(format!("[simulate]: {e}")))?
                        .with_normal_tail(tail);
                    let mut config = ScenarioConfig::new(pair, cap, sim.list_size, sim.reps, sim.seed);
                    config.pr1 = sim.pr1;
                    config.grid = grid.clone();
                    config.fit = fit;
                    config.use_list_constraint = sim.list_constraint;
                    config.validate().map_err(|e| usage(format!("[simulate]: {e}")))?;
                    out.push(config);
                }
            }
        }
        Ok(out)
    }

    pub fn output_format(&self) -> OutputFormat {
        self.output.as_ref().and_then(|o| o.format).unwrap_or_default()
    }

    pub fn output_path(&self) -> Option<PathBuf> {
        self.output.as_ref().and_then(|o| o.path.clone())
    }
}
