//! Monte-Carlo harness comparing the naive, MHT and oracle proportion
//! estimators on a two-group population.
//!
//! Every repetition draws from its own ChaCha8 stream (`seed`, stream =
//! repetition index), so a scenario's outcome does not depend on how its
//! repetitions are scheduled.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Geometric, Normal};

use crate::deconvolve::{fit, fit_joint, FitConfig, GroupData};
use crate::error::{domain, Error, Result};
use crate::estimators::{mht_proportions, naive_proportions};
use crate::kernels::{build_kernel_matrix, response_prob, Grid, KernelMatrix, ObservationKernel};
use crate::mixture::CountVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    TwoPoints,
    Uniform,
    Normal,
}

impl Family {
    /// Label used in table output.
    pub fn label(&self) -> &'static str {
        match self {
            Self::TwoPoints => "2points",
            Self::Uniform => "unif",
            Self::Normal => "norm",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        match s {
            "2points" | "twopoints" | "two_points" => Some(Self::TwoPoints),
            "unif" | "uniform" => Some(Self::Uniform),
            "norm" | "normal" => Some(Self::Normal),
            _ => None,
        }
    }
}

/// How the shifted normal of group 1 is confined to `[0.1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormalTail {
    /// Clamp draws to the interval, leaving atoms at the ends.
    #[default]
    Censored,
    /// Redraw until the value falls inside.
    Truncated,
}

const FLOOR: f64 = 0.1;
const NORMAL_SD: f64 = 0.1;

/// A pair of per-attempt response distributions: `G0` for group 0 and the
/// `alpha`-shifted `G1` for group 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairSpec {
    pub family: Family,
    pub alpha: f64,
    pub normal_tail: NormalTail,
}

impl PairSpec {
    pub fn new(family: Family, alpha: f64) -> Result<Self> {
        let spec = Self {
            family,
            alpha,
            normal_tail: NormalTail::default(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_normal_tail(mut self, tail: NormalTail) -> Self {
        self.normal_tail = tail;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.family {
            Family::TwoPoints => self.alpha > 0.0 && self.alpha < 0.5,
            Family::Uniform => self.alpha > 0.0 && self.alpha <= 1.0,
            Family::Normal => self.alpha > 0.0 && self.alpha.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(domain!(
                "alpha = {} is out of range for {}",
                self.alpha,
                self.family.label()
            ))
        }
    }
}

/// Draw one per-attempt response probability for a unit of `group` (0 or 1).
pub fn sample_response_prob<R: Rng + ?Sized>(pair: &PairSpec, group: u8, rng: &mut R) -> f64 {
    let shifted = group == 1;
    match pair.family {
        Family::TwoPoints => {
            let base = if rng.random_bool(0.5) { 0.5 } else { 0.9 };
            if shifted {
                base - pair.alpha
            } else {
                base
            }
        }
        Family::Uniform => {
            if shifted && rng.random::<f64>() < pair.alpha {
                FLOOR
            } else {
                rng.random_range(FLOOR..1.0)
            }
        }
        Family::Normal => {
            let mean = if shifted { 0.5 - pair.alpha } else { 0.5 };
            let normal = Normal::new(mean, NORMAL_SD).expect("finite mean and positive sd");
            if shifted && pair.normal_tail == NormalTail::Truncated {
                loop {
                    let v = normal.sample(rng);
                    if (FLOOR..=1.0).contains(&v) {
                        return v;
                    }
                }
            }
            normal.sample(rng).clamp(FLOOR, 1.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub pair: PairSpec,
    /// Attempt cap `M0`.
    pub cap: usize,
    /// List size `I`.
    pub list_size: u64,
    /// True share of group-1 units.
    pub pr1: f64,
    pub reps: usize,
    pub seed: u64,
    pub grid: Grid,
    pub fit: FitConfig,
    /// Fit both groups jointly with their inflated totals tied to `I`.
    pub use_list_constraint: bool,
}

impl ScenarioConfig {
    /// Defaults: `pr1 = 0.5`, the per-attempt grid, a moments fit per group.
    pub fn new(pair: PairSpec, cap: usize, list_size: u64, reps: usize, seed: u64) -> Self {
        Self {
            pair,
            cap,
            list_size,
            pr1: 0.5,
            reps,
            seed,
            grid: Grid::per_attempt_default(),
            fit: FitConfig::default(),
            use_list_constraint: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.pair.validate()?;
        self.fit.validate()?;
        ObservationKernel::truncated_geometric(self.cap).validate()?;
        if self.reps == 0 {
            return Err(Error::Invalid("reps must be at least 1".into()));
        }
        if self.list_size == 0 {
            return Err(Error::Invalid("list size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.pr1) {
            return Err(domain!("pr1 = {} is outside [0, 1]", self.pr1));
        }
        Ok(())
    }

    pub fn kernel_matrix(&self) -> Result<KernelMatrix> {
        build_kernel_matrix(&self.grid, ObservationKernel::truncated_geometric(self.cap))
    }
}

/// Estimates of `pr1` and responder counts from one repetition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RepOutcome {
    pub naive: f64,
    pub mht: f64,
    pub oracle: f64,
    pub m1: u64,
    pub m0: u64,
}

/// Simulate repetition `rep` of `config`; `p` is the scenario's kernel matrix.
pub fn run_one_rep(config: &ScenarioConfig, p: &KernelMatrix, rep: u64) -> Result<RepOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(rep);
    let i1 = Binomial::new(config.list_size, config.pr1)
        .map_err(|e| domain!("binomial: {e}"))?
        .sample(&mut rng);
    let sizes = [config.list_size - i1, i1];

    let mut counts = [CountVector::zeros(p.rows()), CountVector::zeros(p.rows())];
    let mut inverse_sums = [0.0f64; 2];
    for group in 0..2u8 {
        let g = group as usize;
        for _ in 0..sizes[g] {
            let pt = sample_response_prob(&config.pair, group, &mut rng);
            let attempts = Geometric::new(pt)
                .map_err(|e| domain!("geometric: {e}"))?
                .sample(&mut rng)
                + 1;
            if attempts <= config.cap as u64 {
                counts[g].record(attempts as usize)?;
                inverse_sums[g] += 1.0 / response_prob(pt, config.cap)?;
            }
        }
    }
    let [c0, c1] = counts;
    let (m0, m1) = (c0.total(), c1.total());

    let naive = naive_proportions(&[m0, m1])?[1];
    let oracle = inverse_sums[1] / (inverse_sums[0] + inverse_sums[1]);

    let mht = if config.use_list_constraint {
        let groups = [GroupData::new("0", c0), GroupData::new("1", c1)];
        let joint = fit_joint(&groups, p, Some(config.list_size as f64), &[], &config.fit)?;
        let fits: Vec<(u64, Option<&_>)> = joint
            .groups
            .iter()
            .map(|g| (g.responders, g.mixture.as_ref()))
            .collect();
        mht_proportions(&fits)?[1]
    } else {
        let g0 = if m0 > 0 {
            Some(fit(&c0, p, &config.fit)?.mixture)
        } else {
            None
        };
        let g1 = if m1 > 0 {
            Some(fit(&c1, p, &config.fit)?.mixture)
        } else {
            None
        };
        mht_proportions(&[(m0, g0.as_ref()), (m1, g1.as_ref())])?[1]
    };

    Ok(RepOutcome {
        naive,
        mht,
        oracle,
        m1,
        m0,
    })
}

/// One line of a simulation table.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub family: String,
    pub cap: usize,
    pub alpha: f64,
    pub mean_naive: f64,
    pub mean_mht: f64,
    pub rmse_naive: f64,
    pub rmse_mht: f64,
    pub rmse_oracle: f64,
    pub mean_m1: f64,
    pub mean_m0: f64,
    pub failures: usize,
}

/// Aggregate repetition outcomes in index order. More than 5% failed
/// repetitions fails the scenario.
pub fn summarize(config: &ScenarioConfig, outcomes: &[Result<RepOutcome>]) -> Result<SummaryRow> {
    let total = outcomes.len();
    let ok: Vec<&RepOutcome> = outcomes.iter().flatten().collect();
    let failures = total - ok.len();
    if ok.is_empty() || failures * 20 > total {
        if let (1, Some(Err(e))) = (total, outcomes.first()) {
            return Err(e.clone());
        }
        return Err(Error::TooManyFailures {
            failed: failures,
            total,
        });
    }
    let n = ok.len() as f64;
    let mean = |f: fn(&RepOutcome) -> f64| ok.iter().map(|o| f(o)).sum::<f64>() / n;
    let rmse = |f: fn(&RepOutcome) -> f64| {
        let pr1 = config.pr1;
        libm::sqrt(ok.iter().map(|o| (f(o) - pr1) * (f(o) - pr1)).sum::<f64>() / n)
    };
    Ok(SummaryRow {
        family: config.pair.family.label().into(),
        cap: config.cap,
        alpha: config.pair.alpha,
        mean_naive: mean(|o| o.naive),
        mean_mht: mean(|o| o.mht),
        rmse_naive: rmse(|o| o.naive),
        rmse_mht: rmse(|o| o.mht),
        rmse_oracle: rmse(|o| o.oracle),
        mean_m1: mean(|o| o.m1 as f64),
        mean_m0: mean(|o| o.m0 as f64),
        failures,
    })
}

/// Run every repetition of `config` sequentially.
pub fn run_scenario(config: &ScenarioConfig) -> Result<SummaryRow> {
    config.validate()?;
    let p = config.kernel_matrix()?;
    let outcomes: Vec<Result<RepOutcome>> = (0..config.reps as u64).map(|r| run_one_rep(config, &p, r)).collect();
    summarize(config, &outcomes)
}

/// Run scenarios in order; a failing scenario yields its error in place.
pub fn run_table(configs: &[ScenarioConfig]) -> Result<Vec<Result<SummaryRow>>> {
    if configs.is_empty() {
        return Err(Error::Invalid("no scenarios to run".into()));
    }
    Ok(configs.iter().map(run_scenario).collect())
}
