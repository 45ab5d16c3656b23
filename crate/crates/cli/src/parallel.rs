//! Thread-pool versions of the scenario and bootstrap loops.
//!
//! Work items draw from their own RNG streams and results are collected in
//! index order, so output does not depend on the number of threads.

use deconv_ht_core::deconvolve::FitConfig;
use deconv_ht_core::estimators::{
    bootstrap_replicate, mht_total, summarize_bootstrap, BootstrapResult, PopulationFrame,
};
use deconv_ht_core::kernels::KernelMatrix;
use deconv_ht_core::mixture::DiscreteMixture;
use deconv_ht_core::simulate::{run_one_rep, summarize, RepOutcome, ScenarioConfig, SummaryRow};
use deconv_ht_core::{Error, Result};
use rayon::prelude::*;

use crate::error::{CliError, CliResult};

pub const THREADS_ENV: &str = "DECONV_HT_THREADS";

/// Pool sized by `DECONV_HT_THREADS` (unset or 0 means one thread per core).
pub fn pool_from_env() -> CliResult<rayon::ThreadPool> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse::<usize>()
            .map_err(|_| CliError::Usage(format!("{THREADS_ENV}={v:?} is not a thread count")))?,
        _ => 0,
    };
    pool(threads)
}

pub fn pool(threads: usize) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))
}

pub fn run_scenario(config: &ScenarioConfig) -> Result<SummaryRow> {
    config.validate()?;
    let p = config.kernel_matrix()?;
    let outcomes: Vec<Result<RepOutcome>> = (0..config.reps as u64)
        .into_par_iter()
        .map(|r| run_one_rep(config, &p, r))
        .collect();
    summarize(config, &outcomes)
}

/// Rows in input order; a failed scenario leaves its error in place.
pub fn run_table(configs: &[ScenarioConfig]) -> Result<Vec<Result<SummaryRow>>> {
    if configs.is_empty() {
        return Err(Error::Invalid("no scenarios to run".into()));
    }
    Ok(configs.par_iter().map(run_scenario).collect())
}

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
        .into_par_iter()
        .map(|k| bootstrap_replicate(g_hat, responders, frame, p, fit_config, seed, k))
        .collect();
    summarize_bootstrap(center, &reps)
}
