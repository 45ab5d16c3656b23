use std::path::{Path, PathBuf};

use deconv_ht_core::deconvolve::{fit, fit_joint, CalibrationConstraint, FitMethod};
use deconv_ht_core::estimators::PopulationFrame;
use deconv_ht_core::kernels::{build_kernel_matrix, KernelMatrix};
use deconv_ht_core::mixture::expected_inverse;
use deconv_ht_core::simulate::SummaryRow;

use crate::config::{OutputFormat, RunConfig};
use crate::data::{cells, group_order, read_records, Cell};
use crate::error::{CliError, CliResult};
use crate::output::{self, Report, ReportValue};
use crate::parallel;

/// Arguments shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Options {
    pub config: PathBuf,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub reps: Option<usize>,
    pub format: Option<OutputFormat>,
}

struct Loaded {
    config: RunConfig,
    format: OutputFormat,
    out: Option<PathBuf>,
}

fn load(opts: &Options) -> CliResult<Loaded> {
    let config = RunConfig::load(&opts.config)?;
    Ok(Loaded {
        format: opts.format.unwrap_or_else(|| config.output_format()),
        out: opts.out.clone().or_else(|| config.output_path()),
        config,
    })
}

fn kernel_matrix(config: &RunConfig) -> CliResult<KernelMatrix> {
    let (grid, kernel) = config.kernel(None)?;
    build_kernel_matrix(&grid, kernel).map_err(|e| CliError::Usage(format!("[kernel]: {e}")))
}

fn data_path(opts: &Options) -> CliResult<&Path> {
    opts.data
        .as_deref()
        .ok_or_else(|| CliError::Usage("--data is required".into()))
}

/// Sibling of a CSV output that holds its aligned-text mirror.
pub fn text_mirror_path(path: &Path) -> PathBuf {
    let mirror = path.with_extension("txt");
    if mirror == path {
        let mut s = path.as_os_str().to_owned();
        s.push(".txt");
        PathBuf::from(s)
    } else {
        mirror
    }
}

/// Run the scenario grid of `[simulate]`. Rows of failed scenarios are
/// left out of the table and reported as one runtime error.
pub fn simulate(opts: &Options) -> CliResult<Vec<SummaryRow>> {
    let Loaded {
        mut config,
        format,
        out,
    } = load(opts)?;
    if let Some(sim) = config.simulate.as_mut() {
        if let Some(seed) = opts.seed {
            sim.seed = seed;
        }
        if let Some(reps) = opts.reps {
            sim.reps = reps;
        }
    }
    let scenarios = config.scenarios()?;
    let pool = parallel::pool_from_env()?;
    let results = pool
        .install(|| parallel::run_table(&scenarios))
        .map_err(CliError::core("simulation"))?;

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (cfg, r) in scenarios.iter().zip(results) {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => failures.push(format!(
                "{} M0={} alpha={}: {e}",
                cfg.pair.family.label(),
                cfg.cap,
                cfg.pair.alpha
            )),
        }
    }
    match format {
        OutputFormat::Csv => {
            output::write_atomic(out.as_deref(), &output::summary_csv(&rows))?;
            if let Some(path) = &out {
                output::write_atomic(Some(&text_mirror_path(path)), output::summary_text(&rows).as_bytes())?;
            }
        }
        OutputFormat::Text => output::write_atomic(out.as_deref(), output::summary_text(&rows).as_bytes())?,
    }
    if failures.is_empty() {
        Ok(rows)
    } else {
        Err(CliError::Runtime(format!(
            "{} scenario(s) failed:\n  {}",
            failures.len(),
            failures.join("\n  ")
        )))
    }
}

fn write_report(report: &Report, format: OutputFormat, out: Option<&Path>) -> CliResult<()> {
    match format {
        OutputFormat::Csv => output::write_atomic(out, &report.to_csv()),
        OutputFormat::Text => output::write_atomic(out, report.to_text().as_bytes()),
    }
}

/// Fit every group and report naive and MHT proportions with diagnostics.
pub fn estimate(opts: &Options) -> CliResult<Report> {
    let Loaded { config, format, out } = load(opts)?;
    let p = kernel_matrix(&config)?;
    let fit_config = config.fit_config()?;
    let frame = config.frame()?;
    let calibration_entries = config.calibrations()?;
    let records = read_records(data_path(opts)?, p.rows())?;
    let cells = cells(&records, p.rows(), !calibration_entries.is_empty())?;

    let list_size = if config.list_constraint() {
        frame.map(|f| f.list_size())
    } else {
        None
    };
    let mut calibrations = Vec::new();
    for entry in &calibration_entries {
        let members: Vec<(String, f64)> = cells
            .iter()
            .filter(|c| c.covariate.as_deref() == Some(entry.covariate.as_str()))
            .map(|c| (c.label(), 1.0))
            .collect();
        if members.is_empty() {
            return Err(CliError::Usage(format!(
                "calibration covariate {:?} matches no record",
                entry.covariate
            )));
        }
        let list = frame.expect("calibrations require a population").list_size();
        calibrations.push(CalibrationConstraint {
            name: entry.name.clone().unwrap_or_else(|| entry.covariate.clone()),
            group_coefficients: members,
            rhs: entry.proportion * list,
        });
    }

    let groups: Vec<_> = cells.iter().map(Cell::to_group_data).collect();
    let joint = fit_joint(&groups, &p, list_size, &calibrations, &fit_config).map_err(CliError::core("fit"))?;

    let order = group_order(&cells);
    let responders: Vec<u64> = order
        .iter()
        .map(|g| cells.iter().filter(|c| &c.group == g).map(|c| c.responders).sum())
        .collect();
    let inflated: Vec<f64> = order
        .iter()
        .map(|g| {
            joint
                .groups
                .iter()
                .zip(&cells)
                .filter(|(_, c)| &c.group == g)
                .map(|(f, _)| f.inflated_total())
                .sum()
        })
        .collect();
    let m_total: u64 = responders.iter().sum();
    let inflated_total: f64 = inflated.iter().sum();
    if m_total == 0 || !(inflated_total > 0.0) {
        return Err(CliError::Runtime("no current responders to estimate from".into()));
    }

    let mut report = Report::default();
    for (i, g) in order.iter().enumerate() {
        report.push("estimate", g, "responders", ReportValue::Count(responders[i]));
        report.push(
            "estimate",
            g,
            "naive",
            ReportValue::Real(responders[i] as f64 / m_total as f64),
        );
        report.push("estimate", g, "mht", ReportValue::Real(inflated[i] / inflated_total));
        if let Some(f) = frame {
            report.push("estimate", g, "total", ReportValue::Real(f.inflation() * inflated[i]));
        }
    }
    report.push(
        "fit",
        "",
        "method",
        ReportValue::Text(match fit_config.method {
            FitMethod::Moments => "moments".into(),
            FitMethod::Mle => "mle".into(),
        }),
    );
    report.push("fit", "", "objective", ReportValue::Real(joint.objective));
    let mut names: Vec<String> = Vec::new();
    if list_size.is_some() {
        names.push("list-size total".into());
    }
    names.extend(calibrations.iter().map(|c| format!("calibration {}", c.name)));
    for (name, r) in names.iter().zip(&joint.constraint_residuals) {
        report.push("constraint", "", name.clone(), ReportValue::Real(*r));
    }
    for (cell, g) in cells.iter().zip(&joint.groups) {
        let label = cell.label();
        report.push(
            "diagnostic",
            &label,
            "fitted_records",
            ReportValue::Count(cell.counts.total()),
        );
        report.push("diagnostic", &label, "residual", ReportValue::Real(g.residual));
        if let Some(mix) = &g.mixture {
            report.push(
                "diagnostic",
                &label,
                "expected_inverse",
                ReportValue::Real(expected_inverse(mix)),
            );
            for (i, &w) in mix.weights().iter().enumerate() {
                if w > fit_config.report_threshold {
                    report.push(
                        "weight",
                        &label,
                        output::param_label(p.params()[i]),
                        ReportValue::Real(w),
                    );
                }
            }
        }
    }
    write_report(&report, format, out.as_deref())?;
    Ok(report)
}

/// Fit each group on its own and estimate the first MSE term of its total.
pub fn bootstrap(opts: &Options) -> CliResult<Report> {
    let Loaded { config, format, out } = load(opts)?;
    let p = kernel_matrix(&config)?;
    let fit_config = config.fit_config()?;
    let frame = config.frame()?;
    let mut settings = config.bootstrap()?;
    if let Some(reps) = opts.reps {
        if reps == 0 {
            return Err(CliError::Usage("--reps must be at least 1".into()));
        }
        settings.reps = reps;
    }
    if let Some(seed) = opts.seed {
        settings.seed = seed;
    }
    let records = read_records(data_path(opts)?, p.rows())?;
    let cells = cells(&records, p.rows(), false)?;
    let pool = parallel::pool_from_env()?;

    let mut report = Report::default();
    for (index, cell) in cells.iter().enumerate() {
        let label = cell.label();
        let seed = settings.seed.wrapping_add(index as u64);
        report.push("bootstrap", &label, "responders", ReportValue::Count(cell.responders));
        report.push(
            "bootstrap",
            &label,
            "replications",
            ReportValue::Count(settings.reps as u64),
        );
        report.push("bootstrap", &label, "seed", ReportValue::Count(seed));
        if cell.responders == 0 {
            report.push(
                "bootstrap",
                &label,
                "skipped",
                ReportValue::Text("no current responders".into()),
            );
            continue;
        }
        let g_hat = fit(&cell.counts, &p, &fit_config)
            .map_err(CliError::core(format!("fit of group {label}")))?
            .mixture;
        let group_frame = match frame {
            Some(f) => f,
            None => PopulationFrame::census(cell.responders as f64).map_err(CliError::core("frame"))?,
        };
        let result = pool
            .install(|| {
                parallel::bootstrap_mse_term(
                    &g_hat,
                    cell.responders,
                    &group_frame,
                    &p,
                    settings.reps,
                    seed,
                    &fit_config,
                )
            })
            .map_err(CliError::core(format!("bootstrap of group {label}")))?;
        report.push("bootstrap", &label, "center", ReportValue::Real(result.center));
        report.push("bootstrap", &label, "mse", ReportValue::Real(result.mse));
        report.push("bootstrap", &label, "rmse", ReportValue::Real(result.mse.sqrt()));
        report.push(
            "bootstrap",
            &label,
            "failures",
            ReportValue::Count(result.failures as u64),
        );
    }
    write_report(&report, format, out.as_deref())?;
    Ok(report)
}

/// Dump the kernel matrix of `[kernel]`.
pub fn kernel(opts: &Options) -> CliResult<KernelMatrix> {
    let Loaded { config, format, out } = load(opts)?;
    let p = kernel_matrix(&config)?;
    match format {
        OutputFormat::Csv => output::write_atomic(out.as_deref(), &output::kernel_csv(&p))?,
        OutputFormat::Text => output::write_atomic(out.as_deref(), output::kernel_text(&p).as_bytes())?,
    }
    Ok(p)
}
