//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use common::*;
use deconv_ht::parallel;
use deconv_ht_core::deconvolve::{fit, fit_moments, FitConfig};
use deconv_ht_core::estimators::{ht_oracle_total, mht_total, PopulationFrame};
use deconv_ht_core::kernels::{build_kernel_matrix, response_prob, Grid, KernelMatrix, ObservationKernel};
use deconv_ht_core::mixture::{covariance_star, mixture_pmf, CountVector, CovarianceModel, DiscreteMixture};
use deconv_ht_core::qp::{self, QpProblem, QpStatus};
use deconv_ht_core::simulate::{Family, PairSpec, ScenarioConfig, SummaryRow};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

type Outcome = Result<String, String>;
type ItemAtom = dyn Fn(&mut ChaCha8Rng, usize) -> usize + Sync;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn table(configs: &[ScenarioConfig]) -> Result<Vec<SummaryRow>, String> {
    let pool = parallel::pool(0).map_err(|e| e.to_string())?;
    let rows = pool
        .install(|| parallel::run_table(configs))
        .map_err(|e| e.to_string())?;
    rows.into_iter().map(|r| r.map_err(|e| e.to_string())).collect()
}

fn reduced_table_rows() -> Outcome {
    let cases = [
        (Family::TwoPoints, 7, 0.4, 0.4341, 0.4926),
        (Family::Normal, 4, 0.4, 0.3255, 0.4944),
        (Family::Uniform, 5, 0.3, 0.4553, 0.4888),
    ];
    let configs: Vec<ScenarioConfig> = cases
        .iter()
        .map(|&(f, cap, a, ..)| ScenarioConfig::new(PairSpec::new(f, a).unwrap(), cap, 10_000, 300, 20240))
        .collect();
    let rows = table(&configs)?;
    let mut detail = Vec::new();
    for (row, &(_, _, _, nv, mht)) in rows.iter().zip(&cases) {
        let line = format!(
            "{} M0={} a={}: NV {:.4} (ref {nv}) MHT {:.4} (ref {mht})",
            row.family, row.cap, row.alpha, row.mean_naive, row.mean_mht
        );
        ensure(
            (row.mean_naive - nv).abs() <= 0.01 && (row.mean_mht - mht).abs() <= 0.025,
            || line.clone(),
        )?;
        detail.push(line);
    }
    Ok(detail.join("; "))
}

fn bias_ordering() -> Outcome {
    let mut configs = Vec::new();
    for f in [Family::TwoPoints, Family::Uniform, Family::Normal] {
        for cap in 4..=7 {
            for a in [0.3, 0.4] {
                configs.push(ScenarioConfig::new(
                    PairSpec::new(f, a).unwrap(),
                    cap,
                    10_000,
                    300,
                    20240,
                ));
            }
        }
    }
    let rows = table(&configs)?;
    for r in &rows {
        ensure((r.mean_mht - 0.5).abs() < (r.mean_naive - 0.5).abs(), || {
            format!(
                "{} M0={} a={}: MHT {:.4} not closer than NV {:.4}",
                r.family, r.cap, r.alpha, r.mean_mht, r.mean_naive
            )
        })?;
        ensure(r.rmse_oracle <= r.rmse_mht, || {
            format!(
                "{} M0={} a={}: S-OR {:.5} > S-MHT {:.5}",
                r.family, r.cap, r.alpha, r.rmse_oracle, r.rmse_mht
            )
        })?;
    }
    Ok(format!("{} cells", rows.len()))
}

fn ls_problem(p: &DMatrix<f64>, target: &[f64], w: &DMatrix<f64>) -> QpProblem {
    let ptw = p.transpose() * w;
    let q = &ptw * p * 2.0;
    let q = (&q + q.transpose()) * 0.5;
    let c = ptw * DVector::from_column_slice(target) * -2.0;
    let (a, b, l, u) = simplex_constraints(p.ncols());
    QpProblem::new(q, c, a, b, l, u).unwrap()
}

fn qp_oracle() -> Outcome {
    let mut r = rng(303);
    let mut converged = 0;
    let mut worst_gap = f64::NEG_INFINITY;
    let mut worst_kkt: f64 = 0.0;
    for case in 0..200 {
        let k = 2 + case % 3;
        let j = 3 + (case / 3) % 3;
        let p = random_kernel(&mut r, j, k);
        let t = random_probability(&mut r, j);
        let w = if case % 2 == 0 {
            DMatrix::identity(j, j)
        } else {
            let b = DMatrix::from_fn(j, j, |_, _| r.random::<f64>() - 0.5);
            &b * b.transpose() + DMatrix::identity(j, j) * 0.1
        };
        let problem = ls_problem(&p, &t, &w);
        let sol = qp::solve_default(&problem);
        let objective = qp::weighted_residual(&p, &t, Some(&w), &sol.x);
        let (best, _) = lattice_min(k, 100, |g| qp::weighted_residual(&p, &t, Some(&w), g));
        worst_gap = worst_gap.max(objective - best);
        ensure(objective <= best + 1e-6, || {
            format!("case {case}: {objective} vs lattice {best}")
        })?;
        if sol.status == QpStatus::Converged {
            converged += 1;
            let v = kkt_violation(
                &problem.q,
                &problem.c,
                &problem.a_eq,
                &problem.b_eq,
                &problem.lower,
                &problem.upper,
                &sol.x,
            );
            worst_kkt = worst_kkt.max(v);
            ensure(v < 1e-7, || format!("case {case}: KKT violation {v:e}"))?;
        }
    }
    Ok(format!(
        "200 instances, {converged} converged, worst gap to lattice {worst_gap:.2e}, worst KKT {worst_kkt:.2e}"
    ))
}

fn representability() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut columns = 0;
    let kernels = [
        build_kernel_matrix(&Grid::per_attempt_default(), ObservationKernel::truncated_geometric(4)).unwrap(),
        build_kernel_matrix(&Grid::per_attempt_default(), ObservationKernel::truncated_geometric(7)).unwrap(),
        build_kernel_matrix(&Grid::panel_default(), ObservationKernel::shifted_binomial(3)).unwrap(),
    ];
    for p in &kernels {
        for i in 0..p.cols() {
            let target = p.column(i);
            let counts = CountVector::new(target.iter().map(|v| (v * 1e6).round() as u64).collect());
            let f = fit_moments(&counts, p).map_err(|e| e.to_string())?;
            let fitted = mixture_pmf(p, &f.mixture).unwrap();
            let d = fitted
                .iter()
                .zip(&target)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            worst = worst.max(d);
            columns += 1;
            ensure(d < 1e-3, || format!("column {i}: L-inf {d:e}"))?;
        }
    }
    // quarter-point grids make m P(.|s) integral at s = 1/2 and s = 1
    let grid = Grid::new(vec![0.25, 0.5, 0.75, 1.0]).unwrap();
    let exact = [
        (
            ObservationKernel::truncated_geometric(4),
            vec![800_000u64, 400_000, 200_000, 100_000],
        ),
        (ObservationKernel::truncated_geometric(4), vec![1_000_000, 0, 0, 0]),
        (
            ObservationKernel::shifted_binomial(3),
            vec![125_000, 375_000, 375_000, 125_000],
        ),
        (ObservationKernel::shifted_binomial(3), vec![0, 0, 0, 1_000_000]),
    ];
    let mut worst_obj: f64 = 0.0;
    for (kernel, counts) in exact {
        let p = build_kernel_matrix(&grid, kernel).unwrap();
        let f = fit_moments(&CountVector::new(counts), &p).map_err(|e| e.to_string())?;
        worst_obj = worst_obj.max(f.objective);
        ensure(f.objective <= 1e-10, || {
            format!("integral counts: objective {:e}", f.objective)
        })?;
    }
    Ok(format!(
        "{columns} columns, worst L-inf {worst:.2e}; integral cases objective <= {worst_obj:.1e}"
    ))
}

fn support_bound() -> Outcome {
    let mut r = rng(505);
    let mut most = 0;
    for case in 0..100 {
        let p = if case % 4 == 3 {
            let points: Vec<f64> = (0..5).map(|i| 0.15 + 0.2 * i as f64).collect();
            KernelMatrix::at_points(&points, ObservationKernel::shifted_binomial(3 + case % 3)).unwrap()
        } else {
            build_kernel_matrix(
                &Grid::per_attempt_default(),
                ObservationKernel::truncated_geometric(3 + case % 5),
            )
            .unwrap()
        };
        let j = p.rows();
        let truth = random_probability(&mut r, p.cols());
        let f = p.entries() * DVector::from_column_slice(&truth);
        let m = 500.0 + 5000.0 * r.random::<f64>();
        let counts = CountVector::new(
            f.iter()
                .map(|v| (v * m * (1.0 + 0.05 * (r.random::<f64>() - 0.5))).round() as u64)
                .collect(),
        );
        let fitted = fit_moments(&counts, &p).map_err(|e| e.to_string())?;
        let reduced = caratheodory(p.entries(), fitted.mixture.weights());
        let atoms = reduced.iter().filter(|&&w| w > 1e-14).count();
        most = most.max(atoms);
        let total = counts.total() as f64;
        let target: Vec<f64> = counts.counts().iter().map(|&c| c as f64 / total).collect();
        let objective = residual(p.entries(), &target, &reduced);
        ensure(atoms <= j, || format!("case {case}: {atoms} atoms for J = {j}"))?;
        ensure((objective - fitted.objective).abs() <= 1e-8, || {
            format!("case {case}: reduced objective {objective:e} vs {:e}", fitted.objective)
        })?;
    }
    Ok(format!("100 fits, at most {most} atoms after reduction"))
}

fn draw_y(column: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (j, &v) in column.iter().enumerate() {
        acc += v;
        if u < acc {
            return j;
        }
    }
    column.len() - 1
}

/// Empirical covariance of the first `J - 1` counts, and its Monte-Carlo
/// standard errors, over `n` vectors of `m` items.
fn simulated_covariance(
    columns: &[Vec<f64>],
    item_atom: &ItemAtom,
    m: usize,
    n: usize,
    seed: u64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = columns[0].len() - 1;
    let chunks = 64;
    let per = n / chunks;
    let vectors: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(c as u64);
            (0..per)
                .map(|_| {
                    let mut counts = vec![0.0; d + 1];
                    for item in 0..m {
                        let atom = item_atom(&mut r, item);
                        counts[draw_y(&columns[atom], r.random::<f64>())] += 1.0;
                    }
                    counts.truncate(d);
                    counts
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let n = vectors.len() as f64;
    let mean: Vec<f64> = (0..d).map(|a| vectors.iter().map(|v| v[a]).sum::<f64>() / n).collect();
    let mut cov = DMatrix::zeros(d, d);
    let mut se = DMatrix::zeros(d, d);
    for a in 0..d {
        for b in 0..d {
            let prods: Vec<f64> = vectors.iter().map(|v| (v[a] - mean[a]) * (v[b] - mean[b])).collect();
            let c = prods.iter().sum::<f64>() / (n - 1.0);
            let var = prods.iter().map(|x| (x - c).powi(2)).sum::<f64>() / (n - 1.0);
            cov[(a, b)] = c;
            se[(a, b)] = (var / n).sqrt();
        }
    }
    (cov, se)
}

fn covariance() -> Outcome {
    let p = KernelMatrix::at_points(&[0.2, 0.7], ObservationKernel::truncated_geometric(4)).unwrap();
    let g = DiscreteMixture::on_kernel(&p, vec![0.5, 0.5]).unwrap();
    let columns = [p.column(0), p.column(1)];
    let m = 20;
    let n = 1_000_000;
    let mut worst: f64 = 0.0;
    let models: [(CovarianceModel, &ItemAtom); 2] = [
        (CovarianceModel::EmpiricalBayes, &|r: &mut ChaCha8Rng, _| {
            usize::from(r.random::<f64>() >= 0.5)
        }),
        (CovarianceModel::CompoundDecision, &|_: &mut ChaCha8Rng, item| {
            usize::from(item >= 10)
        }),
    ];
    for (seed, (model, atom)) in models.iter().enumerate() {
        let expected = covariance_star(&p, &g, m as u64, *model).unwrap();
        let (cov, se) = simulated_covariance(&columns, *atom, m, n, 600 + seed as u64);
        for a in 0..cov.nrows() {
            for b in 0..cov.ncols() {
                let z = (cov[(a, b)] - expected[(a, b)]).abs() / se[(a, b)];
                worst = worst.max(z);
                ensure(z <= 3.0, || {
                    format!(
                        "{model:?} entry ({a},{b}): {} vs {} ({z:.2} SE)",
                        cov[(a, b)],
                        expected[(a, b)]
                    )
                })?;
            }
        }
    }
    let p = KernelMatrix::from_columns(DMatrix::identity(2, 2), vec![1.0, 0.5]).unwrap();
    let g = DiscreteMixture::on_kernel(&p, vec![0.5, 0.5]).unwrap();
    let cd = covariance_star(&p, &g, 2, CovarianceModel::CompoundDecision).unwrap();
    let eb = covariance_star(&p, &g, 2, CovarianceModel::EmpiricalBayes).unwrap();
    ensure(cd[(0, 0)] == 0.0 && eb[(0, 0)] == 0.5, || {
        format!("gap example: CD {} EB {}", cd[(0, 0)], eb[(0, 0)])
    })?;
    Ok(format!(
        "EB and CD within {worst:.2} SE over 1e6 vectors; gap example CD 0, EB 0.5"
    ))
}

fn oracle_unbiased() -> Outcome {
    let cap = 4;
    let list = 2000;
    let frame = PopulationFrame::new(6000.0, list as f64).unwrap();
    let p_stars: Vec<f64> = (0..list)
        .map(|i| response_prob(if i % 2 == 0 { 0.3 } else { 0.8 }, cap).unwrap())
        .collect();
    let reps = 10_000u64;
    let totals: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut r = ChaCha8Rng::seed_from_u64(707);
            r.set_stream(rep);
            let responders: Vec<f64> = p_stars.iter().copied().filter(|&p| r.random::<f64>() < p).collect();
            ht_oracle_total(&responders, &frame).unwrap()
        })
        .collect();
    let n = reps as f64;
    let mean = totals.iter().sum::<f64>() / n;
    let var = totals.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    let z = (mean - 6000.0).abs() / se;
    ensure(z <= 3.0, || format!("mean {mean} vs 6000, {z:.2} SE"))?;
    Ok(format!("mean {mean:.3} vs 6000 ({z:.2} SE)"))
}

fn bootstrap_sanity() -> Outcome {
    let p = build_kernel_matrix(&Grid::per_attempt_default(), ObservationKernel::truncated_geometric(4)).unwrap();
    let cfg = FitConfig::default();
    let frame = PopulationFrame::census(500.0).unwrap();

    let point = DiscreteMixture::point_mass_on(&p, p.cols() - 1).unwrap();
    let degenerate = parallel::bootstrap_mse_term(&point, 500, &frame, &p, 50, 8, &cfg).map_err(|e| e.to_string())?;
    ensure(degenerate.mse == 0.0, || {
        format!("point mass: MSE {:e}", degenerate.mse)
    })?;

    let (lo, hi) = (10, 35);
    let mut w = vec![0.0; p.cols()];
    w[lo] = 0.5;
    w[hi] = 0.5;
    let g = DiscreteMixture::on_kernel(&p, w).unwrap();
    let boot = parallel::bootstrap_mse_term(&g, 500, &frame, &p, 200, 808, &cfg).map_err(|e| e.to_string())?;

    // independent generator: attempts are simulated until the first success
    // and non-responders are redrawn
    let truth = mht_total(&g, 500, &frame);
    let tildes = [p.params()[lo], p.params()[hi]];
    let errors: Vec<f64> = (0..1000u64)
        .into_par_iter()
        .map(|rep| {
            let mut r = ChaCha8Rng::seed_from_u64(909);
            r.set_stream(rep);
            let mut counts = CountVector::zeros(4);
            while counts.total() < 500 {
                let pt = tildes[usize::from(r.random::<f64>() >= 0.5)];
                if let Some(attempt) = (1..=4).find(|_| r.random::<f64>() < pt) {
                    counts.record(attempt).unwrap();
                }
            }
            let est = fit(&counts, &p, &cfg).unwrap().mixture;
            (mht_total(&est, 500, &frame) - truth).powi(2)
        })
        .collect();
    let mc_rmse = (errors.iter().sum::<f64>() / errors.len() as f64).sqrt();
    let boot_rmse = boot.mse.sqrt();
    let ratio = boot_rmse / mc_rmse;
    ensure((0.5..=2.0).contains(&ratio), || {
        format!("bootstrap RMSE {boot_rmse:.3} vs MC {mc_rmse:.3}")
    })?;
    Ok(format!(
        "point mass MSE 0; two-point RMSE bootstrap {boot_rmse:.3} vs MC {mc_rmse:.3} (ratio {ratio:.3})"
    ))
}

fn run_cli(args: &[&str], threads: usize) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_deconv-ht"))
        .args(args)
        .env("DECONV_HT_THREADS", threads.to_string())
        .output()
        .map_err(|e| e.to_string())?;
    ensure(o.status.success(), || {
        format!("{args:?}: {}", String::from_utf8_lossy(&o.stderr))
    })
}

fn determinism() -> Outcome {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let configs = manifest.join("configs");
    let data = manifest.join("tests/fixtures/panel.csv");
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let sim = dir.path().join("sim.toml");
    std::fs::write(
        &sim,
        "[simulate]\nfamily = [\"2points\", \"unif\", \"norm\"]\nm0 = [4, 7]\nalpha = 0.4\nlist_size = 2000\nreps = 24\nseed = 99\n",
    )
    .map_err(|e| e.to_string())?;
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let commands: Vec<(&str, Vec<String>, bool)> = vec![
        ("simulate", vec!["simulate".into(), "--config".into(), s(&sim)], true),
        (
            "estimate",
            vec![
                "estimate".into(),
                "--config".into(),
                s(&configs.join("panel_calibrated.toml")),
                "--data".into(),
                s(&data),
                "--format".into(),
                "csv".into(),
            ],
            false,
        ),
        (
            "bootstrap",
            vec![
                "bootstrap".into(),
                "--config".into(),
                s(&configs.join("panel.toml")),
                "--data".into(),
                s(&data),
                "--reps".into(),
                "40".into(),
                "--format".into(),
                "csv".into(),
            ],
            false,
        ),
        (
            "kernel",
            vec!["kernel".into(), "--config".into(), s(&configs.join("panel.toml"))],
            false,
        ),
    ];
    for (name, args, mirror) in &commands {
        let mut outputs: Vec<Vec<Vec<u8>>> = Vec::new();
        for (run, threads) in [(0, 1), (1, 1), (2, 4), (3, 4)] {
            let out: PathBuf = dir.path().join(format!("{name}-{run}.csv"));
            let mut full: Vec<&str> = args.iter().map(String::as_str).collect();
            let out_s = s(&out);
            full.extend(["--out", &out_s]);
            run_cli(&full, threads)?;
            let mut files = vec![std::fs::read(&out).map_err(|e| e.to_string())?];
            if *mirror {
                files.push(std::fs::read(out.with_extension("txt")).map_err(|e| e.to_string())?);
            }
            outputs.push(files);
        }
        ensure(outputs.iter().all(|o| o == &outputs[0]), || {
            format!("{name}: outputs differ")
        })?;
    }
    Ok("simulate, estimate, bootstrap, kernel identical over 2 runs x threads {1, 4}".into())
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("reduced-scale table rows", reduced_table_rows),
        ("bias-correction ordering", bias_ordering),
        ("QP oracle equivalence", qp_oracle),
        ("exact representability", representability),
        ("support-size bound", support_bound),
        ("covariance correctness", covariance),
        ("oracle unbiasedness", oracle_unbiased),
        ("bootstrap sanity", bootstrap_sanity),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail}) [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({detail}) [{secs:.1}s]", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
}
