#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random column-stochastic `rows × cols` matrix.
pub fn random_kernel(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols);
    for c in 0..cols {
        let raw: Vec<f64> = (0..rows).map(|_| rng.random::<f64>() + 1e-3).collect();
        let total: f64 = raw.iter().sum();
        for r in 0..rows {
            m[(r, c)] = raw[r] / total;
        }
    }
    m
}

pub fn random_probability(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..len).map(|_| rng.random::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| v / total).collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Every point of the simplex in `k` dimensions with coordinates on a
/// `1/steps` lattice.
pub fn simplex_lattice(k: usize, steps: usize) -> Vec<Vec<f64>> {
    fn rec(k: usize, left: usize, steps: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if prefix.len() == k - 1 {
            prefix.push(left);
            out.push(prefix.iter().map(|&v| v as f64 / steps as f64).collect());
            prefix.pop();
            return;
        }
        for v in 0..=left {
            prefix.push(v);
            rec(k, left - v, steps, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(k, steps, steps, &mut Vec::new(), &mut out);
    out
}

/// Smallest value of `f` over the step-`1/steps` simplex lattice.
pub fn lattice_min<F: Fn(&[f64]) -> f64>(k: usize, steps: usize, f: F) -> (f64, Vec<f64>) {
    let mut best = (f64::INFINITY, Vec::new());
    for g in simplex_lattice(k, steps) {
        let v = f(&g);
        if v < best.0 {
            best = (v, g);
        }
    }
    best
}

pub fn residual(p: &DMatrix<f64>, target: &[f64], g: &[f64]) -> f64 {
    let r = DVector::from_column_slice(target) - p * DVector::from_column_slice(g);
    r.dot(&r)
}

/// Worst KKT violation of `x` for `min ½x'Qx + c'x, Ax = b, l ≤ x ≤ u`,
/// with `Q, c` scaled to unit max-norm and each row of `A` likewise.
///
/// Bound multipliers are eliminated; the equality multipliers minimize the
/// worst violation, from interior-variable normal equations when those
/// determine them, otherwise by coordinate-wise ternary search.
pub fn kkt_violation(
    q: &DMatrix<f64>,
    c: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    x: &[f64],
) -> f64 {
    let n = x.len();
    let x = DVector::from_column_slice(x);
    let scale = q.amax().max(c.amax()).max(1e-300);
    let g = (q * &x + c) / scale;
    let mut an = a.clone();
    let mut bn = b.clone();
    for r in 0..a.nrows() {
        let s = a.row(r).amax().max(1e-300);
        for j in 0..n {
            an[(r, j)] /= s;
        }
        bn[r] /= s;
    }
    let mut primal: f64 = 0.0;
    for r in 0..an.nrows() {
        primal = primal.max((an.row(r) * &x)[0] - bn[r]).max(bn[r] - (an.row(r) * &x)[0]);
    }
    for i in 0..n {
        primal = primal.max(lower[i] - x[i]).max(x[i] - upper[i]);
    }
    #[derive(Clone, Copy, PartialEq)]
    enum Side {
        Interior,
        AtLower,
        AtUpper,
        Fixed,
    }
    let sides: Vec<Side> = (0..n)
        .map(|i| {
            if upper[i] - lower[i] <= 1e-12 {
                Side::Fixed
            } else if x[i] - lower[i] <= 1e-9 {
                Side::AtLower
            } else if upper[i] - x[i] <= 1e-9 {
                Side::AtUpper
            } else {
                Side::Interior
            }
        })
        .collect();
    let violation = |nu: &DVector<f64>| -> f64 {
        let lam = &g + an.transpose() * nu;
        (0..n)
            .map(|i| match sides[i] {
                Side::Interior => lam[i].abs(),
                Side::AtLower => (-lam[i]).max(0.0),
                Side::AtUpper => lam[i].max(0.0),
                Side::Fixed => 0.0,
            })
            .fold(0.0, f64::max)
    };
    let m = an.nrows();
    let mut nu = DVector::zeros(m);
    if m > 0 {
        let interior: Vec<usize> = (0..n).filter(|&i| sides[i] == Side::Interior).collect();
        let ai = an.select_columns(interior.iter());
        let normal = &ai * ai.transpose();
        let determined = normal.clone().lu().solve(&(-(&ai * g.select_rows(interior.iter()))));
        match determined.filter(|_| interior.len() >= m && normal.determinant().abs() > 1e-10) {
            Some(v) => nu = v,
            None => {
                let bound = 1e3 * (1.0 + g.amax());
                for _sweep in 0..30 {
                    for e in 0..m {
                        let (mut lo, mut hi) = (-bound, bound);
                        for _ in 0..200 {
                            let m1 = lo + (hi - lo) / 3.0;
                            let m2 = hi - (hi - lo) / 3.0;
                            let mut n1 = nu.clone();
                            n1[e] = m1;
                            let mut n2 = nu.clone();
                            n2[e] = m2;
                            if violation(&n1) <= violation(&n2) {
                                hi = m2;
                            } else {
                                lo = m1;
                            }
                        }
                        nu[e] = 0.5 * (lo + hi);
                    }
                }
            }
        }
    }
    primal.max(violation(&nu))
}

/// Move along null vectors of the support columns until at most `rank(P)`
/// weights stay positive; `P g` is unchanged throughout.
pub fn caratheodory(p: &DMatrix<f64>, g: &[f64]) -> Vec<f64> {
    let mut g = g.to_vec();
    loop {
        let support: Vec<usize> = (0..g.len()).filter(|&i| g[i] > 1e-14).collect();
        let ps = p.select_columns(support.iter());
        let svd = ps.clone().svd(false, true);
        let vt = svd.v_t.unwrap();
        let top = svd.singular_values.max();
        let rank = svd.singular_values.iter().filter(|&&s| s > 1e-12 * top).count();
        if support.len() <= rank {
            return g;
        }
        let null = vt.row(vt.nrows() - 1).transpose();
        let null = if null.iter().any(|v| *v > 1e-15) { null } else { -null };
        let step = support
            .iter()
            .zip(null.iter())
            .filter(|(_, &d)| d > 1e-15)
            .map(|(&i, &d)| g[i] / d)
            .fold(f64::INFINITY, f64::min);
        for (&i, &d) in support.iter().zip(null.iter()) {
            g[i] = (g[i] - step * d).max(0.0);
        }
    }
}

pub fn simplex_constraints(n: usize) -> (DMatrix<f64>, DVector<f64>, DVector<f64>, DVector<f64>) {
    (
        DMatrix::from_element(1, n, 1.0),
        DVector::from_element(1, 1.0),
        DVector::zeros(n),
        DVector::from_element(n, 1.0),
    )
}
