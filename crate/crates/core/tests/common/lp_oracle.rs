//! Dense two-phase tableau simplex over the transport polytope.
//!
//! Deliberately naive: every constraint is written out explicitly and
//! pivoting uses Bland's rule. Shares no code with the library solver.

const EPS: f64 = 1e-13;

/// Minimum of `sum c_ij x_ij` subject to row sums `a`, column sums `b`,
/// `x >= 0`. `cost` is row-major `m x n`.
pub fn transport_lp(a: &[f64], b: &[f64], cost: &[f64]) -> f64 {
    let m = a.len();
    let n = b.len();
    let sa: f64 = a.iter().sum();
    let sb: f64 = b.iter().sum();
    let b: Vec<f64> = b.iter().map(|v| v * sa / sb).collect();

    let nvars = m * n;
    // rows: m supply constraints + (n - 1) demand constraints (the last is implied)
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    for i in 0..m {
        let mut r = vec![0.0; nvars];
        for j in 0..n {
            r[i * n + j] = 1.0;
        }
        rows.push((r, a[i]));
    }
    for j in 0..n.saturating_sub(1) {
        let mut r = vec![0.0; nvars];
        for i in 0..m {
            r[i * n + j] = 1.0;
        }
        rows.push((r, b[j]));
    }
    let nrows = rows.len();
    let total = nvars + nrows; // structural + artificial
                               // tableau rows: coefficients over `total` columns, rhs last
    let mut t: Vec<Vec<f64>> = rows
        .into_iter()
        .enumerate()
        .map(|(k, (mut r, rhs))| {
            r.resize(total, 0.0);
            r[nvars + k] = 1.0;
            r.push(rhs);
            r
        })
        .collect();
    let mut basis: Vec<usize> = (0..nrows).map(|k| nvars + k).collect();

    // phase 1: minimize the sum of artificials
    let mut c1 = vec![0.0; total];
    for k in 0..nrows {
        c1[nvars + k] = 1.0;
    }
    run(&mut t, &mut basis, &c1, total);

    // drive remaining artificials out of the basis where possible
    for k in 0..nrows {
        if basis[k] >= nvars {
            if let Some(col) = (0..nvars).find(|&c| t[k][c].abs() > 1e-9) {
                pivot(&mut t, &mut basis, k, col);
            }
        }
    }

    // phase 2: artificials may not re-enter
    let mut c2 = vec![0.0; total];
    c2[..nvars].copy_from_slice(cost);
    run(&mut t, &mut basis, &c2, nvars);

    let mut value = 0.0;
    for (k, &var) in basis.iter().enumerate() {
        if var < nvars {
            value += cost[var] * t[k][total];
        }
    }
    value
}

fn run(t: &mut [Vec<f64>], basis: &mut [usize], cost: &[f64], allowed: usize) {
    let width = t[0].len() - 1;
    for _ in 0..100_000 {
        // reduced costs
        let mut entering = None;
        for col in 0..allowed {
            if basis.contains(&col) {
                continue;
            }
            let mut r = cost[col];
            for (k, &var) in basis.iter().enumerate() {
                r -= cost[var] * t[k][col];
            }
            if r < -EPS {
                entering = Some(col);
                break; // Bland: lowest index
            }
        }
        let Some(col) = entering else { return };
        let mut leave: Option<(usize, f64)> = None;
        for k in 0..t.len() {
            if t[k][col] > EPS {
                let ratio = t[k][width] / t[k][col];
                match leave {
                    None => leave = Some((k, ratio)),
                    Some((lk, lr)) => {
                        if ratio < lr - EPS || (ratio <= lr + EPS && basis[k] < basis[lk]) {
                            leave = Some((k, ratio));
                        }
                    }
                }
            }
        }
        let (row, _) = leave.expect("transport LP is bounded");
        pivot(t, basis, row, col);
    }
    panic!("oracle simplex did not terminate");
}

fn pivot(t: &mut [Vec<f64>], basis: &mut [usize], row: usize, col: usize) {
    let p = t[row][col];
    for v in t[row].iter_mut() {
        *v /= p;
    }
    let pivot_row = t[row].clone();
    for (k, r) in t.iter_mut().enumerate() {
        if k != row {
            let f = r[col];
            if f != 0.0 {
                for (x, y) in r.iter_mut().zip(&pivot_row) {
                    *x -= f * y;
                }
            }
        }
    }
    basis[row] = col;
}

/// Euclidean ground cost raised to `p`, row-major.
pub fn ground_cost(xs: &[Vec<f64>], ys: &[Vec<f64>], p: i32) -> Vec<f64> {
    let mut c = Vec::with_capacity(xs.len() * ys.len());
    for x in xs {
        for y in ys {
            let d: f64 = x
                .iter()
                .zip(y)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            c.push(d.powi(p));
        }
    }
    c
}
