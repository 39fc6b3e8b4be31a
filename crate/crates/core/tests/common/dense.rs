//! Naive dense linear algebra for oracle checks.

/// Inverse by Gauss-Jordan elimination with partial pivoting.
pub fn invert(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut aug: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| aug[x][col].abs().total_cmp(&aug[y][col].abs()))
            .unwrap();
        aug.swap(col, pivot);
        let p = aug[col][col];
        assert!(p.abs() > 1e-14, "singular matrix in oracle");
        for v in aug[col].iter_mut() {
            *v /= p;
        }
        let row = aug[col].clone();
        for (r, other) in aug.iter_mut().enumerate() {
            if r != col {
                let f = other[col];
                for (x, y) in other.iter_mut().zip(&row) {
                    *x -= f * y;
                }
            }
        }
    }
    aug.into_iter().map(|r| r[n..].to_vec()).collect()
}

pub fn mat_vec(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    a.iter()
        .map(|r| r.iter().zip(x).map(|(p, q)| p * q).sum())
        .collect()
}

/// Solves `(X^T W X + penalty) beta = X^T W y` with `X = [1 | z]`, where the
/// penalty adds `lambda` to every diagonal entry except the intercept's.
/// Returns `(beta, inverse of the system matrix)`.
pub fn weighted_ridge(
    z: &[Vec<f64>],
    y: &[f64],
    w: &[f64],
    lambda: f64,
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let p = z[0].len() + 1;
    let rows: Vec<Vec<f64>> = z
        .iter()
        .map(|r| std::iter::once(1.0).chain(r.iter().copied()).collect())
        .collect();
    let mut a = vec![vec![0.0; p]; p];
    let mut b = vec![0.0; p];
    for ((row, yi), wi) in rows.iter().zip(y).zip(w) {
        for i in 0..p {
            b[i] += wi * row[i] * yi;
            for j in 0..p {
                a[i][j] += wi * row[i] * row[j];
            }
        }
    }
    for (i, r) in a.iter_mut().enumerate().skip(1) {
        r[i] += lambda;
    }
    let inv = invert(&a);
    (mat_vec(&inv, &b), inv)
}
