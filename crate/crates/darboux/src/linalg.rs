//! Small dense linear algebra.

/// Solve `A x = b` in place by Gaussian elimination with partial pivoting.
///
/// Returns the smallest pivot magnitude seen, or `None` for an exactly singular matrix.
pub fn solve_dense(a: &mut [Vec<f64>], b: &mut [f64]) -> Option<f64> {
    let n = b.len();
    let mut min_pivot = f64::INFINITY;
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col] == 0.0 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        min_pivot = min_pivot.min(a[col][col].abs());
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    for col in (0..n).rev() {
        let mut s = b[col];
        for k in col + 1..n {
            s -= a[col][k] * b[k];
        }
        b[col] = s / a[col][col];
    }
    Some(min_pivot)
}

/// Least squares via normal equations; returns solution and a pivot-ratio condition estimate.
pub fn least_squares(rows: &[Vec<f64>], rhs: &[f64]) -> Option<(Vec<f64>, f64)> {
    let n = rows.first()?.len();
    let mut ata = vec![vec![0.0; n]; n];
    let mut atb = vec![0.0; n];
    for (r, &y) in rows.iter().zip(rhs) {
        for i in 0..n {
            atb[i] += r[i] * y;
            for j in 0..n {
                ata[i][j] += r[i] * r[j];
            }
        }
    }
    let max_diag = (0..n).map(|i| ata[i][i].abs()).fold(0.0, f64::max);
    let min_piv = solve_dense(&mut ata, &mut atb)?;
    Some((atb, max_diag / min_piv))
}
