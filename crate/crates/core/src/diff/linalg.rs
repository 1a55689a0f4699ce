//! Small dense matrix helpers (row-major, n <= a handful).

/// LU factorization with partial pivoting. Returns the packed factors, the
/// row permutation and its sign, or `None` for an exactly singular matrix.
fn lu(a: &[f64], n: usize) -> Option<(Vec<f64>, Vec<usize>, f64)> {
    let mut m = a.to_vec();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut sign = 1.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[i * n + col].abs().total_cmp(&m[j * n + col].abs()))
            .unwrap_or(col);
        if m[pivot * n + col] == 0.0 {
            return None;
        }
        if pivot != col {
            for c in 0..n {
                m.swap(col * n + c, pivot * n + c);
            }
            perm.swap(col, pivot);
            sign = -sign;
        }
        let d = m[col * n + col];
        for r in col + 1..n {
            let f = m[r * n + col] / d;
            m[r * n + col] = f;
            for c in col + 1..n {
                m[r * n + c] -= f * m[col * n + c];
            }
        }
    }
    Some((m, perm, sign))
}

pub fn det(a: &[f64], n: usize) -> f64 {
    match n {
        0 => 1.0,
        1 => a[0],
        2 => a[0] * a[3] - a[1] * a[2],
        _ => match lu(a, n) {
            None => 0.0,
            Some((m, _, sign)) => (0..n).map(|i| m[i * n + i]).product::<f64>() * sign,
        },
    }
}

/// Solve `a x = b`; `None` if singular.
pub fn solve(a: &[f64], n: usize, b: &[f64]) -> Option<Vec<f64>> {
    let (m, perm, _) = lu(a, n)?;
    let mut x: Vec<f64> = perm.iter().map(|&p| b[p]).collect();
    for r in 0..n {
        for c in 0..r {
            x[r] -= m[r * n + c] * x[c];
        }
    }
    for r in (0..n).rev() {
        for c in r + 1..n {
            x[r] -= m[r * n + c] * x[c];
        }
        x[r] /= m[r * n + r];
    }
    Some(x)
}

/// Inverse of a nonsingular matrix; NaNs if singular.
pub fn inverse(a: &[f64], n: usize) -> Vec<f64> {
    let mut inv = vec![f64::NAN; n * n];
    let Some(_) = lu(a, n) else { return inv };
    for c in 0..n {
        let mut e = vec![0.0; n];
        e[c] = 1.0;
        if let Some(col) = solve(a, n, &e) {
            for r in 0..n {
                inv[r * n + c] = col[r];
            }
        }
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn det_and_inverse_of_3x3() {
        let a = [2.0, -1.0, 0.5, 0.3, 1.5, -2.0, 1.0, 0.0, 3.0];
        // cofactor expansion
        let expected = 2.0 * (1.5 * 3.0 - (-2.0) * 0.0)
            + (0.3 * 3.0 - (-2.0) * 1.0)
            + 0.5 * (0.3 * 0.0 - 1.5 * 1.0);
        assert!((det(&a, 3) - expected).abs() < 1e-12);
        let inv = inverse(&a, 3);
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| a[i * 3 + k] * inv[k * 3 + j]).sum();
                assert!((v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
        assert_eq!(det(&[1.0, 2.0, 2.0, 4.0], 2), 0.0);
    }
}
