//! Small dense row-major matrix routines, generic over [`Scalar`] so the
//! same factorization runs on plain floats and on the differentiation tape.

use crate::autodiff::Scalar;

/// Relative pivot floor for accepting a matrix as positive definite.
pub const PIVOT_RATIO: f64 = 1e-12;

/// Lower Cholesky factor of the symmetric `n×n` matrix `a`.
///
/// Returns `None` when a pivot is non-positive or the smallest pivot falls
/// below [`PIVOT_RATIO`] times the largest.
pub fn cholesky<T: Scalar>(a: &[T], n: usize) -> Option<Vec<T>> {
    debug_assert_eq!(a.len(), n * n);
    let mut l: Vec<T> = a.iter().map(|&x| x * 0.0).collect();
    let mut pivots = Vec::with_capacity(n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            if j > 0 {
                let prods: Vec<T> = (0..j).map(|m| l[i * n + m] * l[j * n + m]).collect();
                s = s - T::sum(&prods);
            }
            if i == j {
                let d = s.value();
                if !(d > 0.0) || !d.is_finite() {
                    return None;
                }
                pivots.push(d);
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let max = pivots.iter().copied().fold(0.0, f64::max);
    let min = pivots.iter().copied().fold(f64::INFINITY, f64::min);
    (min > PIVOT_RATIO * max).then_some(l)
}

/// Solves `L z = b` for lower-triangular `L` given the reciprocal diagonal.
pub fn forward_solve<T: Scalar>(l: &[T], inv_diag: &[T], b: &[T], n: usize) -> Vec<T> {
    let mut z: Vec<T> = Vec::with_capacity(n);
    for i in 0..n {
        let mut s = b[i];
        if i > 0 {
            let prods: Vec<T> = (0..i).map(|m| l[i * n + m] * z[m]).collect();
            s = s - T::sum(&prods);
        }
        z.push(s * inv_diag[i]);
    }
    z
}

/// `V Vᵀ` for a square row-major `V`.
pub fn gram<T: Scalar>(v: &[T], n: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(n * n);
    for a in 0..n {
        for b in 0..n {
            let prods: Vec<T> = (0..n).map(|m| v[a * n + m] * v[b * n + m]).collect();
            out.push(T::sum(&prods));
        }
    }
    out
}

/// Determinant by Gaussian elimination with partial pivoting.
pub fn determinant(a: &[f64], n: usize) -> f64 {
    let mut m = a.to_vec();
    let mut det = 1.0;
    for c in 0..n {
        let pivot = (c..n)
            .max_by(|&x, &y| m[x * n + c].abs().total_cmp(&m[y * n + c].abs()))
            .unwrap_or(c);
        if m[pivot * n + c] == 0.0 {
            return 0.0;
        }
        if pivot != c {
            for j in 0..n {
                m.swap(c * n + j, pivot * n + j);
            }
            det = -det;
        }
        let d = m[c * n + c];
        det *= d;
        for r in (c + 1)..n {
            let f = m[r * n + c] / d;
            for j in c..n {
                m[r * n + j] -= f * m[c * n + j];
            }
        }
    }
    det
}

/// Largest absolute asymmetry `|a_ij − a_ji|`.
pub fn asymmetry(a: &[f64], n: usize) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..i {
            worst = worst.max((a[i * n + j] - a[j * n + i]).abs());
        }
    }
    worst
}

pub fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}
