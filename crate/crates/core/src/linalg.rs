//! Small dense symmetric solvers used by the active-set lasso steps.
//!
//! Matrices are square, row-major, and small (order = active-set size), so
//! plain loops are used throughout.

use crate::scalar::Scalar;

/// Cholesky solve; `None` when a pivot is not safely positive.
pub(crate) fn cholesky_solve<T: Scalar>(a: &[T], n: usize, b: &[T]) -> Option<Vec<T>> {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(b.len(), n);
    let max_diag = (0..n).map(|i| a[i * n + i].abs()).fold(T::zero(), T::max);
    let floor = max_diag * T::epsilon() * T::of(16.0 * n.max(1) as f64);

    let mut l = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > floor) {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }

    let mut y = vec![T::zero(); n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    let mut x = vec![T::zero(); n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    Some(x)
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns `(eigenvalues, vectors)` with eigenvector `k` stored in column `k`
/// of the row-major `vectors` matrix.
pub(crate) fn symmetric_eigen<T: Scalar>(a: &[T], n: usize) -> (Vec<T>, Vec<T>) {
    let mut m = a.to_vec();
    let mut v = vec![T::zero(); n * n];
    for i in 0..n {
        v[i * n + i] = T::one();
    }
    let scale = m.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt();
    let threshold = scale * T::epsilon();

    for _sweep in 0..100 {
        let mut off = T::zero();
        for p in 0..n {
            for q in p + 1..n {
                off += m[p * n + q] * m[p * n + q];
            }
        }
        if off.sqrt() <= threshold {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == T::zero() {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (T::of(2.0) * apq);
                let t = if theta == T::zero() {
                    T::one()
                } else {
                    crate::scalar::signum(theta) / (theta.abs() + (theta * theta + T::one()).sqrt())
                };
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let values = (0..n).map(|i| m[i * n + i]).collect();
    (values, v)
}

/// Minimum-norm solution of `a x = b` through the pseudo-inverse.
pub(crate) fn min_norm_solve<T: Scalar>(a: &[T], n: usize, b: &[T]) -> Vec<T> {
    let (values, vectors) = symmetric_eigen(a, n);
    let largest = values.iter().fold(T::zero(), |acc, &x| acc.max(x.abs()));
    let cutoff = largest * T::epsilon() * T::of(64.0 * n.max(1) as f64);
    let mut x = vec![T::zero(); n];
    for k in 0..n {
        if values[k].abs() <= cutoff {
            continue;
        }
        let mut proj = T::zero();
        for i in 0..n {
            proj += vectors[i * n + k] * b[i];
        }
        let coef = proj / values[k];
        for i in 0..n {
            x[i] += coef * vectors[i * n + k];
        }
    }
    x
}
