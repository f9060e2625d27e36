//! Small dense symmetric linear algebra on row-major `f64` buffers.

use alloc::vec;
use alloc::vec::Vec;

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and the matching unit
/// eigenvectors as the rows of an `n x n` row-major matrix.
pub fn symmetric_eigen(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(a.len(), n * n);
    let mut m = a.to_vec();
    // v holds eigenvectors as columns while iterating
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let frob: f64 = m.iter().map(|x| x * x).sum();
    let tol = 1e-30 * frob.max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += m[p * n + q] * m[p * n + q];
            }
        }
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + libm::sqrt(theta * theta + 1.0));
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / libm::sqrt(t * t + 1.0);
                let s = t * c;

                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
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

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j * n + j].total_cmp(&m[i * n + i]));
    let values = order.iter().map(|&i| m[i * n + i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (row, &col) in order.iter().enumerate() {
        for k in 0..n {
            vectors[row * n + k] = v[k * n + col];
        }
    }
    (values, vectors)
}

const LANES: usize = 8;

/// Dot product with a fixed 8-way split of the accumulation, so results do
/// not depend on how the compiler vectorizes it.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    dot_by(a, b, |x| x, |y| y)
}

/// `sum a_i b_i` of `f32` inputs, accumulated in `f64`.
#[inline]
pub fn dot_f32(a: &[f32], b: &[f32]) -> f64 {
    dot_by(a, b, |x| x as f64, |y| y as f64)
}

#[inline]
pub fn dot_f32_f64(a: &[f32], b: &[f64]) -> f64 {
    dot_by(a, b, |x| x as f64, |y| y)
}

#[inline(always)]
fn dot_by<A: Copy, B: Copy>(a: &[A], b: &[B], fa: impl Fn(A) -> f64, fb: impl Fn(B) -> f64) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; LANES];
    let mut ca = a.chunks_exact(LANES);
    let mut cb = b.chunks_exact(LANES);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..LANES {
            acc[l] += fa(x[l]) * fb(y[l]);
        }
    }
    let mut tail = 0.0;
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += fa(x) * fb(y);
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// Lower Cholesky factor of a symmetric positive-definite matrix, or `None`
/// when a pivot is not strictly positive.
pub fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let row_j = &l[j * n..j * n + j];
        let d = a[j * n + j] - dot(row_j, row_j);
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let djj = libm::sqrt(d);
        l[j * n + j] = djj;
        for i in j + 1..n {
            let s = a[i * n + j] - dot(&l[i * n..i * n + j], &l[j * n..j * n + j]);
            l[i * n + j] = s / djj;
        }
    }
    Some(l)
}

/// Solves `L L^T x = b` in place for one right-hand side.
pub fn cholesky_solve(l: &[f64], n: usize, b: &mut [f64]) {
    let lt = transpose(l, n);
    solve_with(l, &lt, n, b);
}

/// Solves `L L^T x = b` for each length-`n` row of `rhs`, in place.
pub fn cholesky_solve_rows(l: &[f64], n: usize, rhs: &mut [f64]) {
    let lt = transpose(l, n);
    for b in rhs.chunks_exact_mut(n) {
        solve_with(l, &lt, n, b);
    }
}

fn transpose(a: &[f64], n: usize) -> Vec<f64> {
    let mut t = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            t[j * n + i] = a[i * n + j];
        }
    }
    t
}

fn solve_with(l: &[f64], lt: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        b[i] = (b[i] - dot(&l[i * n..i * n + i], &b[..i])) / l[i * n + i];
    }
    for i in (0..n).rev() {
        b[i] = (b[i] - dot(&lt[i * n + i + 1..(i + 1) * n], &b[i + 1..])) / l[i * n + i];
    }
}

const POWER_ITERS: usize = 60;

fn start_vector(n: usize) -> Vec<f64> {
    let mut x: Vec<f64> = (0..n).map(|i| 1.0 + (i % 7) as f64 * 0.1).collect();
    normalize(&mut x);
    x
}

/// Largest eigenvalue of the symmetric positive semi-definite `a`, by power
/// iteration.
pub fn largest_eigenvalue(a: &[f64], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let mut x = start_vector(n);
    let mut y = vec![0.0; n];
    let mut lambda = 0.0;
    for _ in 0..POWER_ITERS {
        for (i, o) in y.iter_mut().enumerate() {
            *o = dot(&a[i * n..(i + 1) * n], &x);
        }
        let norm = normalize(&mut y);
        let converged = (norm - lambda).abs() <= 1e-6 * norm;
        lambda = norm;
        core::mem::swap(&mut x, &mut y);
        if converged {
            break;
        }
    }
    lambda
}

/// Smallest eigenvalue of `L L^T` by inverse iteration through the factor.
pub fn smallest_eigenvalue(l: &[f64], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let lt = transpose(l, n);
    let mut x = start_vector(n);
    let mut inv = 0.0;
    for _ in 0..POWER_ITERS {
        solve_with(l, &lt, n, &mut x);
        let norm = normalize(&mut x);
        if !norm.is_finite() {
            return 0.0;
        }
        let converged = (norm - inv).abs() <= 1e-6 * norm;
        inv = norm;
        if converged {
            break;
        }
    }
    1.0 / inv
}

/// Estimate of the spectral condition number of the SPD matrix `a` given
/// its Cholesky factor `l`.
pub fn condition_estimate(a: &[f64], l: &[f64], n: usize) -> f64 {
    if n == 0 {
        return 1.0;
    }
    largest_eigenvalue(a, n) / smallest_eigenvalue(l, n)
}

fn normalize(x: &mut [f64]) -> f64 {
    let norm = libm::sqrt(x.iter().map(|v| v * v).sum::<f64>());
    if norm > 0.0 {
        x.iter_mut().for_each(|v| *v /= norm);
    }
    norm
}
