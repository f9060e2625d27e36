//! Ridge-regressed linear leaf models.

use alloc::vec;
use alloc::vec::Vec;

use super::TrainingSet;
use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_solve_rows, dot, dot_f32, largest_eigenvalue, smallest_eigenvalue};

/// How the ridge penalty of a leaf is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaPolicy {
    Fixed(f64),
    /// Start unregularized and raise lambda until the regularized Gram
    /// matrix has a condition number of at most `max_condition`.
    Auto { max_condition: f64 },
}

impl Default for LambdaPolicy {
    fn default() -> Self {
        LambdaPolicy::Auto { max_condition: 1e8 }
    }
}

const MAX_ESCALATIONS: usize = 64;

/// `W` maps a reduced LR descriptor to a residual patch: `h = W l`.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafModel {
    /// `d_h x d_l`, row-major.
    pub w: Vec<f32>,
    pub lambda: f64,
    pub n_samples: usize,
}

impl LeafModel {
    pub fn zeros(d_h: usize, d_l: usize) -> Self {
        Self {
            w: vec![0.0; d_h * d_l],
            lambda: 0.0,
            n_samples: 0,
        }
    }

    /// `out = W x`, accumulated in f64.
    #[inline]
    pub fn apply(&self, x: &[f32], out: &mut [f32]) {
        for (o, row) in out.iter_mut().zip(self.w.chunks_exact(x.len())) {
            *o = dot_f32(row, x) as f32;
        }
    }
}

/// Solves `W^T = (X_L^T X_L + lambda I)^-1 X_L^T X_H` over the samples `idx`
/// (samples as columns of `X_L`, `X_H`).
pub fn fit_leaf(ts: &TrainingSet, idx: &[usize], policy: LambdaPolicy) -> Result<LeafModel> {
    if idx.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let d_l = ts.d_l();
    let d_h = ts.d_h();
    let n = idx.len();

    // transposed copies so every Gram entry is a contiguous dot product
    let mut lt = vec![0.0f64; d_l * n];
    let mut ht = vec![0.0f64; d_h * n];
    for (c, &s) in idx.iter().enumerate() {
        for (i, &v) in ts.x_l(s).iter().enumerate() {
            lt[i * n + c] = v as f64;
        }
        for (i, &v) in ts.x_h(s).iter().enumerate() {
            ht[i * n + c] = v as f64;
        }
    }
    let mut gram = vec![0.0f64; d_l * d_l];
    for i in 0..d_l {
        let a = &lt[i * n..(i + 1) * n];
        for j in i..d_l {
            let g = dot(a, &lt[j * n..(j + 1) * n]);
            gram[i * d_l + j] = g;
            gram[j * d_l + i] = g;
        }
    }
    // rhs[j] = X_L^T column j of X_H^T, i.e. one system per output component
    let mut rhs = vec![0.0f64; d_h * d_l];
    for j in 0..d_h {
        let h = &ht[j * n..(j + 1) * n];
        for i in 0..d_l {
            rhs[j * d_l + i] = dot(&lt[i * n..(i + 1) * n], h);
        }
    }
    solve_ridge(&gram, &rhs, d_l, n, policy)
}

fn solve_ridge(
    gram: &[f64],
    rhs: &[f64],
    d_l: usize,
    n: usize,
    policy: LambdaPolicy,
) -> Result<LeafModel> {
    let trace: f64 = (0..d_l).map(|i| gram[i * d_l + i]).sum();
    let mut floor = 1e-6 * trace / d_l.max(1) as f64;
    if !(floor > 0.0) || !floor.is_finite() {
        floor = 1e-6;
    }
    let shifted = |lambda: f64| {
        let mut a = gram.to_vec();
        for i in 0..d_l {
            a[i * d_l + i] += lambda;
        }
        cholesky(&a, d_l)
    };
    let solve = |l: &[f64], lambda: f64| -> Option<LeafModel> {
        let mut x = rhs.to_vec();
        cholesky_solve_rows(l, d_l, &mut x);
        let w: Vec<f32> = x.iter().map(|&v| v as f32).collect();
        w.iter().all(|v| v.is_finite()).then_some(LeafModel {
            w,
            lambda,
            n_samples: n,
        })
    };

    let max_condition = match policy {
        LambdaPolicy::Fixed(l) => {
            if !(l >= 0.0) || !l.is_finite() {
                return Err(Error::SingularSystem { lambda: l });
            }
            return shifted(l)
                .and_then(|f| solve(&f, l))
                .ok_or(Error::SingularSystem { lambda: l });
        }
        LambdaPolicy::Auto { max_condition } => max_condition,
    };

    // The penalty runs through 0, floor, 10 floor, ... and stops at the first
    // value whose regularized Gram matrix is well conditioned. The extreme
    // eigenvalues of G + lambda I are those of G shifted by lambda, so G's
    // are estimated once.
    let top = largest_eigenvalue(gram, d_l);
    let bottom = match shifted(0.0) {
        Some(l) => {
            let bottom = smallest_eigenvalue(&l, d_l);
            if top <= max_condition * bottom {
                if let Some(leaf) = solve(&l, 0.0) {
                    return Ok(leaf);
                }
            }
            bottom
        }
        None => shifted(floor).map_or(0.0, |l| (smallest_eigenvalue(&l, d_l) - floor).max(0.0)),
    };
    let mut lambda = floor;
    for _ in 0..MAX_ESCALATIONS {
        if top + lambda <= max_condition * (bottom + lambda) {
            if let Some(leaf) = shifted(lambda).and_then(|l| solve(&l, lambda)) {
                return Ok(leaf);
            }
        }
        lambda *= 10.0;
    }
    Err(Error::SingularSystem { lambda })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_inputs_interpolate_exactly() {
        let d = 4;
        let mut xl = vec![0.0f32; d * d];
        let mut xh = vec![0.0f32; d * d];
        for i in 0..d {
            xl[i * d + i] = 1.0;
            xh[i * d + i] = 2.0;
        }
        let ts = TrainingSet::new(d, d, xl, xh).unwrap();
        let idx: Vec<usize> = (0..d).collect();
        let leaf = fit_leaf(&ts, &idx, LambdaPolicy::Fixed(0.0)).unwrap();
        for r in 0..d {
            for c in 0..d {
                assert_eq!(leaf.w[r * d + c], if r == c { 2.0 } else { 0.0 });
            }
        }
        // auto policy keeps lambda at 0 for a perfectly conditioned system
        assert_eq!(fit_leaf(&ts, &idx, LambdaPolicy::default()).unwrap().lambda, 0.0);
    }

    #[test]
    fn huge_lambda_shrinks_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ts = TrainingSet::new(
            3,
            2,
            (0..30).map(|_| rng.gen()).collect(),
            (0..20).map(|_| rng.gen()).collect(),
        )
        .unwrap();
        let idx: Vec<usize> = (0..10).collect();
        let leaf = fit_leaf(&ts, &idx, LambdaPolicy::Fixed(1e12)).unwrap();
        assert!(leaf.w.iter().all(|w| w.abs() < 1e-9));
    }

    #[test]
    fn auto_policy_regularizes_rank_deficient_leaves() {
        // 3 samples in 6 dimensions: Gram is singular
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ts = TrainingSet::new(
            6,
            2,
            (0..18).map(|_| rng.gen()).collect(),
            (0..6).map(|_| rng.gen()).collect(),
        )
        .unwrap();
        let leaf = fit_leaf(&ts, &[0, 1, 2], LambdaPolicy::default()).unwrap();
        assert!(leaf.lambda > 0.0);
        assert!(leaf.w.iter().all(|w| w.is_finite()));
        assert!(fit_leaf(&ts, &[0, 1, 2], LambdaPolicy::Fixed(0.0)).is_err());
    }

    #[test]
    fn apply_is_matrix_vector_product() {
        let leaf = LeafModel {
            w: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            lambda: 0.0,
            n_samples: 1,
        };
        let mut out = [0.0f32; 2];
        leaf.apply(&[1.0, 0.5, -1.0], &mut out);
        assert_eq!(out, [1.0 + 1.0 - 3.0, 4.0 + 2.5 - 6.0]);
    }
}
