//! Pair-difference split functions and the joint-domain split quality.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{ForestConfig, TrainingSet};
use crate::error::{Error, Result};

/// Sends `x` left when `x[phi1] - x[phi2] < tau`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitParams {
    pub phi1: usize,
    pub phi2: usize,
    pub tau: f32,
}

impl SplitParams {
    #[inline]
    pub fn goes_left(&self, x: &[f32]) -> bool {
        x[self.phi1] - x[self.phi2] < self.tau
    }
}

/// 1 (left) iff `x[phi1] - x[phi2] < tau`, else 0 (right).
pub fn split_eval(x: &[f32], theta: &SplitParams) -> Result<u8> {
    for index in [theta.phi1, theta.phi2] {
        if index >= x.len() {
            return Err(Error::FeatureIndex {
                index,
                dim: x.len(),
            });
        }
    }
    Ok(theta.goes_left(x) as u8)
}

/// Mean squared deviation over both domains of the samples `idx`:
/// `(1/N) sum(|h - mean_h|^2 + kappa |l - mean_l|^2)`. Empty sets give 0.
pub fn domain_variance(ts: &TrainingSet, idx: &[usize], kappa: f64) -> f64 {
    if idx.is_empty() {
        return 0.0;
    }
    let n = idx.len() as f64;
    let spread = |dim: usize, hr: bool| -> f64 {
        let row = |s: usize| if hr { ts.x_h(s) } else { ts.x_l(s) };
        let mut mean = vec![0.0f64; dim];
        for &s in idx {
            for (m, &v) in mean.iter_mut().zip(row(s)) {
                *m += v as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut acc = 0.0;
        for &s in idx {
            for (m, &v) in mean.iter().zip(row(s)) {
                let d = v as f64 - m;
                acc += d * d;
            }
        }
        acc
    };
    let h = spread(ts.d_h(), true);
    let l = spread(ts.d_l(), false);
    (h + kappa * l) / n
}

/// `sum_{left,right} N_i E_i` for splitting `idx` by `theta`, or `None`
/// when a child would be empty.
pub fn split_quality(ts: &TrainingSet, idx: &[usize], theta: &SplitParams, kappa: f64) -> Option<f64> {
    let (left, right): (Vec<usize>, Vec<usize>) =
        idx.iter().partition(|&&s| theta.goes_left(ts.x_l(s)));
    if left.is_empty() || right.is_empty() {
        return None;
    }
    Some(
        left.len() as f64 * domain_variance(ts, &left, kappa)
            + right.len() as f64 * domain_variance(ts, &right, kappa),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitChoice {
    pub params: SplitParams,
    /// Quality on the evaluation subsample.
    pub quality: f64,
    /// `N E` of the evaluation subsample before splitting.
    pub parent_quality: f64,
}

/// Random candidate search on a subsample of `node`.
///
/// Candidates are generated pair by pair (`n_pairs` feature pairs, each with
/// `n_thresh` thresholds drawn from the subsample's sorted differences) and
/// scored on the subsample; the lowest score whose split of the whole node
/// leaves at least `min_leaf_samples` on each side wins, earlier candidates
/// winning ties.
pub fn find_split<R: Rng + ?Sized>(
    ts: &TrainingSet,
    node: &[usize],
    rng: &mut R,
    cfg: &ForestConfig,
) -> Option<SplitChoice> {
    let n = node.len();
    let d_l = ts.d_l();
    let d_h = ts.d_h();
    if d_l < 2 || n < 2 {
        return None;
    }

    let sub: Vec<usize> = if cfg.node_subsample >= n {
        node.to_vec()
    } else {
        let mut pool = node.to_vec();
        for i in 0..cfg.node_subsample {
            let j = rng.gen_range(i..n);
            pool.swap(i, j);
        }
        pool.truncate(cfg.node_subsample);
        pool
    };
    let m = sub.len();

    // Joint vectors z = (h, sqrt(kappa) l), centered on the subsample mean,
    // so that N E = sum |z|^2 - |sum z|^2 / N.
    let dz = d_h + d_l;
    let wl = libm::sqrt(cfg.kappa);
    let mut z = vec![0.0f64; m * dz];
    for (r, &s) in sub.iter().enumerate() {
        let row = &mut z[r * dz..(r + 1) * dz];
        for (o, &v) in row[..d_h].iter_mut().zip(ts.x_h(s)) {
            *o = v as f64;
        }
        for (o, &v) in row[d_h..].iter_mut().zip(ts.x_l(s)) {
            *o = wl * v as f64;
        }
    }
    let mut mean = vec![0.0f64; dz];
    for row in z.chunks_exact(dz) {
        for (a, &v) in mean.iter_mut().zip(row) {
            *a += v;
        }
    }
    mean.iter_mut().for_each(|a| *a /= m as f64);
    let mut sq = vec![0.0f64; m];
    for (row, q) in z.chunks_exact_mut(dz).zip(sq.iter_mut()) {
        let mut acc = 0.0;
        for (v, &mu) in row.iter_mut().zip(&mean) {
            *v -= mu;
            acc += *v * *v;
        }
        *q = acc;
    }
    let total_sq: f64 = sq.iter().sum();
    // centered, so the total sum vector is ~0; keep it exact anyway
    let mut total_sum = vec![0.0f64; dz];
    for row in z.chunks_exact(dz) {
        for (a, &v) in total_sum.iter_mut().zip(row) {
            *a += v;
        }
    }
    let parent_quality = total_sq - norm_sq(&total_sum) / m as f64;

    let mut candidates: Vec<(SplitParams, f64, usize)> = Vec::new();
    let mut diffs: Vec<(f32, usize)> = Vec::with_capacity(m);
    let mut left_sum = vec![0.0f64; dz];
    let mut plan: Vec<(usize, usize)> = Vec::with_capacity(cfg.n_thresh);
    let mut thresholds: Vec<(f32, usize)> = Vec::with_capacity(cfg.n_thresh);
    for _ in 0..cfg.n_pairs {
        let phi1 = rng.gen_range(0..d_l);
        let mut phi2 = rng.gen_range(0..d_l - 1);
        if phi2 >= phi1 {
            phi2 += 1;
        }
        diffs.clear();
        diffs.extend(sub.iter().enumerate().map(|(r, &s)| {
            let x = ts.x_l(s);
            (x[phi1] - x[phi2], r)
        }));
        diffs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        thresholds.clear();
        for _ in 0..cfg.n_thresh {
            let rank = rng.gen_range(1..m);
            let tau = diffs[rank].0;
            let n_left = diffs.partition_point(|d| d.0 < tau);
            thresholds.push((tau, n_left));
        }

        // sweep the sorted samples once, visiting threshold counts in order
        plan.clear();
        plan.extend(thresholds.iter().enumerate().map(|(t, &(_, c))| (c, t)));
        plan.sort_unstable();
        let base = candidates.len();
        for &(tau, _) in &thresholds {
            candidates.push((SplitParams { phi1, phi2, tau }, f64::INFINITY, 0));
        }
        left_sum.iter_mut().for_each(|a| *a = 0.0);
        let mut left_sq = 0.0;
        let mut pos = 0;
        for &(count, t) in &plan {
            while pos < count {
                let r = diffs[pos].1;
                let row = &z[r * dz..(r + 1) * dz];
                for (a, &v) in left_sum.iter_mut().zip(row) {
                    *a += v;
                }
                left_sq += sq[r];
                pos += 1;
            }
            if count == 0 || count == m {
                continue;
            }
            let nl = count as f64;
            let nr = (m - count) as f64;
            let mut right_norm = 0.0;
            for (&tot, &l) in total_sum.iter().zip(&left_sum) {
                let d = tot - l;
                right_norm += d * d;
            }
            let q_left = left_sq - norm_sq(&left_sum) / nl;
            let q_right = (total_sq - left_sq) - right_norm / nr;
            candidates[base + t].1 = q_left.max(0.0) + q_right.max(0.0);
            candidates[base + t].2 = count;
        }
    }

    let mut order: Vec<usize> = (0..candidates.len())
        .filter(|&c| candidates[c].1.is_finite())
        .collect();
    order.sort_by(|&a, &b| candidates[a].1.total_cmp(&candidates[b].1).then(a.cmp(&b)));
    for c in order {
        let (params, quality, sub_left) = candidates[c];
        let n_left = if m == n {
            sub_left
        } else {
            node.iter().filter(|&&s| params.goes_left(ts.x_l(s))).count()
        };
        if n_left >= cfg.min_leaf_samples && n - n_left >= cfg.min_leaf_samples {
            return Some(SplitChoice {
                params,
                quality,
                parent_quality,
            });
        }
    }
    None
}

#[inline]
fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}
