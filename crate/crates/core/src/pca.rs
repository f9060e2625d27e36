//! Principal component reduction of raw patch descriptors.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{dot_f32_f64, symmetric_eigen};

pub const DEFAULT_VARIANCE_TARGET: f64 = 0.999;

/// Centering mean, per-dimension scale and orthonormal projection onto the
/// leading components: `x = P ((raw - mean) * scale)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    mean: Vec<f32>,
    scale: Vec<f32>,
    /// `k x d_raw`, row-major; row `j` is component `j`.
    projection: Vec<f32>,
    d_raw: usize,
    k: usize,
    retained_variance: f64,
}

impl PcaModel {
    pub fn from_parts(
        mean: Vec<f32>,
        projection: Vec<f32>,
        k: usize,
        retained_variance: f64,
    ) -> Result<Self> {
        let d_raw = mean.len();
        if k == 0 || k > d_raw {
            return Err(Error::InvalidParam(format!(
                "pca keeps {k} of {d_raw} dimensions"
            )));
        }
        if projection.len() != k * d_raw {
            return Err(Error::DimMismatch {
                what: "pca projection",
                expected: k * d_raw,
                actual: projection.len(),
            });
        }
        if !(retained_variance > 0.0 && retained_variance <= 1.0 + 1e-12) {
            return Err(Error::InvalidParam(format!(
                "retained variance {retained_variance} outside (0, 1]"
            )));
        }
        Ok(Self {
            scale: vec![1.0; d_raw],
            mean,
            projection,
            d_raw,
            k,
            retained_variance,
        })
    }

    /// Zero mean, identity projection.
    pub fn identity(d: usize) -> Self {
        let mut projection = vec![0.0; d * d];
        for i in 0..d {
            projection[i * d + i] = 1.0;
        }
        Self {
            mean: vec![0.0; d],
            scale: vec![1.0; d],
            projection,
            d_raw: d,
            k: d,
            retained_variance: 1.0,
        }
    }

    /// Replaces the input scale (all ones by default).
    pub fn with_scale(mut self, scale: Vec<f32>) -> Result<Self> {
        if scale.len() != self.d_raw {
            return Err(Error::DimMismatch {
                what: "pca scale",
                expected: self.d_raw,
                actual: scale.len(),
            });
        }
        if scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidParam("pca scale must be finite and positive".into()));
        }
        self.scale = scale;
        Ok(self)
    }

    pub fn mean(&self) -> &[f32] {
        &self.mean
    }

    pub fn scale(&self) -> &[f32] {
        &self.scale
    }

    pub fn projection(&self) -> &[f32] {
        &self.projection
    }

    pub fn input_dim(&self) -> usize {
        self.d_raw
    }

    pub fn output_dim(&self) -> usize {
        self.k
    }

    pub fn retained_variance(&self) -> f64 {
        self.retained_variance
    }

    /// `out = P ((raw - mean) * scale)`.
    pub fn project_into(&self, raw: &[f32], out: &mut [f32]) -> Result<()> {
        if raw.len() != self.d_raw {
            return Err(Error::DimMismatch {
                what: "pca input",
                expected: self.d_raw,
                actual: raw.len(),
            });
        }
        if out.len() != self.k {
            return Err(Error::DimMismatch {
                what: "pca output",
                expected: self.k,
                actual: out.len(),
            });
        }
        let centered: Vec<f64> = raw
            .iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((&x, &m), &s)| (x as f64 - m as f64) * s as f64)
            .collect();
        for (o, row) in out.iter_mut().zip(self.projection.chunks_exact(self.d_raw)) {
            *o = dot_f32_f64(row, &centered) as f32;
        }
        Ok(())
    }

    pub fn project(&self, raw: &[f32]) -> Result<Vec<f32>> {
        let mut out = vec![0.0; self.k];
        self.project_into(raw, &mut out)?;
        Ok(out)
    }

    /// `mean + (P^T y) / scale`.
    pub fn back_project(&self, reduced: &[f32]) -> Result<Vec<f32>> {
        if reduced.len() != self.k {
            return Err(Error::DimMismatch {
                what: "pca reduced vector",
                expected: self.k,
                actual: reduced.len(),
            });
        }
        let mut out = vec![0.0f64; self.d_raw];
        for (j, &y) in reduced.iter().enumerate() {
            let row = &self.projection[j * self.d_raw..(j + 1) * self.d_raw];
            for (o, &p) in out.iter_mut().zip(row) {
                *o += p as f64 * y as f64;
            }
        }
        Ok(out
            .into_iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (&m, &s))| (m as f64 + v / s as f64) as f32)
            .collect())
    }
}

const BLOCK: usize = 256;

/// Streaming sample covariance. Samples are shifted by the first one seen
/// to keep the one-pass sums well conditioned.
#[derive(Debug, Clone)]
pub struct CovarianceAccumulator {
    d: usize,
    n: usize,
    shift: Vec<f64>,
    sum: Vec<f64>,
    /// upper triangle of the shifted scatter matrix (full storage)
    scatter: Vec<f64>,
    /// pending shifted samples, transposed: `block[i * BLOCK + b]`
    block: Vec<f64>,
    pending: usize,
}

impl CovarianceAccumulator {
    pub fn new(d: usize) -> Self {
        Self {
            d,
            n: 0,
            shift: Vec::new(),
            sum: vec![0.0; d],
            scatter: vec![0.0; d * d],
            block: vec![0.0; d * BLOCK],
            pending: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn push(&mut self, x: &[f32]) -> Result<()> {
        if x.len() != self.d {
            return Err(Error::DimMismatch {
                what: "pca sample",
                expected: self.d,
                actual: x.len(),
            });
        }
        if self.shift.is_empty() {
            self.shift = x.iter().map(|&v| v as f64).collect();
        }
        let b = self.pending;
        for (i, (&v, &s)) in x.iter().zip(&self.shift).enumerate() {
            let c = v as f64 - s;
            self.sum[i] += c;
            self.block[i * BLOCK + b] = c;
        }
        self.pending += 1;
        self.n += 1;
        if self.pending == BLOCK {
            self.flush();
        }
        Ok(())
    }

    fn flush(&mut self) {
        let m = self.pending;
        let d = self.d;
        for i in 0..d {
            let xi = &self.block[i * BLOCK..i * BLOCK + m];
            for j in i..d {
                let xj = &self.block[j * BLOCK..j * BLOCK + m];
                self.scatter[i * d + j] += dot(xi, xj);
            }
        }
        self.pending = 0;
    }

    /// Merges another accumulator's samples into this one.
    pub fn merge(&mut self, mut other: CovarianceAccumulator) -> Result<()> {
        if other.d != self.d {
            return Err(Error::DimMismatch {
                what: "pca sample",
                expected: self.d,
                actual: other.d,
            });
        }
        if other.n == 0 {
            return Ok(());
        }
        other.flush();
        if self.n == 0 {
            *self = other;
            return Ok(());
        }
        self.flush();
        // re-express other's sums relative to our shift
        let d = self.d;
        let delta: Vec<f64> = (0..d).map(|i| other.shift[i] - self.shift[i]).collect();
        let n_o = other.n as f64;
        for i in 0..d {
            for j in i..d {
                self.scatter[i * d + j] += other.scatter[i * d + j]
                    + delta[i] * other.sum[j]
                    + delta[j] * other.sum[i]
                    + n_o * delta[i] * delta[j];
            }
        }
        for ((s, o), dl) in self.sum.iter_mut().zip(&other.sum).zip(&delta) {
            *s += o + n_o * dl;
        }
        self.n += other.n;
        Ok(())
    }

    /// Sample mean and unbiased covariance (full symmetric, row-major).
    pub fn finish(mut self) -> Result<(Vec<f64>, Vec<f64>)> {
        if self.n < 2 {
            return Err(Error::TooFewSamples {
                needed: 2,
                got: self.n,
            });
        }
        self.flush();
        let d = self.d;
        let n = self.n as f64;
        let mean: Vec<f64> = (0..d).map(|i| self.shift[i] + self.sum[i] / n).collect();
        let mut cov = vec![0.0; d * d];
        for i in 0..d {
            for j in i..d {
                let c = (self.scatter[i * d + j] - self.sum[i] * self.sum[j] / n) / (n - 1.0);
                cov[i * d + j] = c;
                cov[j * d + i] = c;
            }
        }
        Ok((mean, cov))
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four partial sums let the compiler vectorize
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * c + l] * b[4 * c + l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Fits a PCA model to `n` samples of dimension `d` stored contiguously.
pub fn fit_pca(samples: &[f32], d: usize, variance_target: f64) -> Result<PcaModel> {
    if d == 0 || samples.len() % d != 0 {
        return Err(Error::InvalidParam(format!(
            "{} values do not form samples of length {d}",
            samples.len()
        )));
    }
    let mut acc = CovarianceAccumulator::new(d);
    for s in samples.chunks_exact(d) {
        acc.push(s)?;
    }
    fit_from_accumulator(acc, variance_target)
}

/// Fits a PCA model to the samples gathered in `acc`.
pub fn fit_from_accumulator(acc: CovarianceAccumulator, variance_target: f64) -> Result<PcaModel> {
    check_target(variance_target)?;
    let d = acc.dim();
    let (mean, cov) = acc.finish()?;
    fit_covariance(mean, cov, d, variance_target)
}

/// Like [`fit_from_accumulator`], but consecutive runs of `group` dimensions
/// (one feature channel each) are first scaled to unit mean variance.
/// Channels without variance keep scale 1.
pub fn fit_standardized(acc: CovarianceAccumulator, variance_target: f64, group: usize) -> Result<PcaModel> {
    check_target(variance_target)?;
    let d = acc.dim();
    if group == 0 || d % group != 0 {
        return Err(Error::InvalidParam(format!(
            "channel group {group} does not divide dimension {d}"
        )));
    }
    let (mean, mut cov) = acc.finish()?;
    let mut scale = vec![1.0f64; d];
    for g in 0..d / group {
        let var = (g * group..(g + 1) * group).map(|i| cov[i * d + i]).sum::<f64>() / group as f64;
        if var > 1e-20 {
            let s = 1.0 / libm::sqrt(var);
            scale[g * group..(g + 1) * group].iter_mut().for_each(|v| *v = s);
        }
    }
    // round through f32 so training and inference use the same factors
    let scale: Vec<f32> = scale.into_iter().map(|s| s as f32).collect();
    for i in 0..d {
        for j in 0..d {
            cov[i * d + j] *= scale[i] as f64 * scale[j] as f64;
        }
    }
    fit_covariance(mean, cov, d, variance_target)?.with_scale(scale)
}

fn check_target(variance_target: f64) -> Result<()> {
    if !(variance_target > 0.0 && variance_target <= 1.0) {
        return Err(Error::InvalidParam(format!(
            "variance target {variance_target} outside (0, 1]"
        )));
    }
    Ok(())
}

fn fit_covariance(mean: Vec<f64>, cov: Vec<f64>, d: usize, variance_target: f64) -> Result<PcaModel> {
    let (values, vectors) = symmetric_eigen(&cov, d);
    let values: Vec<f64> = values.into_iter().map(|v| v.max(0.0)).collect();
    let total: f64 = values.iter().sum();
    let scale: f64 = (0..d).map(|i| cov[i * d + i].abs()).fold(0.0, f64::max);
    if !(total > 1e-12 * scale.max(f64::MIN_POSITIVE)) || total <= 0.0 {
        return Err(Error::ZeroVariance);
    }

    let mut k = d;
    let mut cum = 0.0;
    for (i, v) in values.iter().enumerate() {
        cum += v;
        if cum / total >= variance_target {
            k = i + 1;
            break;
        }
    }
    let retained = (values[..k].iter().sum::<f64>() / total).min(1.0);

    let mut projection = Vec::with_capacity(k * d);
    for j in 0..k {
        let row = &vectors[j * d..(j + 1) * d];
        // sign convention: largest-magnitude entry positive
        let mut pivot = 0;
        for (i, v) in row.iter().enumerate() {
            if v.abs() > row[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if row[pivot] < 0.0 { -1.0 } else { 1.0 };
        projection.extend(row.iter().map(|&v| (sign * v) as f32));
    }
    PcaModel::from_parts(
        mean.into_iter().map(|m| m as f32).collect(),
        projection,
        k,
        retained,
    )
}

/// Explained-variance ratio of every component, descending.
pub fn explained_variance_ratios(samples: &[f32], d: usize) -> Result<Vec<f64>> {
    let mut acc = CovarianceAccumulator::new(d);
    for s in samples.chunks_exact(d) {
        acc.push(s)?;
    }
    let (_, cov) = acc.finish()?;
    let (values, _) = symmetric_eigen(&cov, d);
    let total: f64 = values.iter().map(|v| v.max(0.0)).sum();
    if !(total > 0.0) {
        return Err(Error::ZeroVariance);
    }
    Ok(values.into_iter().map(|v| v.max(0.0) / total).collect())
}
