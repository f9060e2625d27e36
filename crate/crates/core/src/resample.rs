//! Separable tricubic resampling with the Keys kernel (a = -0.5).
//!
//! Output voxel `o` along an axis samples the input at coordinate
//! `o / factor`, so the centers of the first voxels coincide. When
//! shrinking with antialiasing on, the kernel is stretched by `1 / factor`
//! and the taps renormalized. Reads past the border replicate the edge.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::volume::{Dims, Volume};

const KEYS_A: f64 = -0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResampleOptions {
    pub antialias: bool,
}

impl Default for ResampleOptions {
    fn default() -> Self {
        Self { antialias: true }
    }
}

/// Keys cubic convolution kernel.
#[inline]
pub fn keys_kernel(t: f64) -> f64 {
    let t = t.abs();
    if t <= 1.0 {
        (KEYS_A + 2.0) * t * t * t - (KEYS_A + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        KEYS_A * t * t * t - 5.0 * KEYS_A * t * t + 8.0 * KEYS_A * t - 4.0 * KEYS_A
    } else {
        0.0
    }
}

/// Output extent for `n` input voxels scaled by `factor`.
pub fn scaled_extent(n: usize, factor: f64) -> usize {
    libm::round(n as f64 * factor) as usize
}

struct AxisTaps {
    /// `offsets[o]..offsets[o + 1]` indexes the taps of output voxel `o`.
    offsets: Vec<usize>,
    index: Vec<usize>,
    weight: Vec<f64>,
}

fn axis_taps(n_in: usize, n_out: usize, factor: f64, antialias: bool) -> AxisTaps {
    let shrink = antialias && factor < 1.0;
    let scale = if shrink { factor } else { 1.0 };
    let support = 2.0 / scale;
    let last = n_in as isize - 1;

    let mut taps = AxisTaps {
        offsets: Vec::with_capacity(n_out + 1),
        index: Vec::new(),
        weight: Vec::new(),
    };
    taps.offsets.push(0);
    for o in 0..n_out {
        let center = o as f64 / factor;
        let lo = libm::ceil(center - support) as isize;
        let hi = libm::floor(center + support) as isize;
        let start = taps.index.len();
        let mut sum = 0.0;
        for i in lo..=hi {
            let w = keys_kernel((center - i as f64) * scale);
            if w == 0.0 {
                continue;
            }
            let clamped = i.clamp(0, last) as usize;
            // merge repeated border reads into one tap
            if let Some(pos) = taps.index[start..].iter().position(|&j| j == clamped) {
                taps.weight[start + pos] += w;
            } else {
                taps.index.push(clamped);
                taps.weight.push(w);
            }
            sum += w;
        }
        for w in &mut taps.weight[start..] {
            *w /= sum;
        }
        taps.offsets.push(taps.index.len());
    }
    taps
}

fn resample_axis(src: &[f64], dims: Dims, axis: usize, n_out: usize, taps: &AxisTaps) -> Vec<f64> {
    let mut out_dims = dims;
    out_dims[axis] = n_out;
    let in_stride = match axis {
        0 => 1,
        1 => dims[0],
        _ => dims[0] * dims[1],
    };
    let out_stride = match axis {
        0 => 1,
        1 => out_dims[0],
        _ => out_dims[0] * out_dims[1],
    };
    let mut out = vec![0.0; out_dims[0] * out_dims[1] * out_dims[2]];
    let (outer_a, outer_b) = match axis {
        0 => (dims[1], dims[2]),
        1 => (dims[0], dims[2]),
        _ => (dims[0], dims[1]),
    };
    for b in 0..outer_b {
        for a in 0..outer_a {
            let (in_base, out_base) = match axis {
                0 => (dims[0] * (a + dims[1] * b), out_dims[0] * (a + dims[1] * b)),
                1 => (a + dims[0] * dims[1] * b, a + out_dims[0] * out_dims[1] * b),
                _ => (a + dims[0] * b, a + out_dims[0] * b),
            };
            for o in 0..n_out {
                let range = taps.offsets[o]..taps.offsets[o + 1];
                let acc: f64 = taps.index[range.clone()]
                    .iter()
                    .zip(&taps.weight[range])
                    .map(|(&i, &w)| w * src[in_base + i * in_stride])
                    .sum();
                out[out_base + o * out_stride] = acc;
            }
        }
    }
    out
}

/// Resamples `v` by a per-axis `factor` (> 1 enlarges).
///
/// Normalized inputs produce outputs clamped to `[0, 1]`.
pub fn tricubic_resample(v: &Volume, factor: [f64; 3], opts: ResampleOptions) -> Result<Volume> {
    let dims = v.dims();
    let mut out_dims = [0usize; 3];
    for a in 0..3 {
        if !(factor[a] > 0.0) || !factor[a].is_finite() {
            return Err(Error::InvalidParam(format!(
                "resample factor {} on axis {a} must be positive",
                factor[a]
            )));
        }
        out_dims[a] = scaled_extent(dims[a], factor[a]);
        if out_dims[a] == 0 {
            return Err(Error::InvalidDims(format!(
                "resampling extent {} by {} gives an empty axis",
                dims[a], factor[a]
            )));
        }
    }

    let mut buf: Vec<f64> = v.data().iter().map(|&x| x as f64).collect();
    let mut cur = dims;
    for axis in 0..3 {
        if factor[axis] == 1.0 && out_dims[axis] == cur[axis] {
            continue;
        }
        let taps = axis_taps(cur[axis], out_dims[axis], factor[axis], opts.antialias);
        buf = resample_axis(&buf, cur, axis, out_dims[axis], &taps);
        cur[axis] = out_dims[axis];
    }

    let clamp = v.is_normalized();
    let data = buf
        .into_iter()
        .map(|x| {
            let x = x as f32;
            if clamp {
                x.clamp(0.0, 1.0)
            } else {
                x
            }
        })
        .collect();
    let sp = v.spacing();
    let spacing = [
        (sp[0] as f64 / factor[0]) as f32,
        (sp[1] as f64 / factor[1]) as f32,
        (sp[2] as f64 / factor[2]) as f32,
    ];
    let mut out = Volume::with_spacing(out_dims, spacing, data)?;
    out.set_intensity_range(v.intensity_range());
    Ok(out)
}
