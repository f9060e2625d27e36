//! Separable filtering with replicate borders.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::volume::{Dims, Volume};

/// Normalized 1-D Gaussian taps with radius `ceil(3 sigma)`. `sigma == 0`
/// yields the identity tap.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = libm::ceil(3.0 * sigma) as isize;
    gaussian_kernel_with_radius(sigma, radius as usize)
}

pub fn gaussian_kernel_with_radius(sigma: f64, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    let denom = 2.0 * sigma * sigma;
    let mut taps: Vec<f64> = (-r..=r)
        .map(|i| libm::exp(-((i * i) as f64) / denom))
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Correlates every line along `axis` with `taps` (centered, odd length),
/// clamping reads at the borders.
pub fn correlate_axis(src: &[f64], dims: Dims, axis: usize, taps: &[f64]) -> Vec<f64> {
    debug_assert!(taps.len() % 2 == 1);
    debug_assert_eq!(src.len(), dims[0] * dims[1] * dims[2]);
    let radius = taps.len() / 2;
    let n = dims[axis];
    let stride = match axis {
        0 => 1,
        1 => dims[0],
        _ => dims[0] * dims[1],
    };
    let mut out = vec![0.0; src.len()];
    let mut padded = vec![0.0; n + 2 * radius];

    let (outer_a, outer_b) = match axis {
        0 => (dims[1], dims[2]),
        1 => (dims[0], dims[2]),
        _ => (dims[0], dims[1]),
    };
    for b in 0..outer_b {
        for a in 0..outer_a {
            let base = match axis {
                0 => dims[0] * (a + dims[1] * b),
                1 => a + dims[0] * dims[1] * b,
                _ => a + dims[0] * b,
            };
            for (i, p) in padded.iter_mut().enumerate() {
                let j = (i as isize - radius as isize).clamp(0, n as isize - 1) as usize;
                *p = src[base + j * stride];
            }
            for i in 0..n {
                let window = &padded[i..i + taps.len()];
                let acc: f64 = window.iter().zip(taps).map(|(v, t)| v * t).sum();
                out[base + i * stride] = acc;
            }
        }
    }
    out
}

/// Applies the same taps along each axis listed in `axes`.
pub fn correlate_separable(src: &[f64], dims: Dims, axes: &[usize], taps: &[f64]) -> Vec<f64> {
    let mut buf = src.to_vec();
    for &axis in axes {
        if dims[axis] > 1 || taps.len() > 1 {
            buf = correlate_axis(&buf, dims, axis, taps);
        }
    }
    buf
}

/// Separable Gaussian smoothing with replicate padding.
pub fn gaussian_smooth(v: &Volume, sigma: f64) -> Result<Volume> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParam(format!(
            "gaussian sigma must be finite and >= 0, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(v.clone());
    }
    let taps = gaussian_kernel(sigma);
    let src: Vec<f64> = v.data().iter().map(|&x| x as f64).collect();
    let out = correlate_separable(&src, v.dims(), &[0, 1, 2], &taps);
    Ok(v.with_data(out.into_iter().map(|x| x as f32).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_radius_and_sum() {
        let k = gaussian_kernel(1.0);
        assert_eq!(k.len(), 7);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(gaussian_kernel(0.4).len(), 5);
        assert_eq!(gaussian_kernel(0.0), vec![1.0]);
    }

    #[test]
    fn sigma_zero_is_identity() {
        let v = Volume::from_fn([4, 3, 5], |x, y, z| (x * 7 + y * 3 + z) as f32 * 0.1).unwrap();
        assert_eq!(gaussian_smooth(&v, 0.0).unwrap(), v);
    }

    #[test]
    fn constant_is_preserved() {
        let v = Volume::filled([6, 5, 4], 0.37).unwrap();
        let s = gaussian_smooth(&v, 1.3).unwrap();
        for &x in s.data() {
            assert!((x - 0.37).abs() < 1e-6);
        }
    }

    #[test]
    fn impulse_center_is_product_of_center_taps() {
        // oracle: 1-D taps computed directly from the Gaussian formula
        let sigma = 1.0f64;
        let raw: Vec<f64> = (-3..=3).map(|i: i32| (-(i * i) as f64 / 2.0).exp()).collect();
        let center = raw[3] / raw.iter().sum::<f64>();
        let expected = center * center * center;

        let mut v = Volume::filled([7, 7, 7], 0.0).unwrap();
        let c = v.index(3, 3, 3);
        v.data_mut()[c] = 1.0;
        let s = gaussian_smooth(&v, sigma).unwrap();
        assert!((s.get(3, 3, 3) as f64 - expected).abs() < 1e-7);
    }

    #[test]
    fn rejects_negative_sigma() {
        let v = Volume::filled([3, 3, 3], 1.0).unwrap();
        assert!(gaussian_smooth(&v, -1.0).is_err());
    }
}
