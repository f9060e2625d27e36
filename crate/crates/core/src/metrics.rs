//! PSNR and SSIM for volumes on the normalized `[0, 1]` scale.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::filter::{correlate_separable, gaussian_kernel_with_radius};
use crate::volume::Volume;

pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_RADIUS: usize = 5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SsimMode {
    /// 11x11x11 Gaussian window.
    #[default]
    Volume,
    /// 11x11 window within each axial (z) slice, averaged over slices.
    Slice,
}

impl SsimMode {
    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "volume" => Some(SsimMode::Volume),
            "slice" => Some(SsimMode::Slice),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QualityReport {
    pub id: String,
    /// `f64::INFINITY` for identical volumes.
    pub psnr_db: f64,
    pub ssim: f64,
}

impl QualityReport {
    pub fn evaluate(id: impl Into<String>, reference: &Volume, test: &Volume, mode: SsimMode) -> Result<Self> {
        Ok(Self {
            id: id.into(),
            psnr_db: psnr(reference, test)?,
            ssim: ssim(reference, test, mode)?,
        })
    }
}

fn check_dims(a: &Volume, b: &Volume) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::InvalidDims(alloc::format!(
            "reference {:?} vs test {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

pub fn mse(reference: &Volume, test: &Volume) -> Result<f64> {
    check_dims(reference, test)?;
    let sum: f64 = reference
        .data()
        .iter()
        .zip(test.data())
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum();
    Ok(sum / reference.len() as f64)
}

/// `10 log10(1 / MSE)` with unit peak.
pub fn psnr(reference: &Volume, test: &Volume) -> Result<f64> {
    let m = mse(reference, test)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * libm::log10(1.0 / m))
}

/// Mean of the local SSIM map under a Gaussian window (sigma 1.5,
/// radius 5) with replicate borders.
pub fn ssim(reference: &Volume, test: &Volume, mode: SsimMode) -> Result<f64> {
    let map = ssim_map(reference, test, mode)?;
    Ok(map.iter().sum::<f64>() / map.len() as f64)
}

pub fn ssim_map(reference: &Volume, test: &Volume, mode: SsimMode) -> Result<Vec<f64>> {
    check_dims(reference, test)?;
    let dims = reference.dims();
    let taps = gaussian_kernel_with_radius(SSIM_SIGMA, SSIM_RADIUS);
    let axes: &[usize] = match mode {
        SsimMode::Volume => &[0, 1, 2],
        SsimMode::Slice => &[0, 1],
    };
    let x: Vec<f64> = reference.data().iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = test.data().iter().map(|&v| v as f64).collect();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();

    let blur = |s: &[f64]| correlate_separable(s, dims, axes, &taps);
    let mu_x = blur(&x);
    let mu_y = blur(&y);
    let e_xx = blur(&xx);
    let e_yy = blur(&yy);
    let e_xy = blur(&xy);

    Ok((0..x.len())
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let vx = e_xx[i] - mx * mx;
            let vy = e_yy[i] - my * my;
            let cov = e_xy[i] - mx * my;
            ((2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(seed: u64, dims: [usize; 3]) -> Volume {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Volume::from_fn(dims, |_, _, _| rng.gen()).unwrap()
    }

    #[test]
    fn psnr_examples() {
        let a = Volume::filled([4, 4, 4], 0.0).unwrap();
        let b = Volume::filled([4, 4, 4], 0.1).unwrap();
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let p = psnr(&a, &b).unwrap();
        assert!((p - 20.0).abs() < 1e-5, "{p}");
        let c = Volume::filled([4, 4, 5], 0.0).unwrap();
        assert!(psnr(&a, &c).is_err());
        assert!(ssim(&a, &c, SsimMode::Volume).is_err());
    }

    #[test]
    fn ssim_identities() {
        let a = random(1, [9, 8, 7]);
        assert_eq!(ssim(&a, &a, SsimMode::Volume).unwrap(), 1.0);
        assert_eq!(ssim(&a, &a, SsimMode::Slice).unwrap(), 1.0);
        let c = Volume::filled([6, 6, 6], 0.5).unwrap();
        assert_eq!(ssim(&c, &c, SsimMode::Volume).unwrap(), 1.0);
    }

    #[test]
    fn ssim_symmetry_and_range() {
        let a = random(2, [10, 10, 10]);
        let b = random(3, [10, 10, 10]);
        let ab = ssim(&a, &b, SsimMode::Volume).unwrap();
        let ba = ssim(&b, &a, SsimMode::Volume).unwrap();
        assert!((ab - ba).abs() <= 1e-12);
        assert!((-1.0..=1.0).contains(&ab));
    }

    #[test]
    fn ssim_approaches_one_for_small_perturbations() {
        let a = random(4, [12, 12, 12]);
        let mut last = 0.0;
        for eps in [1e-3f32, 1e-4] {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let b = Volume::from_fn(a.dims(), |x, y, z| {
                a.get(x, y, z) + eps * (rng.gen::<f32>() - 0.5)
            })
            .unwrap();
            let s = ssim(&a, &b, SsimMode::Volume).unwrap();
            assert!(s > last && s <= 1.0);
            last = s;
        }
        assert!(last > 0.9999);
    }

    #[test]
    fn psnr_decreases_with_noise() {
        let a = random(6, [8, 8, 8]);
        let noise = random(7, [8, 8, 8]);
        let mut last = f64::INFINITY;
        for amp in [0.001f32, 0.01, 0.1] {
            let b = Volume::from_fn(a.dims(), |x, y, z| {
                a.get(x, y, z) + amp * (noise.get(x, y, z) - 0.5)
            })
            .unwrap();
            let p = psnr(&a, &b).unwrap();
            assert!(p < last);
            last = p;
        }
    }
}
