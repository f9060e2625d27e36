//! Derivative and edge feature channels computed on the upsampled LR
//! volume, and their assembly into per-patch descriptors.
//!
//! Channel order is fixed: `Dx, Dy, Dz, Dxx, Dyy, Dzz` followed, for the
//! full set, by the edge magnitude `M` and orientations `phi_xy`,
//! `phi_zx`, `phi_zy`. First derivatives use the central difference
//! `[-1, 0, 1] / 2`, second derivatives `[1, -2, 1]`, both with replicate
//! borders. Edge channels are taken from a Gaussian-smoothed copy.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Error, Result};
use crate::filter::{correlate_axis, gaussian_smooth};
use crate::par;
use crate::patch::PatchGrid;
use crate::pca::PcaModel;
use crate::volume::Volume;

/// PCA-reduced patch descriptor.
pub type FeatureVector = Vec<f32>;

const FIRST: [f64; 3] = [-0.5, 0.0, 0.5];
const SECOND: [f64; 3] = [1.0, -2.0, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum FeatureSet {
    /// Six first- and second-order derivative channels.
    Dev,
    /// Derivatives plus edge magnitude and three orientations.
    #[default]
    DevEdge,
}

impl FeatureSet {
    pub fn channel_count(self) -> usize {
        match self {
            FeatureSet::Dev => 6,
            FeatureSet::DevEdge => 10,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureSet::Dev => "dev",
            FeatureSet::DevEdge => "devedge",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "dev" => Some(FeatureSet::Dev),
            "devedge" => Some(FeatureSet::DevEdge),
            _ => None,
        }
    }
}

pub const CHANNEL_NAMES: [&str; 10] = [
    "dx", "dy", "dz", "dxx", "dyy", "dzz", "mag", "phi_xy", "phi_zx", "phi_zy",
];

fn check_dims(v: &Volume) -> Result<()> {
    if v.dims().iter().any(|&n| n < 3) {
        return Err(Error::InvalidDims(format!(
            "derivative features need at least 3 voxels per axis, got {:?}",
            v.dims()
        )));
    }
    Ok(())
}

fn to_f64(v: &Volume) -> Vec<f64> {
    v.data().iter().map(|&x| x as f64).collect()
}

fn to_volume(template: &Volume, data: &[f64]) -> Volume {
    let mut out = template.with_data(data.iter().map(|&x| x as f32).collect());
    out.set_intensity_range(None);
    out
}

/// `[Dx, Dy, Dz, Dxx, Dyy, Dzz]` of `v`.
pub fn derivatives(v: &Volume) -> Result<[Volume; 6]> {
    check_dims(v)?;
    let src = to_f64(v);
    let dims = v.dims();
    let ch = |axis, taps: &[f64]| to_volume(v, &correlate_axis(&src, dims, axis, taps));
    Ok([
        ch(0, &FIRST),
        ch(1, &FIRST),
        ch(2, &FIRST),
        ch(0, &SECOND),
        ch(1, &SECOND),
        ch(2, &SECOND),
    ])
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeChannels {
    pub magnitude: Volume,
    pub phi_xy: Volume,
    pub phi_zx: Volume,
    pub phi_zy: Volume,
}

/// Angle of the vector `(x, y)` in `(-pi, pi]`; the zero vector maps to 0.
#[inline]
pub fn orientation(y: f64, x: f64) -> f64 {
    if x == 0.0 && y == 0.0 {
        return 0.0;
    }
    let a = libm::atan2(y, x);
    if a <= -PI {
        PI
    } else {
        a
    }
}

/// Edge magnitude and orientations from the gradient of the
/// `sigma`-smoothed volume.
pub fn edge_features(v: &Volume, sigma: f64) -> Result<EdgeChannels> {
    check_dims(v)?;
    let smooth = gaussian_smooth(v, sigma)?;
    let src = to_f64(&smooth);
    let dims = v.dims();
    let dx = correlate_axis(&src, dims, 0, &FIRST);
    let dy = correlate_axis(&src, dims, 1, &FIRST);
    let dz = correlate_axis(&src, dims, 2, &FIRST);

    let n = src.len();
    let mut mag = vec![0.0; n];
    let mut phi_xy = vec![0.0; n];
    let mut phi_zx = vec![0.0; n];
    let mut phi_zy = vec![0.0; n];
    for i in 0..n {
        let (gx, gy, gz) = (dx[i], dy[i], dz[i]);
        mag[i] = libm::sqrt(gx * gx + gy * gy + gz * gz);
        phi_xy[i] = orientation(gy, gx);
        phi_zx[i] = orientation(gx, gz);
        phi_zy[i] = orientation(gy, gz);
    }
    Ok(EdgeChannels {
        magnitude: to_volume(v, &mag),
        phi_xy: to_volume(v, &phi_xy),
        phi_zx: to_volume(v, &phi_zx),
        phi_zy: to_volume(v, &phi_zy),
    })
}

/// Feature channels aligned with one volume.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBank {
    channels: Vec<Volume>,
    sigma: f64,
    set: FeatureSet,
}

impl FeatureBank {
    pub fn compute(v: &Volume, sigma: f64, set: FeatureSet) -> Result<Self> {
        let [dx, dy, dz, dxx, dyy, dzz] = derivatives(v)?;
        let mut channels = vec![dx, dy, dz, dxx, dyy, dzz];
        if set == FeatureSet::DevEdge {
            let e = edge_features(v, sigma)?;
            channels.extend([e.magnitude, e.phi_xy, e.phi_zx, e.phi_zy]);
        }
        Ok(Self {
            channels,
            sigma,
            set,
        })
    }

    pub fn channels(&self) -> &[Volume] {
        &self.channels
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn feature_set(&self) -> FeatureSet {
        self.set
    }

    pub fn dims(&self) -> [usize; 3] {
        self.channels[0].dims()
    }

    /// Length of the concatenated raw descriptor for `grid`'s patches.
    pub fn raw_dim(&self, grid: &PatchGrid) -> usize {
        self.channels.len() * grid.patch_len()
    }

    /// Concatenates patch `i` of every channel into `out`.
    pub fn gather_raw(&self, grid: &PatchGrid, i: usize, out: &mut [f32]) {
        let plen = grid.patch_len();
        for (c, ch) in self.channels.iter().enumerate() {
            grid.gather(ch.data(), i, &mut out[c * plen..(c + 1) * plen]);
        }
    }

    fn check_grid(&self, grid: &PatchGrid) -> Result<()> {
        if grid.volume_dims() != self.dims() {
            return Err(Error::InvalidDims(format!(
                "feature bank is {:?}, patch grid expects {:?}",
                self.dims(),
                grid.volume_dims()
            )));
        }
        Ok(())
    }
}

/// Reduced descriptors of every patch in `grid`, in grid order.
pub fn featurize_patches(
    bank: &FeatureBank,
    grid: &PatchGrid,
    pca: &PcaModel,
) -> Result<Vec<FeatureVector>> {
    let indices: Vec<usize> = (0..grid.len()).collect();
    featurize_selected(bank, grid, pca, &indices)
}

/// Reduced descriptors of the patches listed in `indices`.
pub fn featurize_selected(
    bank: &FeatureBank,
    grid: &PatchGrid,
    pca: &PcaModel,
    indices: &[usize],
) -> Result<Vec<FeatureVector>> {
    let k = pca.output_dim();
    let flat = featurize_selected_flat(bank, grid, pca, indices)?;
    Ok(flat.chunks_exact(k).map(|c| c.to_vec()).collect())
}

/// Like [`featurize_selected`], packed `k` values per patch.
pub fn featurize_selected_flat(
    bank: &FeatureBank,
    grid: &PatchGrid,
    pca: &PcaModel,
    indices: &[usize],
) -> Result<Vec<f32>> {
    bank.check_grid(grid)?;
    let raw_dim = bank.raw_dim(grid);
    if pca.input_dim() != raw_dim {
        return Err(Error::DimMismatch {
            what: "pca input",
            expected: pca.input_dim(),
            actual: raw_dim,
        });
    }
    let k = pca.output_dim();
    let mut flat = vec![0.0f32; indices.len() * k];
    const CHUNK: usize = 1024;
    par::for_each_chunk_mut(&mut flat, CHUNK * k, |c, out| {
        let mut raw = vec![0.0f32; raw_dim];
        for (j, dst) in out.chunks_exact_mut(k).enumerate() {
            bank.gather_raw(grid, indices[c * CHUNK + j], &mut raw);
            pca.project_into(&raw, dst).expect("dimensions checked above");
        }
    });
    Ok(flat)
}
