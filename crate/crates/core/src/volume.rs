//! Dense 3-D scalar grid.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Voxel counts along x, y, z. x varies fastest in memory.
pub type Dims = [usize; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: Dims,
    spacing: [f32; 3],
    data: Vec<f32>,
    /// Source `(min, max)` when the data has been mapped onto `[0, 1]`.
    intensity_range: Option<(f32, f32)>,
}

impl Volume {
    pub fn new(dims: Dims, data: Vec<f32>) -> Result<Self> {
        Self::with_spacing(dims, [1.0; 3], data)
    }

    pub fn with_spacing(dims: Dims, spacing: [f32; 3], data: Vec<f32>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::InvalidDims(format!("{dims:?} has a zero extent")));
        }
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "spacing {spacing:?} must be strictly positive"
            )));
        }
        let len = voxel_count(dims);
        if data.len() != len {
            return Err(Error::DimMismatch {
                what: "volume data",
                expected: len,
                actual: data.len(),
            });
        }
        Ok(Self {
            dims,
            spacing,
            data,
            intensity_range: None,
        })
    }

    pub fn filled(dims: Dims, value: f32) -> Result<Self> {
        Self::new(dims, vec![value; voxel_count(dims)])
    }

    /// Builds a volume by evaluating `f(x, y, z)` at every voxel.
    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(voxel_count(dims));
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    data.push(f(x, y, z));
                }
            }
        }
        Self::new(dims, data)
    }

    /// Same geometry and metadata as `self`, different samples.
    pub(crate) fn with_data(&self, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), self.data.len());
        Self {
            dims: self.dims,
            spacing: self.spacing,
            data,
            intensity_range: self.intensity_range,
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn set_spacing(&mut self, spacing: [f32; 3]) -> Result<()> {
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "spacing {spacing:?} must be strictly positive"
            )));
        }
        self.spacing = spacing;
        Ok(())
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn intensity_range(&self) -> Option<(f32, f32)> {
        self.intensity_range
    }

    pub fn set_intensity_range(&mut self, range: Option<(f32, f32)>) {
        self.intensity_range = range;
    }

    /// Whether samples are known to live on the normalized `[0, 1]` scale.
    pub fn is_normalized(&self) -> bool {
        self.intensity_range.is_some()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.index(x, y, z)]
    }

    /// Sample with coordinates clamped into the grid (replicate padding).
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize, z: isize) -> f32 {
        let cx = x.clamp(0, self.dims[0] as isize - 1) as usize;
        let cy = y.clamp(0, self.dims[1] as isize - 1) as usize;
        let cz = z.clamp(0, self.dims[2] as isize - 1) as usize;
        self.get(cx, cy, cz)
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Affine map of the intensities onto `[0, 1]`, remembering the source
    /// range so [`Volume::denormalize`] can undo it.
    pub fn normalize(&self) -> Result<Volume> {
        let (lo, hi) = self.min_max();
        if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::DegenerateRange);
        }
        let lo64 = lo as f64;
        let span = hi as f64 - lo64;
        let data = self
            .data
            .iter()
            .map(|&v| (((v as f64 - lo64) / span) as f32).clamp(0.0, 1.0))
            .collect();
        let mut out = self.with_data(data);
        out.intensity_range = Some((lo, hi));
        Ok(out)
    }

    /// Maps normalized samples back to their source range. Volumes without a
    /// recorded range are returned unchanged.
    pub fn denormalize(&self) -> Volume {
        let Some((lo, hi)) = self.intensity_range else {
            return self.clone();
        };
        let lo64 = lo as f64;
        let span = hi as f64 - lo64;
        let data = self
            .data
            .iter()
            .map(|&v| (v as f64 * span + lo64) as f32)
            .collect();
        let mut out = self.with_data(data);
        out.intensity_range = None;
        out
    }

    /// Center crop so that every extent is a multiple of the matching
    /// divisor. Volumes that already fit are cloned.
    pub fn crop_to_multiple(&self, divisor: [usize; 3]) -> Result<Volume> {
        let mut new_dims = self.dims;
        let mut start = [0usize; 3];
        for a in 0..3 {
            let d = divisor[a].max(1);
            new_dims[a] = self.dims[a] / d * d;
            if new_dims[a] == 0 {
                return Err(Error::InvalidDims(format!(
                    "extent {} on axis {a} is smaller than divisor {d}",
                    self.dims[a]
                )));
            }
            start[a] = (self.dims[a] - new_dims[a]) / 2;
        }
        if new_dims == self.dims {
            return Ok(self.clone());
        }
        self.crop(start, new_dims)
    }

    /// Sub-volume with corner `start` and extent `dims`.
    pub fn crop(&self, start: [usize; 3], dims: Dims) -> Result<Volume> {
        for a in 0..3 {
            if dims[a] == 0 || start[a] + dims[a] > self.dims[a] {
                return Err(Error::InvalidDims(format!(
                    "crop {start:?}+{dims:?} exceeds {:?}",
                    self.dims
                )));
            }
        }
        let mut data = Vec::with_capacity(voxel_count(dims));
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                let row = self.index(start[0], start[1] + y, start[2] + z);
                data.extend_from_slice(&self.data[row..row + dims[0]]);
            }
        }
        let mut out = Volume::with_spacing(dims, self.spacing, data)?;
        out.intensity_range = self.intensity_range;
        Ok(out)
    }
}

pub fn voxel_count(dims: Dims) -> usize {
    dims[0] * dims[1] * dims[2]
}
