//! Overlapping cubic patch enumeration, extraction and overlap-averaged
//! reconstruction.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::volume::{voxel_count, Dims, Volume};

/// Deterministic lattice of patch corners inside a volume.
///
/// Patch `i` has corner `origin + stride * (ix, iy, iz)` where `ix` varies
/// fastest. Every patch lies fully inside the volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGrid {
    volume_dims: Dims,
    patch_dims: Dims,
    stride: [usize; 3],
    origin: [usize; 3],
    counts: [usize; 3],
}

impl PatchGrid {
    pub fn new(volume_dims: Dims, patch_dims: Dims, stride: [usize; 3]) -> Result<Self> {
        Self::with_origin(volume_dims, patch_dims, stride, [0; 3])
    }

    pub fn with_origin(
        volume_dims: Dims,
        patch_dims: Dims,
        stride: [usize; 3],
        origin: [usize; 3],
    ) -> Result<Self> {
        let mut counts = [0usize; 3];
        for a in 0..3 {
            if patch_dims[a] == 0 || stride[a] == 0 {
                return Err(Error::InvalidParam(format!(
                    "patch dims {patch_dims:?} and stride {stride:?} must be positive"
                )));
            }
            if origin[a] + patch_dims[a] > volume_dims[a] {
                return Err(Error::GridOutOfBounds);
            }
            counts[a] = (volume_dims[a] - origin[a] - patch_dims[a]) / stride[a] + 1;
        }
        Ok(Self {
            volume_dims,
            patch_dims,
            stride,
            origin,
            counts,
        })
    }

    pub fn volume_dims(&self) -> Dims {
        self.volume_dims
    }

    pub fn patch_dims(&self) -> Dims {
        self.patch_dims
    }

    pub fn stride(&self) -> [usize; 3] {
        self.stride
    }

    pub fn counts(&self) -> [usize; 3] {
        self.counts
    }

    pub fn len(&self) -> usize {
        voxel_count(self.counts)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Voxels per patch.
    pub fn patch_len(&self) -> usize {
        voxel_count(self.patch_dims)
    }

    /// Corner of patch `i` in voxel coordinates.
    #[inline]
    pub fn corner(&self, i: usize) -> [usize; 3] {
        let ix = i % self.counts[0];
        let iy = (i / self.counts[0]) % self.counts[1];
        let iz = i / (self.counts[0] * self.counts[1]);
        [
            self.origin[0] + ix * self.stride[0],
            self.origin[1] + iy * self.stride[1],
            self.origin[2] + iz * self.stride[2],
        ]
    }

    /// Writes the linear voxel indices of patch `i`, x fastest.
    pub fn voxel_indices(&self, i: usize, out: &mut Vec<usize>) {
        out.clear();
        let [cx, cy, cz] = self.corner(i);
        let [nx, ny, _] = self.volume_dims;
        for z in cz..cz + self.patch_dims[2] {
            for y in cy..cy + self.patch_dims[1] {
                let row = nx * (y + ny * z);
                out.extend((cx..cx + self.patch_dims[0]).map(|x| row + x));
            }
        }
    }

    /// Gathers patch `i` of `data` into `out` (length [`patch_len`]).
    ///
    /// [`patch_len`]: PatchGrid::patch_len
    #[inline]
    pub fn gather(&self, data: &[f32], i: usize, out: &mut [f32]) {
        let [cx, cy, cz] = self.corner(i);
        let [nx, ny, _] = self.volume_dims;
        let [px, py, pz] = self.patch_dims;
        let mut k = 0;
        for z in cz..cz + pz {
            for y in cy..cy + py {
                let row = cx + nx * (y + ny * z);
                out[k..k + px].copy_from_slice(&data[row..row + px]);
                k += px;
            }
        }
    }

    fn check_volume(&self, dims: Dims) -> Result<()> {
        if dims != self.volume_dims {
            return Err(Error::InvalidDims(format!(
                "patch grid built for {:?}, volume is {:?}",
                self.volume_dims, dims
            )));
        }
        Ok(())
    }
}

/// Vectorized patches of `v` in grid order.
pub fn extract_patches(v: &Volume, grid: &PatchGrid) -> Result<Vec<Vec<f32>>> {
    grid.check_volume(v.dims())?;
    let mut out = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        let mut p = vec![0.0; grid.patch_len()];
        grid.gather(v.data(), i, &mut p);
        out.push(p);
    }
    Ok(out)
}

/// Scatter-add target for overlapping patch contributions.
#[derive(Debug, Clone)]
pub struct Accumulator {
    dims: Dims,
    sum: Vec<f64>,
    hits: Vec<u32>,
}

impl Accumulator {
    pub fn new(dims: Dims) -> Self {
        let n = voxel_count(dims);
        Self {
            dims,
            sum: vec![0.0; n],
            hits: vec![0; n],
        }
    }

    pub fn add_patch(&mut self, grid: &PatchGrid, i: usize, values: &[f32]) {
        let [cx, cy, cz] = grid.corner(i);
        let [nx, ny, _] = self.dims;
        let [px, py, pz] = grid.patch_dims();
        let mut k = 0;
        for z in cz..cz + pz {
            for y in cy..cy + py {
                let row = cx + nx * (y + ny * z);
                for x in 0..px {
                    self.sum[row + x] += values[k] as f64;
                    self.hits[row + x] += 1;
                    k += 1;
                }
            }
        }
    }

    pub fn hits(&self) -> &[u32] {
        &self.hits
    }

    /// Divides sums by hit counts. Voxels nobody touched become 0; their
    /// number is returned alongside the volume.
    pub fn finalize(self) -> (Volume, usize) {
        let mut uncovered = 0;
        let data = self
            .sum
            .iter()
            .zip(&self.hits)
            .map(|(&s, &h)| {
                if h == 0 {
                    uncovered += 1;
                    0.0
                } else {
                    (s / h as f64) as f32
                }
            })
            .collect();
        let vol = Volume::new(self.dims, data).expect("accumulator dims are valid");
        (vol, uncovered)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub volume: Volume,
    /// Voxels no patch covered (left at 0).
    pub uncovered: usize,
}

/// Averages overlapping `patches` (grid order) back into a volume.
pub fn reconstruct<P: AsRef<[f32]>>(
    patches: &[P],
    grid: &PatchGrid,
    dims: Dims,
) -> Result<Reconstruction> {
    grid.check_volume(dims)?;
    if patches.len() != grid.len() {
        return Err(Error::DimMismatch {
            what: "patch count",
            expected: grid.len(),
            actual: patches.len(),
        });
    }
    let mut acc = Accumulator::new(dims);
    for (i, p) in patches.iter().enumerate() {
        let p = p.as_ref();
        if p.len() != grid.patch_len() {
            return Err(Error::DimMismatch {
                what: "patch length",
                expected: grid.patch_len(),
                actual: p.len(),
            });
        }
        acc.add_patch(grid, i, p);
    }
    let (volume, uncovered) = acc.finalize();
    Ok(Reconstruction { volume, uncovered })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn patch_counts() {
        let g = PatchGrid::new([3, 3, 3], [3, 3, 3], [1; 3]).unwrap();
        assert_eq!(g.len(), 1);
        let g = PatchGrid::new([4, 3, 3], [3, 3, 3], [1; 3]).unwrap();
        assert_eq!(g.len(), 2);
        let g = PatchGrid::new([16, 16, 16], [3, 3, 3], [1; 3]).unwrap();
        assert_eq!(g.len(), 14 * 14 * 14);
        assert_eq!(
            PatchGrid::new([2, 3, 3], [3, 3, 3], [1; 3]),
            Err(Error::GridOutOfBounds)
        );
    }

    #[test]
    fn single_patch_is_whole_volume() {
        let v = Volume::from_fn([3, 3, 3], |x, y, z| (x + 3 * y + 9 * z) as f32).unwrap();
        let g = PatchGrid::new([3, 3, 3], [3, 3, 3], [1; 3]).unwrap();
        let p = extract_patches(&v, &g).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0], v.data());
    }

    #[test]
    fn labeled_patch_matches_index_gather() {
        let v = Volume::from_fn([5, 5, 5], |x, y, z| (x + 5 * y + 25 * z) as f32).unwrap();
        let g = PatchGrid::new([5, 5, 5], [3, 3, 3], [1; 3]).unwrap();
        let patches = extract_patches(&v, &g).unwrap();
        // corner (1,1,1) is patch 1 + 3*1 + 9*1 = 13
        assert_eq!(g.corner(13), [1, 1, 1]);
        let mut oracle = Vec::new();
        for dz in 0..3 {
            for dy in 0..3 {
                for dx in 0..3 {
                    oracle.push(((1 + dx) + 5 * (1 + dy) + 25 * (1 + dz)) as f32);
                }
            }
        }
        assert_eq!(patches[13], oracle);
    }

    #[test]
    fn stride_one_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = Volume::from_fn([6, 5, 7], |_, _, _| rng.gen()).unwrap();
        let g = PatchGrid::new(v.dims(), [3, 3, 3], [1; 3]).unwrap();
        let r = reconstruct(&extract_patches(&v, &g).unwrap(), &g, v.dims()).unwrap();
        assert_eq!(r.uncovered, 0);
        for (a, b) in r.volume.data().iter().zip(v.data()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn two_overlapping_patches_average() {
        let g = PatchGrid::new([4, 3, 3], [3, 3, 3], [1; 3]).unwrap();
        let r = reconstruct(&[vec![0.0f32; 27], vec![1.0; 27]], &g, [4, 3, 3]).unwrap();
        assert_eq!(r.volume.get(0, 1, 1), 0.0);
        assert_eq!(r.volume.get(1, 1, 1), 0.5);
        assert_eq!(r.volume.get(3, 1, 1), 1.0);
    }

    #[test]
    fn strided_reconstruction_matches_per_voxel_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dims = [6, 6, 6];
        let g = PatchGrid::new(dims, [3, 3, 3], [2; 3]).unwrap();
        let patches: Vec<Vec<f32>> = (0..g.len())
            .map(|_| (0..27).map(|_| rng.gen()).collect())
            .collect();
        let r = reconstruct(&patches, &g, dims).unwrap();

        // brute force: for every voxel scan all patches that contain it
        let mut uncovered = 0;
        for z in 0..6 {
            for y in 0..6 {
                for x in 0..6 {
                    let mut sum = 0.0f64;
                    let mut n = 0;
                    for (i, p) in patches.iter().enumerate() {
                        let c = g.corner(i);
                        if (c[0]..c[0] + 3).contains(&x)
                            && (c[1]..c[1] + 3).contains(&y)
                            && (c[2]..c[2] + 3).contains(&z)
                        {
                            let k = (x - c[0]) + 3 * (y - c[1]) + 9 * (z - c[2]);
                            sum += p[k] as f64;
                            n += 1;
                        }
                    }
                    let expect = if n == 0 {
                        uncovered += 1;
                        0.0
                    } else {
                        (sum / n as f64) as f32
                    };
                    assert!((r.volume.get(x, y, z) - expect).abs() <= 1e-6);
                }
            }
        }
        assert_eq!(r.uncovered, uncovered);
        assert!(uncovered > 0);
    }

    #[test]
    fn mismatches_are_errors() {
        let g = PatchGrid::new([4, 3, 3], [3, 3, 3], [1; 3]).unwrap();
        assert!(reconstruct(&[vec![0.0f32; 27]], &g, [4, 3, 3]).is_err());
        assert!(reconstruct(&[vec![0.0f32; 27], vec![0.0; 27]], &g, [5, 3, 3]).is_err());
        let v = Volume::filled([5, 3, 3], 0.0).unwrap();
        assert!(extract_patches(&v, &g).is_err());
    }
}
