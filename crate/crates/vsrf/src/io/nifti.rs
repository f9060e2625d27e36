//! Single-file NIfTI-1 (`.nii`), uncompressed, u8 / i16 / f32 samples.
//!
//! The original intensity range of a normalized volume is kept in the
//! `descrip` field as `vsrf:range=<min>,<max>`.

use std::path::Path;

use vsrf_core::Volume;

use super::{atomic_write, quantize, read_file, Dtype};
use crate::error::{Error, Result};

pub const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;
const RANGE_TAG: &str = "vsrf:range=";

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Endian {
    Little,
    Big,
}

struct Reader<'a> {
    b: &'a [u8],
    e: Endian,
}

impl Reader<'_> {
    fn bytes<const N: usize>(&self, off: usize) -> [u8; N] {
        let mut a = [0u8; N];
        a.copy_from_slice(&self.b[off..off + N]);
        if self.e == Endian::Big {
            a.reverse();
        }
        a
    }

    fn i16(&self, off: usize) -> i16 {
        i16::from_le_bytes(self.bytes(off))
    }

    fn f32(&self, off: usize) -> f32 {
        f32::from_le_bytes(self.bytes(off))
    }
}

/// Header fields this reader uses.
#[derive(Debug, Clone, PartialEq)]
pub struct Header {
    pub dims: [usize; 3],
    pub spacing: [f32; 3],
    pub dtype: Dtype,
    pub vox_offset: usize,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub descrip: String,
    big_endian: bool,
}

impl Header {
    pub fn is_big_endian(&self) -> bool {
        self.big_endian
    }

    /// Original intensity range recorded by this crate, if any.
    pub fn intensity_range(&self) -> Option<(f32, f32)> {
        let rest = self.descrip.strip_prefix(RANGE_TAG)?;
        let (a, b) = rest.split_once(',')?;
        let lo: f32 = a.trim().parse().ok()?;
        let hi: f32 = b.trim().parse().ok()?;
        (lo.is_finite() && hi.is_finite() && hi > lo).then_some((lo, hi))
    }
}

pub fn parse_header(path: &Path, bytes: &[u8]) -> Result<Header> {
    if bytes.len() < HEADER_SIZE {
        return Err(Error::Truncated {
            path: path.into(),
            what: format!("header ({} of {HEADER_SIZE} bytes)", bytes.len()),
        });
    }
    if bytes[..2] == [0x1f, 0x8b] {
        return Err(Error::Unsupported {
            path: path.into(),
            field: "compression",
            value: "gzip".into(),
        });
    }
    let e = if i32::from_le_bytes(bytes[0..4].try_into().unwrap()) == HEADER_SIZE as i32 {
        Endian::Little
    } else if i32::from_be_bytes(bytes[0..4].try_into().unwrap()) == HEADER_SIZE as i32 {
        Endian::Big
    } else {
        return Err(Error::format(path, "sizeof_hdr is not 348; not a NIfTI-1 file"));
    };
    let r = Reader { b: bytes, e };
    let magic = &bytes[344..348];
    if magic != b"n+1\0" {
        return Err(Error::Unsupported {
            path: path.into(),
            field: "magic",
            value: format!("{:?} (only single-file n+1 is read)", String::from_utf8_lossy(magic)),
        });
    }

    let ndim = r.i16(40);
    if !(3..=7).contains(&ndim) {
        return Err(Error::Unsupported {
            path: path.into(),
            field: "dim[0]",
            value: ndim.to_string(),
        });
    }
    let mut dims = [0usize; 3];
    for (i, d) in dims.iter_mut().enumerate() {
        let v = r.i16(42 + 2 * i);
        if v <= 0 {
            return Err(Error::format(path, format!("dim[{}] = {v}", i + 1)));
        }
        *d = v as usize;
    }
    for i in 4..=ndim as usize {
        let v = r.i16(40 + 2 * i);
        if v != 1 {
            return Err(Error::Unsupported {
                path: path.into(),
                field: "dim",
                value: format!("dim[{i}] = {v} (only 3-D volumes)"),
            });
        }
    }

    let dtype = match r.i16(70) {
        DT_UINT8 => Dtype::U8,
        DT_INT16 => Dtype::I16,
        DT_FLOAT32 => Dtype::F32,
        other => {
            return Err(Error::Unsupported {
                path: path.into(),
                field: "datatype",
                value: other.to_string(),
            })
        }
    };
    let bitpix = r.i16(72);
    if bitpix as usize != dtype.size() * 8 {
        return Err(Error::format(path, format!("bitpix {bitpix} does not match datatype")));
    }

    let mut spacing = [1.0f32; 3];
    for (i, s) in spacing.iter_mut().enumerate() {
        let v = r.f32(80 + 4 * i).abs();
        if v.is_finite() && v > 0.0 {
            *s = v;
        }
    }
    let vox = r.f32(108);
    if !(vox.is_finite() && vox >= 0.0) {
        return Err(Error::format(path, format!("vox_offset {vox}")));
    }
    let vox_offset = (vox as usize).max(HEADER_SIZE);
    let descrip = {
        let raw = &bytes[148..228];
        let end = raw.iter().position(|&c| c == 0).unwrap_or(raw.len());
        String::from_utf8_lossy(&raw[..end]).into_owned()
    };
    Ok(Header {
        dims,
        spacing,
        dtype,
        vox_offset,
        scl_slope: r.f32(112),
        scl_inter: r.f32(116),
        descrip,
        big_endian: e == Endian::Big,
    })
}

pub fn read(path: &Path) -> Result<Volume> {
    let bytes = read_file(path)?;
    let h = parse_header(path, &bytes)?;
    let n = h.dims.iter().product::<usize>();
    let need = h.vox_offset + n * h.dtype.size();
    if bytes.len() < need {
        return Err(Error::Truncated {
            path: path.into(),
            what: format!("data ({} bytes, header implies {need})", bytes.len()),
        });
    }
    let e = if h.big_endian { Endian::Big } else { Endian::Little };
    let r = Reader { b: &bytes, e };
    let scaled = h.scl_slope != 0.0 && h.scl_slope.is_finite();
    let (slope, inter) = if scaled {
        (h.scl_slope as f64, h.scl_inter as f64)
    } else {
        (1.0, 0.0)
    };
    let off = h.vox_offset;
    let data: Vec<f32> = (0..n)
        .map(|i| {
            let raw = match h.dtype {
                Dtype::U8 => bytes[off + i] as f64,
                Dtype::I16 => r.i16(off + 2 * i) as f64,
                Dtype::F32 => r.f32(off + 4 * i) as f64,
            };
            if scaled {
                (raw * slope + inter) as f32
            } else {
                raw as f32
            }
        })
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::format(path, "non-finite voxel values"));
    }
    let mut v = Volume::with_spacing(h.dims, h.spacing, data)?;
    if let Some(range) = h.intensity_range() {
        v.set_intensity_range(Some(range));
    }
    Ok(v)
}

/// Encodes `v` as a little-endian `.nii` image.
pub fn encode(v: &Volume, dtype: Dtype) -> Result<Vec<u8>> {
    let dims = v.dims();
    if dims.iter().any(|&d| d > i16::MAX as usize) {
        return Err(vsrf_core::Error::InvalidDims(format!("{dims:?} exceeds NIfTI-1 limits")).into());
    }
    let (q, slope, inter) = quantize(v, dtype);
    let mut h = vec![0u8; VOX_OFFSET];
    let put = |h: &mut Vec<u8>, off: usize, b: &[u8]| h[off..off + b.len()].copy_from_slice(b);
    put(&mut h, 0, &(HEADER_SIZE as i32).to_le_bytes());
    h[38] = b'r';
    let dim: [i16; 8] = [3, dims[0] as i16, dims[1] as i16, dims[2] as i16, 1, 1, 1, 1];
    for (i, d) in dim.iter().enumerate() {
        put(&mut h, 40 + 2 * i, &d.to_le_bytes());
    }
    let (code, bitpix) = match dtype {
        Dtype::U8 => (DT_UINT8, 8i16),
        Dtype::I16 => (DT_INT16, 16),
        Dtype::F32 => (DT_FLOAT32, 32),
    };
    put(&mut h, 70, &code.to_le_bytes());
    put(&mut h, 72, &bitpix.to_le_bytes());
    let sp = v.spacing();
    let pixdim = [1.0f32, sp[0], sp[1], sp[2], 1.0, 1.0, 1.0, 1.0];
    for (i, p) in pixdim.iter().enumerate() {
        put(&mut h, 76 + 4 * i, &p.to_le_bytes());
    }
    put(&mut h, 108, &(VOX_OFFSET as f32).to_le_bytes());
    if dtype != Dtype::F32 {
        put(&mut h, 112, &(slope as f32).to_le_bytes());
        put(&mut h, 116, &(inter as f32).to_le_bytes());
    }
    // mm units
    h[123] = 2;
    if let Some((lo, hi)) = v.intensity_range() {
        let d = format!("{RANGE_TAG}{lo:?},{hi:?}");
        put(&mut h, 148, &d.as_bytes()[..d.len().min(79)]);
    }
    // qform: identity rotation with voxel spacing
    put(&mut h, 252, &1i16.to_le_bytes());
    put(&mut h, 344, b"n+1\0");

    let mut out = h;
    out.reserve(q.len() * dtype.size());
    match dtype {
        Dtype::U8 => out.extend(q.iter().map(|&x| x as u8)),
        Dtype::I16 => q.iter().for_each(|&x| out.extend((x as i16).to_le_bytes())),
        Dtype::F32 => q.iter().for_each(|&x| out.extend((x as f32).to_le_bytes())),
    }
    Ok(out)
}

pub fn write(v: &Volume, path: &Path, dtype: Dtype) -> Result<()> {
    atomic_write(path, &encode(v, dtype)?)
}
