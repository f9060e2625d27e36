//! Flat samples (x fastest) with a JSON sidecar next to them:
//! `vol.raw` + `vol.json`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vsrf_core::Volume;

use super::{atomic_write, quantize, read_file, Dtype};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub dims: [usize; 3],
    #[serde(default = "unit_spacing")]
    pub spacing: [f32; 3],
    pub dtype: String,
    #[serde(default = "little")]
    pub endianness: String,
    /// Maps stored integers back to intensities: `v * slope + inter`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<(f64, f64)>,
    #[serde(default)]
    pub intensity_range: Option<(f32, f32)>,
}

fn unit_spacing() -> [f32; 3] {
    [1.0; 3]
}

fn little() -> String {
    "little".into()
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn read(path: &Path) -> Result<Volume> {
    let meta_path = sidecar_path(path);
    let meta: Sidecar = serde_json::from_slice(&read_file(&meta_path)?)
        .map_err(|e| Error::format(&meta_path, e.to_string()))?;
    let dtype: Dtype = meta.dtype.parse().map_err(|_| Error::Unsupported {
        path: meta_path.clone(),
        field: "dtype",
        value: meta.dtype.clone(),
    })?;
    let big = match meta.endianness.as_str() {
        "little" => false,
        "big" => true,
        other => {
            return Err(Error::Unsupported {
                path: meta_path,
                field: "endianness",
                value: other.into(),
            })
        }
    };
    let bytes = read_file(path)?;
    let n = meta.dims.iter().product::<usize>();
    let need = n * dtype.size();
    if bytes.len() < need {
        return Err(Error::Truncated {
            path: path.into(),
            what: format!("data ({} bytes, sidecar implies {need})", bytes.len()),
        });
    }
    if bytes.len() > need {
        return Err(Error::format(
            path,
            format!("{} bytes, sidecar implies {need}", bytes.len()),
        ));
    }
    let word = |c: &[u8]| -> [u8; 4] {
        let mut a: [u8; 4] = c.try_into().unwrap();
        if big {
            a.reverse();
        }
        a
    };
    let (slope, inter) = meta.scale.unwrap_or((1.0, 0.0));
    let data: Vec<f32> = match dtype {
        Dtype::F32 => bytes.chunks_exact(4).map(|c| f32::from_le_bytes(word(c))).collect(),
        Dtype::I16 => bytes
            .chunks_exact(2)
            .map(|c| {
                let v = if big {
                    i16::from_be_bytes([c[0], c[1]])
                } else {
                    i16::from_le_bytes([c[0], c[1]])
                };
                (v as f64 * slope + inter) as f32
            })
            .collect(),
        Dtype::U8 => bytes.iter().map(|&v| (v as f64 * slope + inter) as f32).collect(),
    };
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::format(path, "non-finite voxel values"));
    }
    let mut v = Volume::with_spacing(meta.dims, meta.spacing, data)?;
    v.set_intensity_range(meta.intensity_range);
    Ok(v)
}

pub fn write(v: &Volume, path: &Path, dtype: Dtype) -> Result<()> {
    let (q, slope, inter) = quantize(v, dtype);
    let mut bytes = Vec::with_capacity(q.len() * dtype.size());
    match dtype {
        Dtype::U8 => bytes.extend(q.iter().map(|&x| x as u8)),
        Dtype::I16 => q.iter().for_each(|&x| bytes.extend((x as i16).to_le_bytes())),
        Dtype::F32 => q.iter().for_each(|&x| bytes.extend((x as f32).to_le_bytes())),
    }
    let meta = Sidecar {
        dims: v.dims(),
        spacing: v.spacing(),
        dtype: dtype.name().into(),
        endianness: little(),
        scale: (dtype != Dtype::F32).then_some((slope, inter)),
        intensity_range: v.intensity_range(),
    };
    let json = serde_json::to_vec_pretty(&meta).expect("sidecar serializes");
    // data first: a sidecar never points at a missing file
    atomic_write(path, &bytes)?;
    atomic_write(&sidecar_path(path), &json)
}
