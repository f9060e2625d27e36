//! Volume containers: a minimal NIfTI-1 subset and flat raw data with a
//! JSON sidecar.

pub mod nifti;
pub mod raw;

use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use vsrf_core::Volume;

use crate::error::{Error, Result};

/// On-disk sample type.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    U8,
    I16,
    F32,
}

impl Dtype {
    pub fn name(self) -> &'static str {
        match self {
            Dtype::U8 => "u8",
            Dtype::I16 => "i16",
            Dtype::F32 => "f32",
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::U8 => 1,
            Dtype::I16 => 2,
            Dtype::F32 => 4,
        }
    }
}

impl FromStr for Dtype {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "u8" | "uint8" => Ok(Dtype::U8),
            "i16" | "int16" => Ok(Dtype::I16),
            "f32" | "float32" => Ok(Dtype::F32),
            _ => Err(format!("unknown dtype '{s}' (expected u8, i16 or f32)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Container {
    Nifti1,
    /// Flat samples plus `<stem>.json`.
    Raw,
}

impl Container {
    /// Picks the container from the file name: `.nii` or `.raw`.
    pub fn from_path(path: &Path) -> Result<Self> {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if name.ends_with(".nii.gz") {
            return Err(Error::Unsupported {
                path: path.into(),
                field: "compression",
                value: "gzip (decompress the .nii.gz first)".into(),
            });
        }
        match path.extension().and_then(|e| e.to_str()) {
            Some("nii") => Ok(Container::Nifti1),
            Some("raw") => Ok(Container::Raw),
            other => Err(Error::Unsupported {
                path: path.into(),
                field: "container",
                value: format!("extension {:?} (expected .nii or .raw)", other.unwrap_or("")),
            }),
        }
    }
}

pub fn is_volume_path(path: &Path) -> bool {
    matches!(path.extension().and_then(|e| e.to_str()), Some("nii" | "raw"))
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    match Container::from_path(path)? {
        Container::Nifti1 => nifti::read(path),
        Container::Raw => raw::read(path),
    }
}

/// Writes `v` as 32-bit floats in the container implied by the extension.
pub fn write_volume(v: &Volume, path: &Path) -> Result<()> {
    write_volume_as(v, path, Dtype::F32)
}

pub fn write_volume_as(v: &Volume, path: &Path, dtype: Dtype) -> Result<()> {
    match Container::from_path(path)? {
        Container::Nifti1 => nifti::write(v, path, dtype),
        Container::Raw => raw::write(v, path, dtype),
    }
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never see a partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Affine map from the volume's values onto an integer type's range.
pub(crate) fn quantize(v: &Volume, dtype: Dtype) -> (Vec<f64>, f64, f64) {
    let (lo, hi) = v.min_max();
    let (qmin, qmax) = match dtype {
        Dtype::U8 => (0.0, 255.0),
        Dtype::I16 => (-32768.0, 32767.0),
        Dtype::F32 => return (v.data().iter().map(|&x| x as f64).collect(), 1.0, 0.0),
    };
    let span = (hi - lo) as f64;
    let slope = if span > 0.0 { span / (qmax - qmin) } else { 1.0 };
    let inter = lo as f64 - qmin * slope;
    let q = v
        .data()
        .iter()
        .map(|&x| ((x as f64 - inter) / slope).round().clamp(qmin, qmax))
        .collect();
    (q, slope, inter)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn container_from_extension() {
        assert_eq!(Container::from_path(Path::new("a/b.nii")).unwrap(), Container::Nifti1);
        assert_eq!(Container::from_path(Path::new("b.raw")).unwrap(), Container::Raw);
        assert!(matches!(
            Container::from_path(Path::new("b.nii.gz")),
            Err(Error::Unsupported { field: "compression", .. })
        ));
        assert!(Container::from_path(Path::new("b.mgz")).is_err());
    }

    #[test]
    fn quantize_spans_the_type() {
        let v = Volume::new([2, 1, 1], vec![-1.0, 3.0]).unwrap();
        let (q, slope, inter) = quantize(&v, Dtype::U8);
        assert_eq!(q, vec![0.0, 255.0]);
        assert!((q[1] * slope + inter - 3.0).abs() < 1e-12);
    }
}
