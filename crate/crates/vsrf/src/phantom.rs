//! Procedural test volumes.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vsrf_core::{Result, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhantomKind {
    /// Sum of random anisotropic Gaussian bumps.
    Blobs,
    /// Nested folded ellipsoid boundaries with short smooth edges.
    Shells,
    /// Piecewise smooth gradients.
    Ramps,
}

impl PhantomKind {
    pub fn name(self) -> &'static str {
        match self {
            PhantomKind::Blobs => "blobs",
            PhantomKind::Shells => "shells",
            PhantomKind::Ramps => "ramps",
        }
    }
}

impl fmt::Display for PhantomKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown phantom kind '{0}' (expected blobs, shells or ramps)")]
pub struct UnknownKind(pub String);

impl FromStr for PhantomKind {
    type Err = UnknownKind;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "blobs" => Ok(PhantomKind::Blobs),
            "shells" => Ok(PhantomKind::Shells),
            "ramps" => Ok(PhantomKind::Ramps),
            _ => Err(UnknownKind(s.to_string())),
        }
    }
}

pub const MIN_PHANTOM_DIM: usize = 16;

/// Deterministic normalized phantom. Every extent must be at least 16.
pub fn make_phantom(kind: PhantomKind, dims: [usize; 3], seed: u64) -> Result<Volume> {
    if dims.iter().any(|&d| d < MIN_PHANTOM_DIM) {
        return Err(vsrf_core::Error::InvalidDims(format!(
            "phantom dims {dims:?} must be at least {MIN_PHANTOM_DIM} per axis"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = match kind {
        PhantomKind::Blobs => blobs(dims, &mut rng)?,
        PhantomKind::Shells => shells(dims, &mut rng)?,
        PhantomKind::Ramps => ramps(dims, &mut rng)?,
    };
    v.normalize()
}

fn extent(dims: [usize; 3]) -> [f64; 3] {
    dims.map(|d| d as f64)
}

fn blobs(dims: [usize; 3], rng: &mut ChaCha8Rng) -> Result<Volume> {
    let e = extent(dims);
    let n = rng.gen_range(8..16);
    let bumps: Vec<([f64; 3], [f64; 3], f64)> = (0..n)
        .map(|_| {
            let c = e.map(|s| rng.gen_range(0.15..0.85) * s);
            let w = e.map(|s| rng.gen_range(0.04..0.18) * s);
            let a = rng.gen_range(0.3..1.0);
            (c, w, a)
        })
        .collect();
    Volume::from_fn(dims, |x, y, z| {
        let p = [x as f64, y as f64, z as f64];
        bumps
            .iter()
            .map(|(c, w, a)| {
                let q: f64 = (0..3).map(|i| ((p[i] - c[i]) / w[i]).powi(2)).sum();
                a * (-0.5 * q).exp()
            })
            .sum::<f64>() as f32
    })
}

struct Shell {
    radius: f64,
    level: f64,
    fold_amp: f64,
    fold_k: [f64; 2],
    fold_phase: [f64; 2],
}

fn shells(dims: [usize; 3], rng: &mut ChaCha8Rng) -> Result<Volume> {
    let e = extent(dims);
    let center = e.map(|s| s * (0.5 + rng.gen_range(-0.05..0.05)));
    let axes = e.map(|s| s * rng.gen_range(0.36..0.46));
    let n = rng.gen_range(3..6);
    let shells: Vec<Shell> = (0..n)
        .map(|i| Shell {
            radius: 1.0 - 0.8 * i as f64 / n as f64 - rng.gen_range(0.0..0.06),
            level: rng.gen_range(0.25..1.0),
            fold_amp: rng.gen_range(0.02..0.07),
            fold_k: [rng.gen_range(3..9) as f64, rng.gen_range(2..7) as f64],
            fold_phase: [rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI)],
        })
        .collect();
    let mean_axis = axes.iter().sum::<f64>() / 3.0;
    // Half-width of each edge ramp in voxels; beyond it plateaus are exactly flat.
    let width = rng.gen_range(0.8..1.4);
    Volume::from_fn(dims, |x, y, z| {
        let q = [
            (x as f64 - center[0]) / axes[0],
            (y as f64 - center[1]) / axes[1],
            (z as f64 - center[2]) / axes[2],
        ];
        let rho = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt();
        let theta = q[1].atan2(q[0]);
        let phi = if rho > 0.0 { (q[2] / rho).acos() } else { 0.0 };
        let mut value = 0.0;
        for s in &shells {
            let fold = 1.0
                + s.fold_amp
                    * (s.fold_k[0] * theta + s.fold_phase[0]).sin()
                    * (s.fold_k[1] * phi + s.fold_phase[1]).sin();
            let dist = (s.radius * fold - rho) * mean_axis;
            value += s.level * smootherstep((dist + width) / (2.0 * width));
        }
        value as f32
    })
}

fn smootherstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * t * (t * (6.0 * t - 15.0) + 10.0)
}

fn ramps(dims: [usize; 3], rng: &mut ChaCha8Rng) -> Result<Volume> {
    let e = extent(dims);
    let n = rng.gen_range(3..7);
    // Each region is the half-space side of a random plane with its own
    // linear gradient; values accumulate across planes.
    let planes: Vec<([f64; 3], f64, [f64; 3])> = (0..n)
        .map(|_| {
            let normal = random_unit(rng);
            let point = e.map(|s| rng.gen_range(0.25..0.75) * s);
            let offset = normal.iter().zip(&point).map(|(a, b)| a * b).sum();
            let grad = random_unit(rng).map(|g| g * rng.gen_range(0.2..1.0) / e[0]);
            (normal, offset, grad)
        })
        .collect();
    Volume::from_fn(dims, |x, y, z| {
        let p = [x as f64, y as f64, z as f64];
        planes
            .iter()
            .map(|(nrm, off, g)| {
                let side = nrm.iter().zip(&p).map(|(a, b)| a * b).sum::<f64>() - off;
                if side >= 0.0 {
                    0.3 + g.iter().zip(&p).map(|(a, b)| a * b).sum::<f64>()
                } else {
                    0.0
                }
            })
            .sum::<f64>() as f32
    })
}

fn random_unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0f64..1.0),
        ];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 0.1 && n <= 1.0 {
            return v.map(|c| c / n);
        }
    }
}
