//! Training-pair synthesis, model training, super-resolution inference and
//! the evaluation experiments built on them.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::features::{featurize_selected_flat, FeatureBank, FeatureSet};
use crate::forest::{train_forest, EnsembleMode, Forest, ForestConfig, TrainingSet};
use crate::metrics::{QualityReport, SsimMode};
use crate::par;
use crate::patch::{Accumulator, PatchGrid};
use crate::pca::{fit_from_accumulator, fit_standardized, CovarianceAccumulator, PcaModel, DEFAULT_VARIANCE_TARGET};
use crate::resample::{tricubic_resample, ResampleOptions};
use crate::volume::Volume;

/// Interpolation kernel used for degradation and upsampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InterpKernel {
    /// Keys cubic convolution, a = -0.5.
    #[default]
    KeysCubic,
}

impl InterpKernel {
    pub fn name(self) -> &'static str {
        match self {
            InterpKernel::KeysCubic => "keys-cubic",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "keys-cubic" | "tricubic" => Some(InterpKernel::KeysCubic),
            _ => None,
        }
    }
}

/// How LR volumes are synthesized from HR ones.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegradationSpec {
    /// HR / LR size ratio per axis.
    pub scale: [f64; 3],
    /// Stretch the kernel when shrinking.
    pub antialias: bool,
    pub kernel: InterpKernel,
}

impl Default for DegradationSpec {
    fn default() -> Self {
        Self {
            scale: [2.0; 3],
            antialias: true,
            kernel: InterpKernel::KeysCubic,
        }
    }
}

impl DegradationSpec {
    pub fn isotropic(scale: f64) -> Self {
        Self {
            scale: [scale; 3],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale.iter().any(|&s| !(s > 1.0) || !s.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "degradation scale {:?} must exceed 1 on every axis",
                self.scale
            )));
        }
        Ok(())
    }

    /// HR extents must be multiples of these for down/up sizes to round-trip.
    pub fn divisor(&self) -> [usize; 3] {
        self.scale.map(|s| {
            let r = libm::round(s);
            if (s - r).abs() < 1e-9 {
                r as usize
            } else {
                1
            }
        })
    }

    fn options(&self) -> ResampleOptions {
        ResampleOptions {
            antialias: self.antialias,
        }
    }

    pub fn degrade(&self, hr: &Volume) -> Result<Volume> {
        self.validate()?;
        tricubic_resample(hr, self.scale.map(|s| 1.0 / s), self.options())
    }

    pub fn upsample(&self, lr: &Volume) -> Result<Volume> {
        self.validate()?;
        tricubic_resample(lr, self.scale, self.options())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SrConfig {
    pub patch: [usize; 3],
    pub stride: [usize; 3],
    /// Gaussian sigma (voxels) before the edge channels.
    pub sigma: f64,
    pub pca_target: f64,
    pub feature_set: FeatureSet,
    pub forest: ForestConfig,
    pub ensemble: EnsembleMode,
    /// Upper bound on training pairs per run, split evenly over volumes.
    pub sample_cap: usize,
    /// Keep only every tenth flat background patch.
    pub thin_background: bool,
    /// Scale each feature channel to unit variance before PCA.
    pub standardize_channels: bool,
}

impl Default for SrConfig {
    fn default() -> Self {
        Self {
            patch: [3; 3],
            stride: [1; 3],
            sigma: 1.0,
            pca_target: DEFAULT_VARIANCE_TARGET,
            feature_set: FeatureSet::DevEdge,
            forest: ForestConfig::default(),
            ensemble: EnsembleMode::Median,
            sample_cap: 200_000,
            thin_background: true,
            standardize_channels: true,
        }
    }
}

impl SrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch.iter().any(|&p| p < 3 || p % 2 == 0) {
            return Err(Error::InvalidParam(format!(
                "patch dims {:?} must be odd and >= 3",
                self.patch
            )));
        }
        if self.stride.contains(&0) {
            return Err(Error::InvalidParam("stride must be >= 1".into()));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidParam(format!("sigma {} must be >= 0", self.sigma)));
        }
        if !(self.pca_target > 0.0 && self.pca_target <= 1.0) {
            return Err(Error::InvalidParam(format!(
                "pca target {} outside (0, 1]",
                self.pca_target
            )));
        }
        if self.sample_cap == 0 {
            return Err(Error::InvalidParam("sample cap must be >= 1".into()));
        }
        self.forest.validate()
    }
}

/// Everything inference needs besides the forest and PCA.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelMeta {
    pub patch: [usize; 3],
    pub degradation: DegradationSpec,
    pub sigma: f64,
    pub feature_set: FeatureSet,
    pub pca_target: f64,
    pub training_ids: Vec<String>,
    pub training_pairs: usize,
}

/// A trained forest bundled with its descriptor projection.
#[derive(Debug, Clone, PartialEq)]
pub struct SrModel {
    pub forest: Forest,
    pub pca: PcaModel,
    pub meta: ModelMeta,
}

impl SrModel {
    pub fn validate(&self) -> Result<()> {
        let plen = self.meta.patch.iter().product::<usize>();
        let raw = self.meta.feature_set.channel_count() * plen;
        if self.pca.input_dim() != raw {
            return Err(Error::DimMismatch {
                what: "model pca input",
                expected: raw,
                actual: self.pca.input_dim(),
            });
        }
        if self.forest.input_dim() != self.pca.output_dim() {
            return Err(Error::DimMismatch {
                what: "forest input (pca output)",
                expected: self.pca.output_dim(),
                actual: self.forest.input_dim(),
            });
        }
        if self.forest.output_dim() != plen {
            return Err(Error::DimMismatch {
                what: "forest output (patch voxels)",
                expected: plen,
                actual: self.forest.output_dim(),
            });
        }
        Ok(())
    }
}

/// One HR volume taken through crop, normalize, degrade and upsample.
#[derive(Debug, Clone)]
pub struct PreparedVolume {
    /// Cropped, normalized ground truth.
    pub hr: Volume,
    pub lr: Volume,
    /// `lr` upsampled back onto the HR grid.
    pub upsampled: Volume,
}

pub fn prepare_volume(hr: &Volume, spec: &DegradationSpec) -> Result<PreparedVolume> {
    spec.validate()?;
    let cropped = hr.crop_to_multiple(spec.divisor())?;
    let hr = if cropped.is_normalized() {
        cropped
    } else {
        cropped.normalize()?
    };
    let lr = spec.degrade(&hr)?;
    let upsampled = spec.upsample(&lr)?;
    if upsampled.dims() != hr.dims() {
        return Err(Error::InvalidDims(format!(
            "degrading {:?} and upsampling again gave {:?}",
            hr.dims(),
            upsampled.dims()
        )));
    }
    Ok(PreparedVolume { hr, lr, upsampled })
}

/// Paired samples plus the PCA fitted on their raw descriptors.
#[derive(Debug, Clone)]
pub struct TrainingPairs {
    pub set: TrainingSet,
    pub pca: PcaModel,
    /// `(volume index, patch index)` each sample came from.
    pub origins: Vec<(u32, u32)>,
}

struct PairSource {
    bank: FeatureBank,
    residual: Vec<f32>,
    grid: PatchGrid,
    selected: Vec<usize>,
}

fn patch_is_flat(data: &[f32], grid: &PatchGrid, i: usize, buf: &mut [f32]) -> bool {
    grid.gather(data, i, buf);
    buf.iter().all(|&v| v == buf[0])
}

/// Evenly spaced subset of at most `cap` entries.
fn thin_evenly(v: Vec<usize>, cap: usize) -> Vec<usize> {
    if v.len() <= cap {
        return v;
    }
    let n = v.len();
    (0..cap).map(|j| v[j * n / cap]).collect()
}

/// Builds `(descriptor, residual patch)` pairs from HR examples.
pub fn make_training_pairs(
    hr_volumes: &[Volume],
    spec: &DegradationSpec,
    cfg: &SrConfig,
) -> Result<TrainingPairs> {
    spec.validate()?;
    cfg.validate()?;
    if hr_volumes.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let per_volume_cap = cfg.sample_cap.div_ceil(hr_volumes.len());

    let sources = par::map_range(hr_volumes.len(), |v| -> Result<PairSource> {
        let p = prepare_volume(&hr_volumes[v], spec)?;
        let grid = PatchGrid::new(p.hr.dims(), cfg.patch, cfg.stride)?;
        if grid.is_empty() {
            return Err(Error::InvalidDims("empty patch grid".into()));
        }
        let bank = FeatureBank::compute(&p.upsampled, cfg.sigma, cfg.feature_set)?;
        let residual: Vec<f32> = p
            .hr
            .data()
            .iter()
            .zip(p.upsampled.data())
            .map(|(&h, &u)| h - u)
            .collect();

        let mut selected = Vec::with_capacity(grid.len());
        let mut buf = vec![0.0f32; grid.patch_len()];
        let mut background = 0usize;
        for i in 0..grid.len() {
            if cfg.thin_background {
                grid.gather(&residual, i, &mut buf);
                let zero_residual = buf.iter().all(|&r| r == 0.0);
                if zero_residual && patch_is_flat(p.upsampled.data(), &grid, i, &mut buf) {
                    background += 1;
                    if (background - 1) % 10 != 0 {
                        continue;
                    }
                }
            }
            selected.push(i);
        }
        let selected = thin_evenly(selected, per_volume_cap);
        Ok(PairSource {
            bank,
            residual,
            grid,
            selected,
        })
    });
    let sources = sources.into_iter().collect::<Result<Vec<_>>>()?;

    let raw_dim = sources[0].bank.raw_dim(&sources[0].grid);
    let accumulators = par::map_range(sources.len(), |v| -> Result<CovarianceAccumulator> {
        let src = &sources[v];
        let mut acc = CovarianceAccumulator::new(raw_dim);
        let mut raw = vec![0.0f32; raw_dim];
        for &i in &src.selected {
            src.bank.gather_raw(&src.grid, i, &mut raw);
            acc.push(&raw)?;
        }
        Ok(acc)
    });
    let mut cov = CovarianceAccumulator::new(raw_dim);
    for acc in accumulators {
        cov.merge(acc?)?;
    }
    let pca = if cfg.standardize_channels {
        fit_standardized(cov, cfg.pca_target, sources[0].grid.patch_len())?
    } else {
        fit_from_accumulator(cov, cfg.pca_target)?
    };

    let d_l = pca.output_dim();
    let d_h = sources[0].grid.patch_len();
    let total: usize = sources.iter().map(|s| s.selected.len()).sum();
    let mut x_l = Vec::with_capacity(total * d_l);
    let mut x_h = Vec::with_capacity(total * d_h);
    let mut origins = Vec::with_capacity(total);
    let mut patch = vec![0.0f32; d_h];
    for (v, src) in sources.iter().enumerate() {
        x_l.extend(featurize_selected_flat(&src.bank, &src.grid, &pca, &src.selected)?);
        for &i in &src.selected {
            src.grid.gather(&src.residual, i, &mut patch);
            x_h.extend_from_slice(&patch);
            origins.push((v as u32, i as u32));
        }
    }
    Ok(TrainingPairs {
        set: TrainingSet::new(d_l, d_h, x_l, x_h)?,
        pca,
        origins,
    })
}

/// `cfg` with the minimum leaf size raised to `d_l + 1`, so that every leaf
/// regression has more samples than unknowns per output.
pub fn leaf_size_for(cfg: &ForestConfig, d_l: usize) -> ForestConfig {
    ForestConfig {
        min_leaf_samples: cfg.min_leaf_samples.max(d_l + 1),
        ..*cfg
    }
}

/// Synthesizes training pairs from `volumes` and fits a forest.
pub fn train_model(
    volumes: &[(String, Volume)],
    spec: &DegradationSpec,
    cfg: &SrConfig,
    seed: u64,
) -> Result<SrModel> {
    let hr: Vec<Volume> = volumes.iter().map(|(_, v)| v.clone()).collect();
    let pairs = make_training_pairs(&hr, spec, cfg)?;
    let forest_cfg = leaf_size_for(&cfg.forest, pairs.set.d_l());
    let forest = train_forest(&pairs.set, &forest_cfg, seed)?;
    Ok(SrModel {
        forest,
        pca: pairs.pca,
        meta: ModelMeta {
            patch: cfg.patch,
            degradation: *spec,
            sigma: cfg.sigma,
            feature_set: cfg.feature_set,
            pca_target: cfg.pca_target,
            training_ids: volumes.iter().map(|(id, _)| id.clone()).collect(),
            training_pairs: pairs.set.len(),
        },
    })
}

/// Upsamples `v_l` and adds the forest's residual prediction.
///
/// Inputs without a recorded intensity range are normalized first and the
/// result mapped back to their range. The model defines patch size, scale,
/// sigma and features; `cfg` contributes ensemble mode and stride, and its
/// patch dims and feature set must agree with the model.
pub fn super_resolve(v_l: &Volume, model: &SrModel, cfg: &SrConfig) -> Result<Volume> {
    model.validate()?;
    if cfg.patch != model.meta.patch {
        return Err(Error::InvalidParam(format!(
            "config patch {:?} does not match model patch {:?}",
            cfg.patch, model.meta.patch
        )));
    }
    if cfg.feature_set != model.meta.feature_set {
        return Err(Error::InvalidParam(format!(
            "config features {} do not match model features {}",
            cfg.feature_set.name(),
            model.meta.feature_set.name()
        )));
    }
    if cfg.stride.contains(&0) {
        return Err(Error::InvalidParam("stride must be >= 1".into()));
    }

    let restore = !v_l.is_normalized();
    let input = if restore { v_l.normalize()? } else { v_l.clone() };
    let up = model.meta.degradation.upsample(&input)?;
    let residual = predict_residual(&up, model, cfg.stride, cfg.ensemble)?;

    let data = up
        .data()
        .iter()
        .zip(residual.data())
        .map(|(&u, &r)| (u + r).clamp(0.0, 1.0))
        .collect();
    let out = up.with_data(data);
    Ok(if restore { out.denormalize() } else { out })
}

/// Overlap-averaged residual volume predicted for the upsampled volume `up`.
pub fn predict_residual(
    up: &Volume,
    model: &SrModel,
    stride: [usize; 3],
    mode: EnsembleMode,
) -> Result<Volume> {
    let meta = &model.meta;
    let bank = FeatureBank::compute(up, meta.sigma, meta.feature_set)?;
    let grid = PatchGrid::new(up.dims(), meta.patch, stride)?;
    let raw_dim = bank.raw_dim(&grid);
    if raw_dim != model.pca.input_dim() {
        return Err(Error::DimMismatch {
            what: "descriptor (model vs features)",
            expected: model.pca.input_dim(),
            actual: raw_dim,
        });
    }
    let forest = &model.forest;
    let (d_l, d_h) = (forest.input_dim(), forest.output_dim());

    let mut residual = vec![0.0f32; grid.len() * d_h];
    const CHUNK: usize = 256;
    par::for_each_chunk_mut(&mut residual, CHUNK * d_h, |c, out| {
        let mut raw = vec![0.0f32; raw_dim];
        let mut x = vec![0.0f32; d_l];
        let mut scratch = vec![0.0f32; forest.trees().len() * d_h];
        for (j, dst) in out.chunks_exact_mut(d_h).enumerate() {
            bank.gather_raw(&grid, c * CHUNK + j, &mut raw);
            model
                .pca
                .project_into(&raw, &mut x)
                .expect("descriptor length checked");
            forest.predict_unchecked(&x, mode, &mut scratch, dst);
        }
    });

    let mut acc = Accumulator::new(up.dims());
    for (i, patch) in residual.chunks_exact(d_h).enumerate() {
        acc.add_patch(&grid, i, patch);
    }
    Ok(acc.finalize().0)
}

/// Per-volume metrics for the learned and the interpolation-only result.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRow {
    pub id: String,
    pub vsrf: QualityReport,
    pub tricubic: QualityReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub rows: Vec<ExperimentRow>,
    pub mean: ExperimentRow,
}

impl ExperimentReport {
    fn from_rows(rows: Vec<ExperimentRow>) -> Self {
        let n = rows.len().max(1) as f64;
        let avg = |f: &dyn Fn(&ExperimentRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        let mean = ExperimentRow {
            id: "mean".into(),
            vsrf: QualityReport {
                id: "mean".into(),
                psnr_db: avg(&|r| r.vsrf.psnr_db),
                ssim: avg(&|r| r.vsrf.ssim),
            },
            tricubic: QualityReport {
                id: "mean".into(),
                psnr_db: avg(&|r| r.tricubic.psnr_db),
                ssim: avg(&|r| r.tricubic.ssim),
            },
        };
        Self { rows, mean }
    }

    /// Per-volume rows followed by the mean row.
    pub fn table_rows(&self) -> impl Iterator<Item = &ExperimentRow> {
        self.rows.iter().chain(core::iter::once(&self.mean))
    }

    /// Flat `(id, method, psnr_db, ssim)` records, one per volume and method.
    pub fn records(&self) -> Vec<(String, &'static str, f64, f64)> {
        let mut out = Vec::with_capacity(self.rows.len() * 2);
        for r in &self.rows {
            out.push((r.id.clone(), "vsrf", r.vsrf.psnr_db, r.vsrf.ssim));
            out.push((r.id.clone(), "tricubic", r.tricubic.psnr_db, r.tricubic.ssim));
        }
        out
    }
}

/// Degrades each test volume, super-resolves it with `model` and scores
/// both the result and plain tricubic upsampling against the ground truth.
pub fn evaluate_model(
    model: &SrModel,
    test: &[(String, Volume)],
    cfg: &SrConfig,
    ssim_mode: SsimMode,
) -> Result<ExperimentReport> {
    let spec = model.meta.degradation;
    let mut rows = Vec::with_capacity(test.len());
    for (id, v) in test {
        let p = prepare_volume(v, &spec)?;
        let sr = super_resolve(&p.lr, model, cfg)?;
        rows.push(ExperimentRow {
            id: id.clone(),
            vsrf: QualityReport::evaluate(id.clone(), &p.hr, &sr, ssim_mode)?,
            tricubic: QualityReport::evaluate(id.clone(), &p.hr, &p.upsampled, ssim_mode)?,
        });
    }
    Ok(ExperimentReport::from_rows(rows))
}

fn check_disjoint(train: &[(String, Volume)], test: &[(String, Volume)]) -> Result<()> {
    for (id, _) in test {
        if train.iter().any(|(t, _)| t == id) {
            return Err(Error::Overlap(id.clone()));
        }
    }
    Ok(())
}

/// Trains on `train` and evaluates on `test`.
pub fn run_experiment(
    train: &[(String, Volume)],
    test: &[(String, Volume)],
    spec: &DegradationSpec,
    cfg: &SrConfig,
    seed: u64,
) -> Result<ExperimentReport> {
    check_disjoint(train, test)?;
    let model = train_model(train, spec, cfg, seed)?;
    evaluate_model(&model, test, cfg, SsimMode::Volume)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub label: String,
    pub report: ExperimentReport,
}

/// One experiment per count, training on the first `count` volumes.
pub fn sweep_training_volumes(
    train: &[(String, Volume)],
    test: &[(String, Volume)],
    counts: &[usize],
    spec: &DegradationSpec,
    cfg: &SrConfig,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    check_disjoint(train, test)?;
    let mut rows = Vec::with_capacity(counts.len());
    for &count in counts {
        if count == 0 || count > train.len() {
            return Err(Error::InvalidParam(format!(
                "training count {count} outside 1..={}",
                train.len()
            )));
        }
        let model = train_model(&train[..count], spec, cfg, seed)?;
        rows.push(SweepRow {
            label: format!("trainvols={count}"),
            report: evaluate_model(&model, test, cfg, SsimMode::Volume)?,
        });
    }
    Ok(rows)
}

/// Ensemble mode x feature set grid. Each feature set trains one model,
/// evaluated under both ensemble modes.
pub fn sweep_ablation(
    train: &[(String, Volume)],
    test: &[(String, Volume)],
    spec: &DegradationSpec,
    cfg: &SrConfig,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    check_disjoint(train, test)?;
    let mut rows = Vec::with_capacity(4);
    for features in [FeatureSet::Dev, FeatureSet::DevEdge] {
        let cfg = SrConfig {
            feature_set: features,
            ..*cfg
        };
        let model = train_model(train, spec, &cfg, seed)?;
        for ensemble in [EnsembleMode::Average, EnsembleMode::Median] {
            let cfg = SrConfig { ensemble, ..cfg };
            rows.push(SweepRow {
                label: format!("{}+{}", ensemble.name(), features.name()),
                report: evaluate_model(&model, test, &cfg, SsimMode::Volume)?,
            });
        }
    }
    Ok(rows)
}
