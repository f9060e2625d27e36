//! `vsrf` command-line interface.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use vsrf_core::features::CHANNEL_NAMES;
use vsrf_core::metrics::SsimMode;
use vsrf_core::pipeline::{self, DegradationSpec, SrConfig};
use vsrf_core::{EnsembleMode, FeatureBank, FeatureSet, QualityReport, Volume};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::io::{self, atomic_write, Dtype};
use crate::model;
use crate::phantom::{make_phantom, PhantomKind};
use crate::report::{self, Record};

pub const THREADS_ENV: &str = "VSRF_THREADS";

#[derive(Debug, Parser)]
#[command(name = "vsrf", version, about = "Volume super-resolution with regression forests")]
pub struct Cli {
    /// TOML file with defaults for any flag (same key names); flags win
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Downscale a volume with the tricubic degradation model
    Degrade(DegradeArgs),
    /// Train a model from high-resolution volumes
    Train(TrainArgs),
    /// Super-resolve a low-resolution volume
    Sr(SrArgs),
    /// Compare a volume against a reference (PSNR, SSIM)
    Eval(EvalArgs),
    /// Train on one set, evaluate on another, against tricubic upsampling
    Experiment(ExperimentArgs),
    /// Training-volume count or ensemble/feature ablation tables
    Sweep(SweepArgs),
    /// Write a synthetic phantom volume
    Phantom(PhantomArgs),
    /// Print a model file's header and provenance
    ModelInfo(ModelInfoArgs),
    /// Compute feature channels of a volume
    Features(FeaturesArgs),
}

#[derive(Debug, Args)]
pub struct DegradeArgs {
    #[arg(long = "in", value_name = "HR")]
    pub input: PathBuf,
    #[arg(long, value_name = "LR")]
    pub out: PathBuf,
    /// Size ratio HR/LR [default: 2]
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long)]
    pub no_antialias: bool,
}

#[derive(Debug, Args, Default)]
pub struct TrainOpts {
    /// Number of trees [default: 30]
    #[arg(long)]
    pub trees: Option<usize>,
    /// Patch edge length, odd [default: 3]
    #[arg(long)]
    pub patch: Option<usize>,
    /// Weight of the LR variance in the split criterion [default: 1]
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Gaussian sigma before edge features [default: 1]
    #[arg(long)]
    pub sigma: Option<f64>,
    /// [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// dev or devedge [default: devedge]
    #[arg(long)]
    pub features: Option<String>,
    /// PCA retained-variance target [default: 0.999]
    #[arg(long)]
    pub pca: Option<f64>,
    /// Training pair cap per run [default: 200000]
    #[arg(long)]
    pub cap: Option<usize>,
    /// Minimum samples per leaf [default: 64]
    #[arg(long)]
    pub min_leaf: Option<usize>,
    /// [default: 15]
    #[arg(long)]
    pub max_depth: Option<usize>,
    /// Degradation size ratio [default: 2]
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long)]
    pub no_antialias: bool,
    /// Use raw feature channels without per-channel scaling
    #[arg(long)]
    pub no_standardize: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory of HR volumes (.nii / .raw) or individual files
    #[arg(long, required = true, num_args = 1..)]
    pub hr: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub opts: TrainOpts,
}

#[derive(Debug, Args)]
pub struct SrArgs {
    #[arg(long = "in", value_name = "LR")]
    pub input: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// median or average [default: median]
    #[arg(long)]
    pub ensemble: Option<String>,
    /// Inference patch stride [default: 1]
    #[arg(long)]
    pub stride: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long = "ref", value_name = "HR")]
    pub reference: PathBuf,
    #[arg(long, value_name = "SR")]
    pub test: PathBuf,
    /// Also score tricubic upsampling of this LR volume
    #[arg(long)]
    pub lr: Option<PathBuf>,
    /// volume or slice [default: volume]
    #[arg(long)]
    pub ssim_mode: Option<String>,
    /// Also write the records as JSON
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub train: Vec<PathBuf>,
    #[arg(long, required = true, num_args = 1..)]
    pub test: Vec<PathBuf>,
    #[command(flatten)]
    pub opts: TrainOpts,
    #[arg(long)]
    pub ensemble: Option<String>,
    #[arg(long)]
    pub ssim_mode: Option<String>,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// trainvols or ablation
    #[arg(long)]
    pub mode: String,
    #[arg(long, required = true, num_args = 1..)]
    pub train: Vec<PathBuf>,
    #[arg(long, required = true, num_args = 1..)]
    pub test: Vec<PathBuf>,
    /// Training-volume counts for trainvols [default: 1,3,5]
    #[arg(long, value_delimiter = ',')]
    pub counts: Option<Vec<usize>>,
    #[command(flatten)]
    pub opts: TrainOpts,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    /// blobs, shells or ramps
    #[arg(long)]
    pub kind: String,
    /// Edge length, or X,Y,Z
    #[arg(long, value_delimiter = ',', num_args = 1..=3, default_value = "64")]
    pub dims: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// u8, i16 or f32
    #[arg(long, default_value = "f32")]
    pub dtype: String,
}

#[derive(Debug, Args)]
pub struct ModelInfoArgs {
    pub model: PathBuf,
    /// Print the full JSON header
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Write every channel as `<dir>/<channel>.nii`
    #[arg(long, requires = "out_dir")]
    pub dump: bool,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub features: Option<String>,
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Parses arguments, runs the command and returns the exit status.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("vsrf: {e}");
        return e.exit_code();
    }
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => 0,
        Ok(Err(e)) => {
            eprintln!("vsrf: {e}");
            e.exit_code()
        }
        Err(_) => {
            eprintln!("vsrf: internal error");
            3
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| usage(format!("{THREADS_ENV} must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Core(vsrf_core::Error::Internal(e.to_string())))
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    match cli.command {
        Command::Degrade(a) => degrade(a, &cfg),
        Command::Train(a) => train(a, &cfg),
        Command::Sr(a) => sr(a, &cfg),
        Command::Eval(a) => eval(a, &cfg),
        Command::Experiment(a) => experiment(a, &cfg),
        Command::Sweep(a) => sweep(a, &cfg),
        Command::Phantom(a) => phantom(a),
        Command::ModelInfo(a) => model_info(a),
        Command::Features(a) => features(a, &cfg),
    }
}

fn print(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| Error::io("<stdout>", e))
}

fn degradation(scale: Option<f64>, no_antialias: bool, cfg: &Config) -> Result<DegradationSpec> {
    let scale = scale.or(cfg.f64("scale")?).unwrap_or(2.0);
    let spec = DegradationSpec {
        scale: [scale; 3],
        antialias: !(no_antialias || cfg.bool("no-antialias")?.unwrap_or(false)),
        ..DegradationSpec::default()
    };
    spec.validate()?;
    Ok(spec)
}

fn parse_ensemble(flag: Option<String>, cfg: &Config) -> Result<EnsembleMode> {
    let name = flag.or(cfg.str("ensemble")?).unwrap_or_else(|| "median".into());
    EnsembleMode::from_name(&name).ok_or_else(|| usage(format!("unknown ensemble mode '{name}'")))
}

fn parse_ssim_mode(flag: Option<String>, cfg: &Config) -> Result<SsimMode> {
    let name = flag.or(cfg.str("ssim-mode")?).unwrap_or_else(|| "volume".into());
    SsimMode::from_name(&name).ok_or_else(|| usage(format!("unknown ssim mode '{name}'")))
}

/// Resolved training settings: flags, then config file, then defaults.
fn train_settings(o: &TrainOpts, cfg: &Config) -> Result<(DegradationSpec, SrConfig, u64)> {
    let spec = degradation(o.scale, o.no_antialias, cfg)?;
    let mut c = SrConfig::default();
    let patch = o.patch.or(cfg.usize("patch")?).unwrap_or(3);
    c.patch = [patch; 3];
    c.sigma = o.sigma.or(cfg.f64("sigma")?).unwrap_or(c.sigma);
    c.pca_target = o.pca.or(cfg.f64("pca")?).unwrap_or(c.pca_target);
    c.sample_cap = o.cap.or(cfg.usize("cap")?).unwrap_or(c.sample_cap);
    c.standardize_channels = !(o.no_standardize || cfg.bool("no-standardize")?.unwrap_or(false));
    let fs = o.features.clone().or(cfg.str("features")?).unwrap_or_else(|| "devedge".into());
    c.feature_set = FeatureSet::from_name(&fs).ok_or_else(|| usage(format!("unknown feature set '{fs}'")))?;
    let f = &mut c.forest;
    f.n_trees = o.trees.or(cfg.usize("trees")?).unwrap_or(f.n_trees);
    f.kappa = o.kappa.or(cfg.f64("kappa")?).unwrap_or(f.kappa);
    f.min_leaf_samples = o.min_leaf.or(cfg.usize("min-leaf")?).unwrap_or(f.min_leaf_samples);
    f.max_depth = o.max_depth.or(cfg.usize("max-depth")?).unwrap_or(f.max_depth);
    c.validate()?;
    let seed = o.seed.or(cfg.u64("seed")?).unwrap_or(0);
    Ok((spec, c, seed))
}

/// Volumes from directories (sorted by name) and files, keyed by file stem.
pub fn load_volume_set(inputs: &[PathBuf]) -> Result<Vec<(String, Volume)>> {
    let mut paths = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| Error::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|q| q.is_file() && io::is_volume_path(q))
                .collect();
            found.sort();
            paths.extend(found);
        } else {
            paths.push(p.clone());
        }
    }
    if paths.is_empty() {
        return Err(Error::format(
            inputs.first().cloned().unwrap_or_default(),
            "no .nii or .raw volumes found",
        ));
    }
    let mut out: Vec<(String, Volume)> = Vec::with_capacity(paths.len());
    for p in paths {
        let id = volume_id(&p);
        if out.iter().any(|(i, _)| *i == id) {
            return Err(Error::format(&p, format!("duplicate volume id '{id}'")));
        }
        out.push((id, io::read_volume(&p)?));
    }
    Ok(out)
}

fn volume_id(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn degrade(a: DegradeArgs, cfg: &Config) -> Result<()> {
    let spec = degradation(a.scale, a.no_antialias, cfg)?;
    let hr = io::read_volume(&a.input)?;
    let lr = spec.degrade(&hr)?;
    io::write_volume(&lr, &a.out)
}

fn train(a: TrainArgs, cfg: &Config) -> Result<()> {
    let (spec, c, seed) = train_settings(&a.opts, cfg)?;
    let vols = load_volume_set(&a.hr)?;
    let m = pipeline::train_model(&vols, &spec, &c, seed)?;
    model::save_model(&m, &a.out)?;
    print(&format!(
        "trained {} trees on {} pairs from {} volumes (D_L = {})\n",
        m.forest.trees().len(),
        m.meta.training_pairs,
        vols.len(),
        m.pca.output_dim()
    ))
}

fn inference_config(m: &vsrf_core::SrModel, ensemble: EnsembleMode, stride: usize) -> SrConfig {
    SrConfig {
        patch: m.meta.patch,
        stride: [stride; 3],
        sigma: m.meta.sigma,
        feature_set: m.meta.feature_set,
        forest: *m.forest.config(),
        ensemble,
        ..SrConfig::default()
    }
}

fn sr(a: SrArgs, cfg: &Config) -> Result<()> {
    let m = model::load_model(&a.model)?;
    let ensemble = parse_ensemble(a.ensemble, cfg)?;
    let stride = a.stride.or(cfg.usize("stride")?).unwrap_or(1);
    if stride == 0 {
        return Err(usage("stride must be >= 1"));
    }
    let lr = io::read_volume(&a.input)?;
    let out = pipeline::super_resolve(&lr, &m, &inference_config(&m, ensemble, stride))?;
    io::write_volume(&out, &a.out)
}

/// Puts `v` on the reference's unit scale.
fn unit_scale(v: &Volume, reference: &Volume) -> Result<Volume> {
    if v.is_normalized() {
        return Ok(v.clone());
    }
    let (lo, hi) = reference.intensity_range().unwrap_or_else(|| reference.min_max());
    if hi.partial_cmp(&lo) != Some(std::cmp::Ordering::Greater) {
        return Err(vsrf_core::Error::DegenerateRange.into());
    }
    let span = (hi - lo) as f64;
    let data = v.data().iter().map(|&x| ((x as f64 - lo as f64) / span) as f32).collect();
    Ok(Volume::with_spacing(v.dims(), v.spacing(), data)?)
}

fn eval(a: EvalArgs, cfg: &Config) -> Result<()> {
    let mode = parse_ssim_mode(a.ssim_mode, cfg)?;
    let raw_ref = io::read_volume(&a.reference)?;
    let reference = if raw_ref.is_normalized() {
        raw_ref.clone()
    } else {
        raw_ref.normalize()?
    };
    let test = unit_scale(&io::read_volume(&a.test)?, &raw_ref)?;
    let id = volume_id(&a.reference);
    let mut records = vec![Record::from_quality(
        &QualityReport::evaluate(id.clone(), &reference, &test, mode)?,
        "test",
    )];
    if let Some(lr_path) = &a.lr {
        let lr = unit_scale(&io::read_volume(lr_path)?, &raw_ref)?;
        let (rd, ld) = (reference.dims(), lr.dims());
        let scale = [0, 1, 2].map(|i| rd[i] as f64 / ld[i] as f64);
        let up = vsrf_core::resample::tricubic_resample(&lr, scale, Default::default())?;
        records.push(Record::from_quality(
            &QualityReport::evaluate(id, &reference, &up, mode)?,
            "tricubic",
        ));
    }
    if let Some(p) = &a.json {
        atomic_write(p, report::json(&records).as_bytes())?;
    }
    print(&report::table(&records))
}

fn experiment(a: ExperimentArgs, cfg: &Config) -> Result<()> {
    let (spec, mut c, seed) = train_settings(&a.opts, cfg)?;
    c.ensemble = parse_ensemble(a.ensemble, cfg)?;
    let mode = parse_ssim_mode(a.ssim_mode, cfg)?;
    let train = load_volume_set(&a.train)?;
    let test = load_volume_set(&a.test)?;
    let rep = if mode == SsimMode::Volume {
        pipeline::run_experiment(&train, &test, &spec, &c, seed)?
    } else {
        for (id, _) in &test {
            if train.iter().any(|(t, _)| t == id) {
                return Err(vsrf_core::Error::Overlap(id.clone()).into());
            }
        }
        let m = pipeline::train_model(&train, &spec, &c, seed)?;
        pipeline::evaluate_model(&m, &test, &c, mode)?
    };
    let records = report::experiment_records(&rep, None);
    if let Some(p) = &a.json {
        atomic_write(p, report::json(&records).as_bytes())?;
    }
    print(&report::table(&records))
}

fn sweep(a: SweepArgs, cfg: &Config) -> Result<()> {
    let (spec, c, seed) = train_settings(&a.opts, cfg)?;
    let train = load_volume_set(&a.train)?;
    let test = load_volume_set(&a.test)?;
    let rows = match a.mode.as_str() {
        "trainvols" => {
            let counts = match a.counts {
                Some(c) => c,
                None => cfg.usize_list("counts")?.unwrap_or_else(|| vec![1, 3, 5]),
            };
            pipeline::sweep_training_volumes(&train, &test, &counts, &spec, &c, seed)?
        }
        "ablation" => pipeline::sweep_ablation(&train, &test, &spec, &c, seed)?,
        other => return Err(usage(format!("unknown sweep mode '{other}' (trainvols or ablation)"))),
    };
    let records = report::sweep_records(&rows);
    if let Some(p) = &a.json {
        atomic_write(p, report::json(&records).as_bytes())?;
    }
    print(&report::table(&records))
}

fn phantom(a: PhantomArgs) -> Result<()> {
    let kind: PhantomKind = a.kind.parse().map_err(|e: crate::phantom::UnknownKind| usage(e.to_string()))?;
    let dims = match a.dims[..] {
        [n] => [n; 3],
        [x, y, z] => [x, y, z],
        _ => return Err(usage("--dims takes one or three values")),
    };
    let dtype: Dtype = a.dtype.parse().map_err(usage)?;
    let v = make_phantom(kind, dims, a.seed)?;
    io::write_volume_as(&v, &a.out, dtype)
}

fn model_info(a: ModelInfoArgs) -> Result<()> {
    let h = model::read_header(&a.model)?;
    if a.json {
        let mut s = serde_json::to_string_pretty(&h).expect("header serializes");
        s.push('\n');
        return print(&s);
    }
    let leaves: usize = h.trees.iter().map(|t| t.leaves.len()).sum();
    let depth = h.trees.iter().map(|t| t.depth).max().unwrap_or(0);
    let lambda = match h.forest.lambda {
        model::LambdaHeader::Fixed { value } => format!("fixed {value}"),
        model::LambdaHeader::Auto { max_condition } => format!("auto (max condition {max_condition:e})"),
    };
    let lines = [
        ("format_version", model::FORMAT_VERSION.to_string()),
        ("toolkit_version", h.toolkit_version.clone()),
        ("trees", h.forest.n_trees.to_string()),
        ("max_depth", h.forest.max_depth.to_string()),
        ("depth_reached", depth.to_string()),
        ("leaves", leaves.to_string()),
        ("min_leaf_samples", h.forest.min_leaf_samples.to_string()),
        ("node_subsample", h.forest.node_subsample.to_string()),
        ("candidates", format!("{} pairs x {} thresholds", h.forest.n_pairs, h.forest.n_thresh)),
        ("kappa", h.forest.kappa.to_string()),
        ("lambda", lambda),
        ("patch", format!("{}x{}x{}", h.patch[0], h.patch[1], h.patch[2])),
        ("scale", format!("{}x{}x{}", h.scale[0], h.scale[1], h.scale[2])),
        ("antialias", h.antialias.to_string()),
        ("kernel", h.kernel.clone()),
        ("features", h.feature_set.clone()),
        ("sigma", h.sigma.to_string()),
        ("pca", format!("{} -> {} (retained {:.6}, target {})", h.pca.d_raw, h.pca.k, h.pca.retained_variance, h.pca_target)),
        ("d_l", h.d_l.to_string()),
        ("d_h", h.d_h.to_string()),
        ("seed", h.seed.to_string()),
        ("training_pairs", h.training_pairs.to_string()),
        ("training_ids", h.training_ids.join(",")),
        ("checksum", h.checksum.clone()),
    ];
    let mut s = String::new();
    for (k, v) in lines {
        s.push_str(&format!("{k} = {v}\n"));
    }
    print(&s)
}

fn features(a: FeaturesArgs, cfg: &Config) -> Result<()> {
    let v = io::read_volume(&a.input)?;
    let sigma = a.sigma.or(cfg.f64("sigma")?).unwrap_or(1.0);
    let fs = a.features.or(cfg.str("features")?).unwrap_or_else(|| "devedge".into());
    let set = FeatureSet::from_name(&fs).ok_or_else(|| usage(format!("unknown feature set '{fs}'")))?;
    let bank = FeatureBank::compute(&v, sigma, set)?;
    let mut s = String::from("channel\tmin\tmax\tmean\n");
    for (name, ch) in CHANNEL_NAMES.iter().zip(bank.channels()) {
        let (lo, hi) = ch.min_max();
        s.push_str(&format!("{name}\t{lo:.6}\t{hi:.6}\t{:.6}\n", ch.mean()));
    }
    if a.dump {
        let dir = a.out_dir.expect("clap enforces --out-dir");
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (name, ch) in CHANNEL_NAMES.iter().zip(bank.channels()) {
            io::write_volume(ch, &dir.join(format!("{name}.nii")))?;
        }
    }
    print(&s)
}
