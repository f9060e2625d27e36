//! Regression forest with pair-difference splits, a joint LR/HR variance
//! criterion and ridge-regressed linear leaves.
//!
//! Trees are trained independently, each from its own ChaCha8 stream seeded
//! with `seed ^ tree_index`, so training is deterministic for a given
//! training set, configuration and seed regardless of thread count.

mod leaf;
mod split;
mod tree;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::par;

pub use leaf::{fit_leaf, LambdaPolicy, LeafModel};
pub use split::{domain_variance, find_split, split_eval, split_quality, SplitChoice, SplitParams};
pub use tree::{train_tree, Node, RegressionTree};

/// Paired LR descriptors and HR residual patches, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    d_l: usize,
    d_h: usize,
    x_l: Vec<f32>,
    x_h: Vec<f32>,
}

impl TrainingSet {
    pub fn new(d_l: usize, d_h: usize, x_l: Vec<f32>, x_h: Vec<f32>) -> Result<Self> {
        if d_l == 0 || d_h == 0 {
            return Err(Error::InvalidParam("training dimensions must be positive".into()));
        }
        if x_l.len() % d_l != 0 || x_h.len() % d_h != 0 || x_l.len() / d_l != x_h.len() / d_h {
            return Err(Error::DimMismatch {
                what: "training sample count",
                expected: x_l.len() / d_l,
                actual: x_h.len() / d_h,
            });
        }
        if x_l.is_empty() {
            return Err(Error::TooFewSamples { needed: 1, got: 0 });
        }
        if x_l.iter().chain(&x_h).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParam("training data contains non-finite values".into()));
        }
        Ok(Self { d_l, d_h, x_l, x_h })
    }

    pub fn len(&self) -> usize {
        self.x_l.len() / self.d_l
    }

    pub fn is_empty(&self) -> bool {
        self.x_l.is_empty()
    }

    pub fn d_l(&self) -> usize {
        self.d_l
    }

    pub fn d_h(&self) -> usize {
        self.d_h
    }

    #[inline]
    pub fn x_l(&self, i: usize) -> &[f32] {
        &self.x_l[i * self.d_l..(i + 1) * self.d_l]
    }

    #[inline]
    pub fn x_h(&self, i: usize) -> &[f32] {
        &self.x_h[i * self.d_h..(i + 1) * self.d_h]
    }

    pub fn x_l_flat(&self) -> &[f32] {
        &self.x_l
    }

    pub fn x_h_flat(&self) -> &[f32] {
        &self.x_h
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Weight of the LR variance in the split criterion.
    pub kappa: f64,
    pub max_depth: usize,
    pub min_leaf_samples: usize,
    /// Samples drawn per node for scoring split candidates.
    pub node_subsample: usize,
    pub n_pairs: usize,
    pub n_thresh: usize,
    pub lambda: LambdaPolicy,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 30,
            kappa: 1.0,
            max_depth: 15,
            min_leaf_samples: 64,
            node_subsample: 512,
            n_pairs: 20,
            n_thresh: 10,
            lambda: LambdaPolicy::default(),
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParam(format!("forest config: {msg}")));
        if self.n_trees == 0 {
            return bad("need at least one tree");
        }
        if !(self.kappa >= 0.0) || !self.kappa.is_finite() {
            return bad("kappa must be finite and >= 0");
        }
        if self.min_leaf_samples == 0 {
            return bad("min_leaf_samples must be >= 1");
        }
        if self.node_subsample < 2 {
            return bad("node_subsample must be >= 2");
        }
        if self.n_pairs == 0 || self.n_thresh == 0 {
            return bad("need at least one candidate pair and threshold");
        }
        match self.lambda {
            LambdaPolicy::Fixed(l) if !(l >= 0.0) || !l.is_finite() => bad("lambda must be >= 0"),
            LambdaPolicy::Auto { max_condition } if !(max_condition > 1.0) => {
                bad("max condition must exceed 1")
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum EnsembleMode {
    #[default]
    Median,
    Average,
}

impl EnsembleMode {
    pub fn name(self) -> &'static str {
        match self {
            EnsembleMode::Median => "median",
            EnsembleMode::Average => "average",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "median" => Some(EnsembleMode::Median),
            "average" | "mean" => Some(EnsembleMode::Average),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    trees: Vec<RegressionTree>,
    config: ForestConfig,
    seed: u64,
    d_l: usize,
    d_h: usize,
}

impl Forest {
    pub fn from_trees(trees: Vec<RegressionTree>, config: ForestConfig, seed: u64) -> Result<Self> {
        let first = trees
            .first()
            .ok_or_else(|| Error::InvalidParam("forest without trees".into()))?;
        let (d_l, d_h) = (first.input_dim(), first.output_dim());
        if trees.iter().any(|t| t.input_dim() != d_l || t.output_dim() != d_h) {
            return Err(Error::InvalidParam("trees disagree on dimensions".into()));
        }
        Ok(Self {
            trees,
            config,
            seed,
            d_l,
            d_h,
        })
    }

    pub fn trees(&self) -> &[RegressionTree] {
        &self.trees
    }

    pub fn trees_mut(&mut self) -> &mut [RegressionTree] {
        &mut self.trees
    }

    pub fn config(&self) -> &ForestConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_dim(&self) -> usize {
        self.d_l
    }

    pub fn output_dim(&self) -> usize {
        self.d_h
    }

    /// Combined residual prediction for one descriptor.
    pub fn predict(&self, x: &[f32], mode: EnsembleMode) -> Result<Vec<f32>> {
        if x.len() != self.d_l {
            return Err(Error::DimMismatch {
                what: "forest input",
                expected: self.d_l,
                actual: x.len(),
            });
        }
        let mut scratch = vec![0.0f32; self.trees.len() * self.d_h];
        let mut out = vec![0.0f32; self.d_h];
        self.predict_unchecked(x, mode, &mut scratch, &mut out);
        Ok(out)
    }

    /// `scratch` holds `n_trees * d_h` values, `out` holds `d_h`.
    pub(crate) fn predict_unchecked(
        &self,
        x: &[f32],
        mode: EnsembleMode,
        scratch: &mut [f32],
        out: &mut [f32],
    ) {
        let d_h = self.d_h;
        for (t, tree) in self.trees.iter().enumerate() {
            tree.predict_into(x, &mut scratch[t * d_h..(t + 1) * d_h]);
        }
        combine(scratch, self.trees.len(), d_h, mode, out);
    }

    /// Predictions for `xs` (flat, `d_l` per sample), flat `d_h` per sample.
    pub fn predict_batch(&self, xs: &[f32], mode: EnsembleMode) -> Result<Vec<f32>> {
        if xs.len() % self.d_l != 0 {
            return Err(Error::DimMismatch {
                what: "forest input",
                expected: self.d_l,
                actual: xs.len() % self.d_l,
            });
        }
        let n = xs.len() / self.d_l;
        let mut out = vec![0.0f32; n * self.d_h];
        const CHUNK: usize = 512;
        par::for_each_chunk_mut(&mut out, CHUNK * self.d_h, |c, dst| {
            let mut scratch = vec![0.0f32; self.trees.len() * self.d_h];
            for (j, o) in dst.chunks_exact_mut(self.d_h).enumerate() {
                let i = c * CHUNK + j;
                self.predict_unchecked(&xs[i * self.d_l..(i + 1) * self.d_l], mode, &mut scratch, o);
            }
        });
        Ok(out)
    }
}

/// Component-wise median or mean of `n` stacked predictions of length `d`.
pub fn combine(preds: &[f32], n: usize, d: usize, mode: EnsembleMode, out: &mut [f32]) {
    match mode {
        EnsembleMode::Average => {
            for (c, o) in out.iter_mut().enumerate() {
                let s: f64 = (0..n).map(|t| preds[t * d + c] as f64).sum();
                *o = (s / n as f64) as f32;
            }
        }
        EnsembleMode::Median => {
            let mut col = vec![0.0f32; n];
            for (c, o) in out.iter_mut().enumerate() {
                for t in 0..n {
                    col[t] = preds[t * d + c];
                }
                *o = median(&mut col);
            }
        }
    }
}

/// Median; the mean of the two middle values for even lengths.
pub fn median(values: &mut [f32]) -> f32 {
    let n = values.len();
    values.sort_unstable_by(|a, b| a.total_cmp(b));
    if n % 2 == 1 {
        values[n / 2]
    } else {
        ((values[n / 2 - 1] as f64 + values[n / 2] as f64) / 2.0) as f32
    }
}

/// Trains `config.n_trees` trees on every sample of `ts`.
pub fn train_forest(ts: &TrainingSet, config: &ForestConfig, seed: u64) -> Result<Forest> {
    config.validate()?;
    if ts.len() < config.min_leaf_samples {
        return Err(Error::TooFewSamples {
            needed: config.min_leaf_samples,
            got: ts.len(),
        });
    }
    let trees = par::map_range(config.n_trees, |t| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ t as u64);
        let mut idx: Vec<usize> = (0..ts.len()).collect();
        for i in (1..idx.len()).rev() {
            let j = rng.gen_range(0..=i);
            idx.swap(i, j);
        }
        train_tree(ts, &mut idx, config, &mut rng)
    });
    let trees = trees.into_iter().collect::<Result<Vec<_>>>()?;
    Forest::from_trees(trees, *config, seed)
}
