//! Model container.
//!
//! ```text
//! "VSRF" | version: u32 LE | header_len: u64 LE | header (JSON) | tensors
//! ```
//!
//! The header carries configuration, provenance, PCA dimensions, tree
//! topology and a table of tensors; the tensor section is little-endian
//! f32 data whose SHA-256 is recorded in the header. Stored precision is
//! the training precision, so a loaded model predicts bit-identically.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vsrf_core::forest::{LeafModel, Node, RegressionTree, SplitParams};
use vsrf_core::pipeline::{DegradationSpec, InterpKernel, ModelMeta};
use vsrf_core::{FeatureSet, Forest, ForestConfig, LambdaPolicy, PcaModel, SrModel};

use crate::error::{Error, Result};
use crate::io::{atomic_write, read_file};

pub const MAGIC: &[u8; 4] = b"VSRF";
pub const FORMAT_VERSION: u32 = 1;
const PREAMBLE: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "lowercase")]
pub enum LambdaHeader {
    Fixed { value: f64 },
    Auto { max_condition: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestHeader {
    pub n_trees: usize,
    pub kappa: f64,
    pub max_depth: usize,
    pub min_leaf_samples: usize,
    pub node_subsample: usize,
    pub n_pairs: usize,
    pub n_thresh: usize,
    pub lambda: LambdaHeader,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaHeader {
    pub d_raw: usize,
    pub k: usize,
    pub retained_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeHeader {
    /// Threshold lives in the tree's `thresholds` tensor, in node order.
    Split {
        phi1: usize,
        phi2: usize,
        left: u32,
        right: u32,
    },
    Leaf(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafHeader {
    pub lambda: f64,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeHeader {
    pub depth: usize,
    pub nodes: Vec<NodeHeader>,
    pub leaves: Vec<LeafHeader>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    /// Byte offset into the tensor section.
    pub offset: u64,
    /// Number of f32 values.
    pub len: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub toolkit_version: String,
    pub seed: u64,
    pub training_ids: Vec<String>,
    pub training_pairs: usize,
    pub patch: [usize; 3],
    pub scale: [f64; 3],
    pub antialias: bool,
    pub kernel: String,
    pub sigma: f64,
    pub feature_set: String,
    pub pca_target: f64,
    pub d_l: usize,
    pub d_h: usize,
    pub forest: ForestHeader,
    pub pca: PcaHeader,
    pub trees: Vec<TreeHeader>,
    pub tensors: Vec<TensorEntry>,
    pub tensor_bytes: u64,
    /// Lower-case hex SHA-256 of the tensor section.
    pub checksum: String,
}

struct TensorWriter {
    bytes: Vec<u8>,
    table: Vec<TensorEntry>,
}

impl TensorWriter {
    fn push(&mut self, name: String, values: impl ExactSizeIterator<Item = f32>) {
        self.table.push(TensorEntry {
            name,
            offset: self.bytes.len() as u64,
            len: values.len() as u64,
        });
        for v in values {
            self.bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn encode(model: &SrModel) -> Result<Vec<u8>> {
    model.validate()?;
    let forest = &model.forest;
    let pca = &model.pca;
    let meta = &model.meta;
    let mut tw = TensorWriter {
        bytes: Vec::new(),
        table: Vec::new(),
    };
    tw.push("pca.mean".into(), pca.mean().iter().copied());
    tw.push("pca.scale".into(), pca.scale().iter().copied());
    tw.push("pca.projection".into(), pca.projection().iter().copied());

    let mut trees = Vec::with_capacity(forest.trees().len());
    for (t, tree) in forest.trees().iter().enumerate() {
        let mut thresholds = Vec::new();
        let nodes = tree
            .nodes()
            .iter()
            .map(|n| match *n {
                Node::Split { params, left, right } => {
                    thresholds.push(params.tau);
                    NodeHeader::Split {
                        phi1: params.phi1,
                        phi2: params.phi2,
                        left,
                        right,
                    }
                }
                Node::Leaf { leaf } => NodeHeader::Leaf(leaf),
            })
            .collect();
        tw.push(format!("tree.{t}.thresholds"), thresholds.into_iter());
        tw.push(
            format!("tree.{t}.leaves"),
            tree.leaves().iter().flat_map(|l| l.w.iter().copied()).collect::<Vec<_>>().into_iter(),
        );
        trees.push(TreeHeader {
            depth: tree.depth(),
            nodes,
            leaves: tree
                .leaves()
                .iter()
                .map(|l| LeafHeader {
                    lambda: l.lambda,
                    n_samples: l.n_samples,
                })
                .collect(),
        });
    }

    let cfg = forest.config();
    let header = ModelHeader {
        toolkit_version: env!("CARGO_PKG_VERSION").into(),
        seed: forest.seed(),
        training_ids: meta.training_ids.clone(),
        training_pairs: meta.training_pairs,
        patch: meta.patch,
        scale: meta.degradation.scale,
        antialias: meta.degradation.antialias,
        kernel: meta.degradation.kernel.name().into(),
        sigma: meta.sigma,
        feature_set: meta.feature_set.name().into(),
        pca_target: meta.pca_target,
        d_l: forest.input_dim(),
        d_h: forest.output_dim(),
        forest: ForestHeader {
            n_trees: cfg.n_trees,
            kappa: cfg.kappa,
            max_depth: cfg.max_depth,
            min_leaf_samples: cfg.min_leaf_samples,
            node_subsample: cfg.node_subsample,
            n_pairs: cfg.n_pairs,
            n_thresh: cfg.n_thresh,
            lambda: match cfg.lambda {
                LambdaPolicy::Fixed(value) => LambdaHeader::Fixed { value },
                LambdaPolicy::Auto { max_condition } => LambdaHeader::Auto { max_condition },
            },
        },
        pca: PcaHeader {
            d_raw: pca.input_dim(),
            k: pca.output_dim(),
            retained_variance: pca.retained_variance(),
        },
        trees,
        tensor_bytes: tw.bytes.len() as u64,
        checksum: hex(&Sha256::digest(&tw.bytes)),
        tensors: tw.table,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");

    let mut out = Vec::with_capacity(PREAMBLE + json.len() + tw.bytes.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&tw.bytes);
    Ok(out)
}

pub fn save_model(model: &SrModel, path: &Path) -> Result<()> {
    atomic_write(path, &encode(model)?)
}

/// Checks magic and version and parses the header. Returns the header and
/// the remaining tensor bytes (unverified).
pub fn decode_header<'a>(path: &Path, bytes: &'a [u8]) -> Result<(ModelHeader, &'a [u8])> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        if bytes.len() < 4 && MAGIC.starts_with(bytes) {
            return Err(Error::Truncated {
                path: path.into(),
                what: "preamble".into(),
            });
        }
        return Err(Error::BadMagic { path: path.into() });
    }
    if bytes.len() < PREAMBLE {
        return Err(Error::Truncated {
            path: path.into(),
            what: "preamble".into(),
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            path: path.into(),
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let rest = &bytes[PREAMBLE..];
    if header_len > rest.len() as u64 {
        return Err(Error::Truncated {
            path: path.into(),
            what: format!("header ({} of {header_len} bytes)", rest.len()),
        });
    }
    let (json, tensors) = rest.split_at(header_len as usize);
    let header: ModelHeader =
        serde_json::from_slice(json).map_err(|e| Error::format(path, format!("model header: {e}")))?;
    Ok((header, tensors))
}

/// Reads and verifies a whole model file but parses only the header.
pub fn read_header(path: &Path) -> Result<ModelHeader> {
    let bytes = read_file(path)?;
    Ok(verify(path, &bytes)?.0)
}

/// `decode_header` plus the tensor section length and checksum.
fn verify<'a>(path: &Path, bytes: &'a [u8]) -> Result<(ModelHeader, &'a [u8])> {
    let (h, tensor_bytes) = decode_header(path, bytes)?;
    if (tensor_bytes.len() as u64) < h.tensor_bytes {
        return Err(Error::Truncated {
            path: path.into(),
            what: format!("tensor section ({} of {} bytes)", tensor_bytes.len(), h.tensor_bytes),
        });
    }
    if tensor_bytes.len() as u64 > h.tensor_bytes {
        return Err(Error::format(path, "trailing bytes after tensor section"));
    }
    if hex(&Sha256::digest(tensor_bytes)) != h.checksum {
        return Err(Error::ChecksumMismatch { path: path.into() });
    }
    Ok((h, tensor_bytes))
}

pub fn decode(path: &Path, bytes: &[u8]) -> Result<SrModel> {
    let (h, tensor_bytes) = verify(path, bytes)?;
    build(path, &h, tensor_bytes)
}

pub fn load_model(path: &Path) -> Result<SrModel> {
    decode(path, &read_file(path)?)
}

fn build(path: &Path, h: &ModelHeader, tensor_bytes: &[u8]) -> Result<SrModel> {
    let bad = |m: String| Error::format(path, m);
    let mut tensors: BTreeMap<&str, Vec<f32>> = BTreeMap::new();
    for t in &h.tensors {
        let start = t.offset as usize;
        let end = start
            .checked_add(t.len as usize * 4)
            .filter(|&e| e <= tensor_bytes.len())
            .ok_or_else(|| bad(format!("tensor {} out of bounds", t.name)))?;
        let values = tensor_bytes[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if tensors.insert(&t.name, values).is_some() {
            return Err(bad(format!("duplicate tensor {}", t.name)));
        }
    }
    let mut take = |name: &str, len: usize| -> Result<Vec<f32>> {
        let v = tensors
            .remove(name)
            .ok_or_else(|| bad(format!("missing tensor {name}")))?;
        if v.len() != len {
            return Err(bad(format!("tensor {name} has {} values, expected {len}", v.len())));
        }
        Ok(v)
    };

    let (d_raw, k) = (h.pca.d_raw, h.pca.k);
    let mean = take("pca.mean", d_raw)?;
    let scale = take("pca.scale", d_raw)?;
    let projection = take("pca.projection", k.saturating_mul(d_raw))?;
    let pca = PcaModel::from_parts(mean, projection, k, h.pca.retained_variance)?.with_scale(scale)?;

    let (d_l, d_h) = (h.d_l, h.d_h);
    let mut trees = Vec::with_capacity(h.trees.len());
    for (t, th) in h.trees.iter().enumerate() {
        let n_split = th.nodes.iter().filter(|n| matches!(n, NodeHeader::Split { .. })).count();
        let thresholds = take(&format!("tree.{t}.thresholds"), n_split)?;
        let leaf_values = take(&format!("tree.{t}.leaves"), th.leaves.len() * d_l * d_h)?;
        let mut taus = thresholds.into_iter();
        let nodes = th
            .nodes
            .iter()
            .map(|n| match *n {
                NodeHeader::Split {
                    phi1,
                    phi2,
                    left,
                    right,
                } => Node::Split {
                    params: SplitParams {
                        phi1,
                        phi2,
                        tau: taus.next().expect("counted above"),
                    },
                    left,
                    right,
                },
                NodeHeader::Leaf(leaf) => Node::Leaf { leaf },
            })
            .collect();
        let leaves = th
            .leaves
            .iter()
            .zip(leaf_values.chunks_exact((d_l * d_h).max(1)))
            .map(|(lh, w)| LeafModel {
                w: w.to_vec(),
                lambda: lh.lambda,
                n_samples: lh.n_samples,
            })
            .collect();
        let tree = RegressionTree::from_parts(nodes, leaves, d_l, d_h)?;
        if tree.depth() != th.depth {
            return Err(bad(format!("tree {t} depth {} recorded as {}", tree.depth(), th.depth)));
        }
        trees.push(tree);
    }
    if let Some(name) = tensors.keys().next() {
        return Err(bad(format!("unexpected tensor {name}")));
    }
    if trees.len() != h.forest.n_trees {
        return Err(bad(format!("{} trees, header says {}", trees.len(), h.forest.n_trees)));
    }

    let f = &h.forest;
    let config = ForestConfig {
        n_trees: f.n_trees,
        kappa: f.kappa,
        max_depth: f.max_depth,
        min_leaf_samples: f.min_leaf_samples,
        node_subsample: f.node_subsample,
        n_pairs: f.n_pairs,
        n_thresh: f.n_thresh,
        lambda: match f.lambda {
            LambdaHeader::Fixed { value } => LambdaPolicy::Fixed(value),
            LambdaHeader::Auto { max_condition } => LambdaPolicy::Auto { max_condition },
        },
    };
    let forest = Forest::from_trees(trees, config, h.seed)?;
    let meta = ModelMeta {
        patch: h.patch,
        degradation: DegradationSpec {
            scale: h.scale,
            antialias: h.antialias,
            kernel: InterpKernel::from_name(&h.kernel)
                .ok_or_else(|| bad(format!("unknown kernel {}", h.kernel)))?,
        },
        sigma: h.sigma,
        feature_set: FeatureSet::from_name(&h.feature_set)
            .ok_or_else(|| bad(format!("unknown feature set {}", h.feature_set)))?,
        pca_target: h.pca_target,
        training_ids: h.training_ids.clone(),
        training_pairs: h.training_pairs,
    };
    let model = SrModel { forest, pca, meta };
    model.validate()?;
    Ok(model)
}
