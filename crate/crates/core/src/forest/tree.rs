use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::leaf::{fit_leaf, LeafModel};
use super::split::{find_split, SplitParams};
use super::{ForestConfig, TrainingSet};
use crate::error::{Error, Result};

/// Array-encoded node. Child and leaf references index into the owning
/// tree's `nodes` and `leaves`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    Split {
        params: SplitParams,
        left: u32,
        right: u32,
    },
    Leaf {
        leaf: u32,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTree {
    nodes: Vec<Node>,
    leaves: Vec<LeafModel>,
    depth: usize,
    d_l: usize,
    d_h: usize,
}

impl RegressionTree {
    /// Reassembles a tree, checking that the topology is a proper binary
    /// tree rooted at node 0 with every leaf referenced exactly once.
    pub fn from_parts(nodes: Vec<Node>, leaves: Vec<LeafModel>, d_l: usize, d_h: usize) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::InvalidParam("tree without nodes".into()));
        }
        for leaf in &leaves {
            if leaf.w.len() != d_l * d_h {
                return Err(Error::DimMismatch {
                    what: "leaf matrix",
                    expected: d_l * d_h,
                    actual: leaf.w.len(),
                });
            }
        }
        let mut node_seen = alloc::vec![false; nodes.len()];
        let mut leaf_seen = alloc::vec![false; leaves.len()];
        let mut depth = 0;
        let mut stack = alloc::vec![(0usize, 0usize)];
        while let Some((id, d)) = stack.pop() {
            if id >= nodes.len() || node_seen[id] {
                return Err(Error::InvalidParam(format!("bad node reference {id}")));
            }
            node_seen[id] = true;
            depth = depth.max(d);
            match nodes[id] {
                Node::Split { params, left, right } => {
                    if params.phi1 >= d_l || params.phi2 >= d_l || params.phi1 == params.phi2 {
                        return Err(Error::InvalidParam(format!(
                            "split features ({}, {}) invalid for dimension {d_l}",
                            params.phi1, params.phi2
                        )));
                    }
                    if !params.tau.is_finite() {
                        return Err(Error::InvalidParam("non-finite split threshold".into()));
                    }
                    stack.push((right as usize, d + 1));
                    stack.push((left as usize, d + 1));
                }
                Node::Leaf { leaf } => {
                    let l = leaf as usize;
                    if l >= leaves.len() || leaf_seen[l] {
                        return Err(Error::InvalidParam(format!("bad leaf reference {l}")));
                    }
                    leaf_seen[l] = true;
                }
            }
        }
        if node_seen.iter().any(|s| !s) || leaf_seen.iter().any(|s| !s) {
            return Err(Error::InvalidParam("unreachable tree nodes".into()));
        }
        Ok(Self {
            nodes,
            leaves,
            depth,
            d_l,
            d_h,
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn leaves(&self) -> &[LeafModel] {
        &self.leaves
    }

    /// Mutable leaf models, e.g. for robustness experiments.
    pub fn leaves_mut(&mut self) -> &mut [LeafModel] {
        &mut self.leaves
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn input_dim(&self) -> usize {
        self.d_l
    }

    pub fn output_dim(&self) -> usize {
        self.d_h
    }

    /// Index of the leaf `x` lands in.
    #[inline]
    pub fn route(&self, x: &[f32]) -> usize {
        let mut id = 0;
        loop {
            match self.nodes[id] {
                Node::Split { params, left, right } => {
                    id = if params.goes_left(x) { left } else { right } as usize;
                }
                Node::Leaf { leaf } => return leaf as usize,
            }
        }
    }

    #[inline]
    pub fn predict_into(&self, x: &[f32], out: &mut [f32]) {
        self.leaves[self.route(x)].apply(x, out);
    }
}

struct Builder<'a, R> {
    ts: &'a TrainingSet,
    cfg: &'a ForestConfig,
    rng: &'a mut R,
    nodes: Vec<Node>,
    leaves: Vec<LeafModel>,
    depth: usize,
}

impl<R: Rng> Builder<'_, R> {
    fn build(&mut self, idx: &mut [usize], depth: usize) -> Result<u32> {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { leaf: u32::MAX });
        self.depth = self.depth.max(depth);

        let splittable = depth < self.cfg.max_depth && idx.len() >= 2 * self.cfg.min_leaf_samples;
        let choice = if splittable {
            find_split(self.ts, idx, self.rng, self.cfg)
        } else {
            None
        };

        match choice {
            Some(choice) => {
                let params = choice.params;
                let (mut left, mut right): (Vec<usize>, Vec<usize>) =
                    idx.iter().partition(|&&s| params.goes_left(self.ts.x_l(s)));
                let l = self.build(&mut left, depth + 1)?;
                let r = self.build(&mut right, depth + 1)?;
                self.nodes[id] = Node::Split {
                    params,
                    left: l,
                    right: r,
                };
            }
            None => {
                let leaf = fit_leaf(self.ts, idx, self.cfg.lambda)?;
                self.nodes[id] = Node::Leaf {
                    leaf: self.leaves.len() as u32,
                };
                self.leaves.push(leaf);
            }
        }
        Ok(id as u32)
    }
}

/// Grows one tree over the samples `idx` (in the given order).
pub fn train_tree<R: Rng>(
    ts: &TrainingSet,
    idx: &mut [usize],
    cfg: &ForestConfig,
    rng: &mut R,
) -> Result<RegressionTree> {
    let mut b = Builder {
        ts,
        cfg,
        rng,
        nodes: Vec::new(),
        leaves: Vec::new(),
        depth: 0,
    };
    b.build(idx, 0)?;
    let Builder {
        nodes,
        leaves,
        depth,
        ..
    } = b;
    Ok(RegressionTree {
        nodes,
        leaves,
        depth,
        d_l: ts.d_l(),
        d_h: ts.d_h(),
    })
}
