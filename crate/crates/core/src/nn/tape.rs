//! Reverse-mode differentiation over a linear record of layer applications.

use serde::{Deserialize, Serialize};

use super::ops::{self, BnCache, BnMode, BnParams, ConvSpec, RunningStats};
use super::params::{ParamId, ParameterStore};
use super::tensor::Tensor4;
use crate::error::{Error, Result};

pub type NodeId = usize;

/// Convolution optionally followed by batch normalisation and ReLU.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlockSpec {
    pub conv: ConvSpec,
    pub has_batchnorm: bool,
    pub relu: bool,
    pub bias: bool,
}

/// Batch-norm parameters and running-statistic buffers.
#[derive(Clone, Copy, Debug)]
pub struct BnIds {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct BlockIds {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub bn: Option<BnIds>,
}

enum Op {
    Leaf,
    ConvBlock {
        x: NodeId,
        spec: ConvBlockSpec,
        ids: BlockIds,
        bn: Option<BnCache>,
    },
    Upsample {
        x: NodeId,
    },
    Concat {
        a: NodeId,
        b: NodeId,
    },
}

struct Node {
    value: Tensor4,
    op: Op,
}

/// Running-statistic updates not yet written to a parameter store.
#[derive(Default)]
pub struct PendingStats(Vec<(BnIds, RunningStats)>);

impl PendingStats {
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn commit(self, params: &mut ParameterStore) {
        for (bn, (rm, rv)) in self.0 {
            params.get_mut(bn.running_mean).data = rm;
            params.get_mut(bn.running_var).data = rv;
        }
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    pending: Vec<(BnIds, RunningStats)>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor4 {
        &self.nodes[id].value
    }

    /// Cotangent of a leaf after [`Tape::backward`].
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes.get(id)?.value.grad.as_deref()
    }

    fn push(&mut self, value: Tensor4, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn leaf(&mut self, t: Tensor4) -> NodeId {
        self.push(t, Op::Leaf)
    }

    pub fn conv_block(
        &mut self,
        x: NodeId,
        spec: ConvBlockSpec,
        ids: BlockIds,
        params: &ParameterStore,
        mode: BnMode,
    ) -> Result<NodeId> {
        let input = &self.nodes[x].value;
        let bias = ids.bias.map(|b| params.data(b));
        let mut y = ops::conv2d_forward(input, &spec.conv, params.data(ids.weight), bias)?;
        let mut cache = None;
        if let Some(bn) = ids.bn {
            let p = BnParams {
                gamma: params.data(bn.gamma),
                beta: params.data(bn.beta),
                running_mean: params.data(bn.running_mean),
                running_var: params.data(bn.running_var),
            };
            let (out, c, stats) = ops::batchnorm_forward(&y, p, mode);
            if let Some(stats) = stats {
                self.pending.push((bn, stats));
            }
            y = out;
            cache = Some(c);
        }
        if spec.relu {
            y.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
        }
        Ok(self.push(y, Op::ConvBlock { x, spec, ids, bn: cache }))
    }

    /// Writes the running statistics gathered by `Batch { update: true }`
    /// applications into `params`.
    pub fn commit_running_stats(&mut self, params: &mut ParameterStore) {
        self.take_running_stats().commit(params);
    }

    /// Detaches the gathered running statistics for a later commit.
    pub fn take_running_stats(&mut self) -> PendingStats {
        PendingStats(std::mem::take(&mut self.pending))
    }

    pub fn upsample2x(&mut self, x: NodeId) -> NodeId {
        let y = ops::upsample2x_forward(&self.nodes[x].value);
        self.push(y, Op::Upsample { x })
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let y = ops::concat_forward(&self.nodes[a].value, &self.nodes[b].value)?;
        Ok(self.push(y, Op::Concat { a, b }))
    }

    /// Propagates `seed` (the cotangent of node `out`) back through the tape,
    /// accumulating parameter gradients into `params` and storing leaf
    /// cotangents on the leaves.
    pub fn backward(&mut self, out: NodeId, seed: &[f64], params: &mut ParameterStore) -> Result<()> {
        if out >= self.nodes.len() {
            return Err(Error::Usage("backward called without a recorded forward pass".into()));
        }
        if seed.len() != self.nodes[out].value.len() {
            return Err(Error::ShapeMismatch(format!(
                "seed of length {} for output of length {}",
                seed.len(),
                self.nodes[out].value.len()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; out + 1];
        grads[out] = Some(seed.to_vec());
        for id in (0..=out).rev() {
            let Some(g) = grads[id].take() else { continue };
            match &self.nodes[id].op {
                Op::Leaf => {
                    let leaf = &mut self.nodes[id].value;
                    match &mut leaf.grad {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        None => leaf.grad = Some(g),
                    }
                }
                Op::ConvBlock { x, spec, ids, bn } => {
                    let mut g = g;
                    if spec.relu {
                        let y = self.nodes[id].value.as_slice();
                        g.iter_mut().zip(y).for_each(|(d, &v)| {
                            if v <= 0.0 {
                                *d = 0.0
                            }
                        });
                    }
                    if let (Some(bnid), Some(cache)) = (ids.bn, bn) {
                        let gamma = params.data(bnid.gamma).to_vec();
                        let mut dgamma = std::mem::take(&mut params.get_mut(bnid.gamma).grad);
                        let mut dbeta = std::mem::take(&mut params.get_mut(bnid.beta).grad);
                        g = ops::batchnorm_backward(self.nodes[id].value.dims(), cache, &gamma, &g, &mut dgamma, &mut dbeta);
                        params.get_mut(bnid.gamma).grad = dgamma;
                        params.get_mut(bnid.beta).grad = dbeta;
                    }
                    let weight = params.data(ids.weight).to_vec();
                    let mut dw = std::mem::take(&mut params.get_mut(ids.weight).grad);
                    let mut db = ids.bias.map(|b| std::mem::take(&mut params.get_mut(b).grad));
                    let dx = ops::conv2d_backward(&self.nodes[*x].value, &spec.conv, &weight, &g, &mut dw, db.as_deref_mut());
                    params.get_mut(ids.weight).grad = dw;
                    if let (Some(b), Some(db)) = (ids.bias, db) {
                        params.get_mut(b).grad = db;
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Upsample { x } => {
                    let dx = ops::upsample2x_backward(self.nodes[*x].value.dims(), &g);
                    accumulate(&mut grads, *x, dx);
                }
                Op::Concat { a, b } => {
                    let (da, db) = ops::concat_backward(self.nodes[*a].value.dims(), self.nodes[*b].value.dims(), &g);
                    let (a, b) = (*a, *b);
                    accumulate(&mut grads, a, da);
                    accumulate(&mut grads, b, db);
                }
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: NodeId, g: Vec<f64>) {
    match &mut grads[id] {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        slot => *slot = Some(g),
    }
}
