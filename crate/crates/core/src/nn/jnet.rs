//! Three-level encoder/decoder whose output is twice the input resolution.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ops::{BnMode, ConvSpec};
use super::params::ParameterStore;
use super::tape::{BlockIds, BnIds, ConvBlockSpec, NodeId, Tape};
use super::tensor::Tensor4;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JNetConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Feature width per level, finest first.
    pub widths: [usize; 3],
    pub groups: usize,
    pub batchnorm: bool,
}

impl Default for JNetConfig {
    fn default() -> Self {
        JNetConfig {
            in_channels: 4,
            out_channels: 3,
            widths: [24, 48, 96],
            groups: 3,
            batchnorm: true,
        }
    }
}

/// Spatial divisor required of the input (two stride-2 stages).
pub const JNET_ALIGN: usize = 4;

impl JNetConfig {
    fn block(&self, cin: usize, cout: usize, stride: usize, groups: usize) -> ConvBlockSpec {
        ConvBlockSpec {
            conv: ConvSpec {
                in_channels: cin,
                out_channels: cout,
                stride,
                groups,
            },
            has_batchnorm: self.batchnorm,
            relu: true,
            bias: !self.batchnorm,
        }
    }

    /// Named blocks in evaluation order.
    pub fn blocks(&self) -> Vec<(String, ConvBlockSpec)> {
        let [a, b, c] = self.widths;
        let g = self.groups;
        let mut v = vec![
            ("enc1", self.block(self.in_channels, a, 1, 1)),
            ("enc2", self.block(a, a, 1, g)),
            ("enc3", self.block(a, b, 2, g)),
            ("enc4", self.block(b, b, 1, g)),
            ("enc5", self.block(b, b, 1, g)),
            ("enc6", self.block(b, c, 2, g)),
            ("enc7", self.block(c, c, 1, g)),
            ("dec1", self.block(c + b, b, 1, g)),
            ("dec2", self.block(b + a, a, 1, g)),
            ("dec3", self.block(a, a, 1, g)),
        ];
        v.push((
            "head",
            ConvBlockSpec {
                conv: ConvSpec {
                    in_channels: a + self.in_channels,
                    out_channels: self.out_channels,
                    stride: 1,
                    groups: 1,
                },
                has_batchnorm: false,
                relu: false,
                bias: true,
            },
        ));
        v.into_iter().map(|(n, s)| (n.to_string(), s)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 || self.widths.contains(&0) {
            return Err(Error::Config("network channel counts must be positive".into()));
        }
        for (name, b) in self.blocks() {
            b.conv.validate().map_err(|e| Error::Config(format!("block {name}: {e}")))?;
        }
        Ok(())
    }
}

pub struct JNet {
    cfg: JNetConfig,
    pub params: ParameterStore,
    layout: Vec<(ConvBlockSpec, BlockIds)>,
}

impl JNet {
    /// Kaiming-uniform kernels, zero biases, unit batch-norm scale.
    pub fn new(cfg: JNetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParameterStore::new();
        let mut layout = Vec::new();
        for (name, spec) in cfg.blocks() {
            let shape = spec.conv.weight_shape();
            let len = shape.iter().product();
            let weight = params.add(&format!("{name}.weight"), shape, vec![0.0; len], true)?;
            params.fill_uniform(weight, (6.0 / spec.conv.fan_in() as f64).sqrt(), &mut rng);
            let co = spec.conv.out_channels;
            let bias = if spec.bias {
                Some(params.add(&format!("{name}.bias"), vec![co], vec![0.0; co], true)?)
            } else {
                None
            };
            let bn = if spec.has_batchnorm {
                Some(BnIds {
                    gamma: params.add(&format!("{name}.bn.gamma"), vec![co], vec![1.0; co], true)?,
                    beta: params.add(&format!("{name}.bn.beta"), vec![co], vec![0.0; co], true)?,
                    running_mean: params.add(&format!("{name}.bn.running_mean"), vec![co], vec![0.0; co], false)?,
                    running_var: params.add(&format!("{name}.bn.running_var"), vec![co], vec![1.0; co], false)?,
                })
            } else {
                None
            };
            layout.push((spec, BlockIds { weight, bias, bn }));
        }
        Ok(JNet { cfg, params, layout })
    }

    pub fn config(&self) -> &JNetConfig {
        &self.cfg
    }

    pub fn parameter_count(&self) -> usize {
        self.params.parameter_count()
    }

    /// Sets every trainable value to zero.
    pub fn zero_parameters(&mut self) {
        for p in self.params.iter_mut().filter(|p| p.trainable) {
            p.data.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn check_input(&self, dims: [usize; 4]) -> Result<()> {
        let [_, c, h, w] = dims;
        if c != self.cfg.in_channels || h % JNET_ALIGN != 0 || w % JNET_ALIGN != 0 || h == 0 || w == 0 {
            return Err(Error::ShapeMismatch(format!(
                "network input {dims:?} needs {} channels and spatial dims divisible by {JNET_ALIGN}",
                self.cfg.in_channels
            )));
        }
        Ok(())
    }

    /// Records the network on `tape` and returns the output node.
    pub fn forward(&self, tape: &mut Tape, x: NodeId, mode: BnMode) -> Result<NodeId> {
        self.check_input(tape.value(x).dims())?;
        let l = &self.layout;
        let p = &self.params;
        let block = |tape: &mut Tape, i: usize, input: NodeId| tape.conv_block(input, l[i].0, l[i].1, p, mode);
        let e1 = block(tape, 0, x)?;
        let skip_a = block(tape, 1, e1)?;
        let e3 = block(tape, 2, skip_a)?;
        let e4 = block(tape, 3, e3)?;
        let skip_b = block(tape, 4, e4)?;
        let e6 = block(tape, 5, skip_b)?;
        let e7 = block(tape, 6, e6)?;
        let u1 = tape.upsample2x(e7);
        let c1 = tape.concat(u1, skip_b)?;
        let d1 = block(tape, 7, c1)?;
        let u2 = tape.upsample2x(d1);
        let c2 = tape.concat(u2, skip_a)?;
        let d2 = block(tape, 8, c2)?;
        let u3 = tape.upsample2x(d2);
        let d3 = block(tape, 9, u3)?;
        let ux = tape.upsample2x(x);
        let c3 = tape.concat(d3, ux)?;
        block(tape, 10, c3)
    }

    /// Forward pass with running batch-norm statistics.
    pub fn infer(&self, x: Tensor4) -> Result<Tensor4> {
        let mut tape = Tape::new();
        let xi = tape.leaf(x);
        let out = self.forward(&mut tape, xi, BnMode::Running)?;
        Ok(tape.value(out).clone())
    }
}
