//! Dilated residual 1-D CNN mapping SEEG windows to embeddings.

use sacm_autodiff::{BatchNormStats, Conv1dSpec, Element, Graph, ParamId, ParamStore, Var};
use serde::{Deserialize, Serialize};

use super::layers::{apply_bn_updates, Bn, Init};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Gelu,
    Relu,
    Elu,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeegEncoderConfig {
    pub n_channels: usize,
    pub hidden: usize,
    pub n_blocks: usize,
    pub kernel: usize,
    /// Output dimension; must match the audio embedding dimension.
    pub d: usize,
    pub activation: Activation,
}

impl SeegEncoderConfig {
    pub fn new(n_channels: usize, d: usize) -> Self {
        SeegEncoderConfig {
            n_channels,
            hidden: 64,
            n_blocks: 4,
            kernel: 3,
            d,
            activation: Activation::Gelu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_channels == 0 || self.hidden == 0 || self.d == 0 {
            return Err(Error::Config(format!(
                "degenerate encoder widths in {self:?}"
            )));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "kernel {} must be odd to preserve length",
                self.kernel
            )));
        }
        Ok(())
    }

    pub fn dilation(&self, block: usize) -> usize {
        1 << block
    }

    /// Samples seen by one output position of the last residual block.
    pub fn receptive_field(&self) -> usize {
        1 + (0..self.n_blocks)
            .map(|b| (self.kernel - 1) * self.dilation(b))
            .sum::<usize>()
    }
}

#[derive(Clone, Debug)]
struct Block {
    w: ParamId,
    b: ParamId,
    bn: Bn,
}

#[derive(Clone, Debug)]
pub struct SeegEncoder<T: Element = f32> {
    pub cfg: SeegEncoderConfig,
    pub store: ParamStore<T>,
    input_w: ParamId,
    input_b: ParamId,
    blocks: Vec<Block>,
    head_w: ParamId,
    head_b: ParamId,
}

impl<T: Element> SeegEncoder<T> {
    pub fn new(cfg: SeegEncoderConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut s = ParamStore::new();
        let mut init = Init::new(seed);
        let (c, h, k) = (cfg.n_channels, cfg.hidden, cfg.kernel);
        let input_w = init.uniform(&mut s, "input.weight", &[h, c, 1], c);
        let input_b = init.uniform(&mut s, "input.bias", &[h], c);
        let blocks = (0..cfg.n_blocks)
            .map(|i| Block {
                w: init.uniform(&mut s, &format!("block{i}.conv.weight"), &[h, h, k], h * k),
                b: init.uniform(&mut s, &format!("block{i}.conv.bias"), &[h], h * k),
                bn: Bn::new(&mut s, &format!("block{i}.bn"), h),
            })
            .collect();
        let head_w = init.uniform(&mut s, "head.weight", &[cfg.d, h], h);
        let head_b = init.uniform(&mut s, "head.bias", &[cfg.d], h);
        Ok(SeegEncoder {
            cfg,
            store: s,
            input_w,
            input_b,
            blocks,
            head_w,
            head_b,
        })
    }

    /// `x: (N, C, T)` → `(N, d)`.
    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<(Var, Vec<(Bn, BatchNormStats)>)> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 3 || shape[1] != self.cfg.n_channels {
            return Err(Error::InvalidArgument(format!(
                "encoder expects [N, {}, T], got {shape:?}",
                self.cfg.n_channels
            )));
        }
        let mut upd = Vec::new();
        let w = g.param(&self.store, self.input_w);
        let b = g.param(&self.store, self.input_b);
        let mut h = g.conv1d(x, w, Some(b), Conv1dSpec::default())?;
        for (i, blk) in self.blocks.iter().enumerate() {
            let dil = self.cfg.dilation(i);
            let spec = Conv1dSpec {
                stride: 1,
                padding: dil * (self.cfg.kernel - 1) / 2,
                dilation: dil,
                groups: 1,
            };
            let w = g.param(&self.store, blk.w);
            let b = g.param(&self.store, blk.b);
            let y = g.conv1d(h, w, Some(b), spec)?;
            let y = blk.bn.apply(g, &self.store, y, &mut upd)?;
            let y = match self.cfg.activation {
                Activation::Gelu => g.gelu(y),
                Activation::Relu => g.relu(y),
                Activation::Elu => g.elu(y, 1.0),
            };
            h = g.add(h, y)?;
        }
        let pooled = g.mean_last(h)?;
        let w = g.param(&self.store, self.head_w);
        let b = g.param(&self.store, self.head_b);
        Ok((g.linear(pooled, w, Some(b))?, upd))
    }

    pub fn update_running_stats(&mut self, updates: &[(Bn, BatchNormStats)]) {
        apply_bn_updates(&mut self.store, updates);
    }
}
