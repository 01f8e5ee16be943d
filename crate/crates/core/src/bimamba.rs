//! Two independent Mamba stacks over the original and reversed token
//! sequence, followed by pooling, fusion and the classifier.
//!
//! The backward stack's output is fused in reversed order; pooling over `L`
//! does not care about token order.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{join, Linear, Parameterized, SeededRng};
use crate::mamba::{MambaConfig, MambaStack};
use crate::metrics::ASoftmaxHead;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    Sum,
    Concat,
    Attention,
}

impl FusionMode {
    pub const ALL: [FusionMode; 3] = [FusionMode::Sum, FusionMode::Concat, FusionMode::Attention];

    /// Width of the fused embedding for `C` token channels.
    pub fn fused_dim(self, channels: usize) -> usize {
        match self {
            FusionMode::Concat => 2 * channels,
            FusionMode::Sum | FusionMode::Attention => channels,
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionMode::Sum => "sum",
            FusionMode::Concat => "concat",
            FusionMode::Attention => "attention",
        })
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(FusionMode::Sum),
            "concat" => Ok(FusionMode::Concat),
            "attention" => Ok(FusionMode::Attention),
            other => Err(Error::Config(format!(
                "unknown fusion mode `{other}` (expected sum, concat or attention)"
            ))),
        }
    }
}

/// `output[b, l, c] = x[b, L-1-l, c]`.
pub fn reverse_sequence(x: &Tensor) -> Result<Tensor> {
    if x.ndim() != 3 {
        return Err(Error::dim("reverse_sequence", x.shape(), &[0, 0, 0]));
    }
    x.flip(1)
}

/// Softmax-over-`L` weights of a linear score map, `(B, L, C) → (B, L)`.
pub fn attention_weights(x: &Tensor, score: &Linear) -> Result<Tensor> {
    if x.ndim() != 3 || score.out_dim() != 1 {
        return Err(Error::dim("attention_pool", x.shape(), score.weight.shape()));
    }
    let (b, l) = (x.shape()[0], x.shape()[1]);
    score.forward(x)?.reshape(&[b, l])?.softmax_last()
}

/// Weighted token average, `(B, L, C) → (B, C)`.
pub fn attention_pool(x: &Tensor, score: &Linear) -> Result<Tensor> {
    let w = attention_weights(x, score)?;
    let (b, l, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    w.reshape(&[b, 1, l])?.matmul(x)?.reshape(&[b, c])
}

/// Scaled dot-product attention of one query per batch over `tokens`.
fn cross_attend(query: &Tensor, tokens: &Tensor) -> Result<Tensor> {
    let (b, l, c) = (tokens.shape()[0], tokens.shape()[1], tokens.shape()[2]);
    let keys = tokens.permute(&[0, 2, 1])?;
    let scores = query.reshape(&[b, 1, c])?.matmul(&keys)?.mul_scalar(1.0 / (c as f64).sqrt());
    let w = scores.reshape(&[b, l])?.softmax_last()?;
    w.reshape(&[b, 1, l])?.matmul(tokens)?.reshape(&[b, c])
}

#[derive(Debug, Clone)]
pub struct FusionOutput {
    /// Fused vector fed to the classifier, `(B, fused_dim)`.
    pub embedding: Tensor,
    /// Classifier hidden activation, the A-Softmax input, `(B, hidden)`.
    pub hidden: Tensor,
    /// `(B, 2)`, columns ordered spoof, bonafide.
    pub logits: Tensor,
}

impl FusionOutput {
    /// `logit(bonafide) - logit(spoof)` per row.
    pub fn scores(&self) -> Vec<f64> {
        self.logits.data().chunks(2).map(|r| r[crate::metrics::BONAFIDE] - r[crate::metrics::SPOOF]).collect()
    }
}

#[derive(Debug, Clone)]
pub struct FusionBlock {
    pub mode: FusionMode,
    pub channels: usize,
    /// Linear `C → 1` score maps for the forward and backward pools.
    pub pool_forward: Linear,
    pub pool_backward: Linear,
    /// `C × C` query maps, attention mode only.
    pub query_forward: Option<Linear>,
    pub query_backward: Option<Linear>,
    /// First classifier layer, `fused_dim → hidden`, followed by SiLU.
    pub hidden: Linear,
    /// Second classifier layer.
    pub head: ASoftmaxHead,
}

impl FusionBlock {
    pub fn new(rng: &mut SeededRng, mode: FusionMode, channels: usize, hidden_width: usize, margin: u32) -> Self {
        let pool_forward = Linear::new(rng, channels, 1, false);
        let pool_backward = Linear::new(rng, channels, 1, false);
        let (query_forward, query_backward) = if mode == FusionMode::Attention {
            (
                Some(Linear::new(rng, channels, channels, false)),
                Some(Linear::new(rng, channels, channels, false)),
            )
        } else {
            (None, None)
        };
        let hidden = Linear::new(rng, mode.fused_dim(channels), hidden_width, true);
        let head = ASoftmaxHead::new(rng, hidden_width, margin);
        FusionBlock { mode, channels, pool_forward, pool_backward, query_forward, query_backward, hidden, head }
    }

    pub fn fused_dim(&self) -> usize {
        self.mode.fused_dim(self.channels)
    }

    pub fn embed(&self, f_forward: &Tensor, f_backward: &Tensor) -> Result<Tensor> {
        let c = self.channels;
        for t in [f_forward, f_backward] {
            if t.ndim() != 3 || t.shape()[2] != c {
                return Err(Error::dim("fuse", t.shape(), &[c]));
            }
        }
        if f_forward.shape() != f_backward.shape() {
            return Err(Error::dim("fuse", f_forward.shape(), f_backward.shape()));
        }
        let f1 = attention_pool(f_forward, &self.pool_forward)?;
        let f2 = attention_pool(f_backward, &self.pool_backward)?;
        match self.mode {
            FusionMode::Sum => f1.add(&f2),
            FusionMode::Concat => Tensor::concat(&[f1, f2], 1),
            FusionMode::Attention => {
                let missing = || Error::Config("attention fusion without query maps".into());
                let q1 = self.query_forward.as_ref().ok_or_else(missing)?.forward(&f1)?;
                let q2 = self.query_backward.as_ref().ok_or_else(missing)?.forward(&f2)?;
                cross_attend(&q1, f_backward)?.add(&cross_attend(&q2, f_forward)?)
            }
        }
    }

    pub fn fuse(&self, f_forward: &Tensor, f_backward: &Tensor) -> Result<FusionOutput> {
        if self.hidden.in_dim() != self.fused_dim() {
            return Err(Error::Config(format!(
                "classifier input width {} does not match the {} fused width {}",
                self.hidden.in_dim(),
                self.mode,
                self.fused_dim()
            )));
        }
        let embedding = self.embed(f_forward, f_backward)?;
        let hidden = self.hidden.forward(&embedding)?.silu();
        let logits = self.head.logits(&hidden)?;
        Ok(FusionOutput { embedding, hidden, logits })
    }
}

impl Parameterized for FusionBlock {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.pool_forward.visit_params(&join(prefix, "pool_forward"), f);
        self.pool_backward.visit_params(&join(prefix, "pool_backward"), f);
        if let Some(q) = &self.query_forward {
            q.visit_params(&join(prefix, "query_forward"), f);
        }
        if let Some(q) = &self.query_backward {
            q.visit_params(&join(prefix, "query_backward"), f);
        }
        self.hidden.visit_params(&join(prefix, "hidden"), f);
        self.head.visit_params(&join(prefix, "head"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.pool_forward.visit_params_mut(&join(prefix, "pool_forward"), f);
        self.pool_backward.visit_params_mut(&join(prefix, "pool_backward"), f);
        if let Some(q) = &mut self.query_forward {
            q.visit_params_mut(&join(prefix, "query_forward"), f);
        }
        if let Some(q) = &mut self.query_backward {
            q.visit_params_mut(&join(prefix, "query_backward"), f);
        }
        self.hidden.visit_params_mut(&join(prefix, "hidden"), f);
        self.head.visit_params_mut(&join(prefix, "head"), f);
    }
}

#[derive(Debug, Clone)]
pub struct BiMambaModel {
    pub forward_stack: MambaStack,
    pub backward_stack: MambaStack,
    pub fusion: FusionBlock,
}

impl BiMambaModel {
    /// `hidden_width` defaults to the fused width.
    pub fn new(
        rng: &mut SeededRng,
        config: MambaConfig,
        layers_per_direction: usize,
        mode: FusionMode,
        hidden_width: Option<usize>,
        margin: u32,
    ) -> Self {
        let forward_stack = MambaStack::new(rng, config, layers_per_direction);
        let backward_stack = MambaStack::new(rng, config, layers_per_direction);
        let hidden = hidden_width.unwrap_or(mode.fused_dim(config.d_model));
        let fusion = FusionBlock::new(rng, mode, config.d_model, hidden, margin);
        BiMambaModel { forward_stack, backward_stack, fusion }
    }

    /// `(F_forward, F_backward)`; the backward output stays in reversed order.
    pub fn bidirectional_forward(&self, tokens: &Tensor) -> Result<(Tensor, Tensor)> {
        let fwd = self.forward_stack.config();
        if fwd != self.backward_stack.config() || self.forward_stack.layers.len() != self.backward_stack.layers.len() {
            return Err(Error::Config("forward and backward stacks differ in structure".into()));
        }
        if let Some(cfg) = fwd {
            if tokens.ndim() != 3 || tokens.shape()[2] != cfg.d_model {
                return Err(Error::dim("bidirectional_forward", tokens.shape(), &[cfg.d_model]));
            }
        }
        let f_forward = self.forward_stack.forward(tokens)?;
        let f_backward = self.backward_stack.forward(&reverse_sequence(tokens)?)?;
        Ok((f_forward, f_backward))
    }

    pub fn forward(&self, tokens: &Tensor) -> Result<FusionOutput> {
        let (f, b) = self.bidirectional_forward(tokens)?;
        self.fusion.fuse(&f, &b)
    }
}

impl Parameterized for BiMambaModel {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.forward_stack.visit_params(&join(prefix, "forward"), f);
        self.backward_stack.visit_params(&join(prefix, "backward"), f);
        self.fusion.visit_params(&join(prefix, "fusion"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.forward_stack.visit_params_mut(&join(prefix, "forward"), f);
        self.backward_stack.visit_params_mut(&join(prefix, "backward"), f);
        self.fusion.visit_params_mut(&join(prefix, "fusion"), f);
    }
}
