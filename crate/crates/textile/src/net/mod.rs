//! The tileability classifier: a small fully-convolutional backbone with
//! residual linear self-attention at the two deepest stages, ending in a
//! single unbounded logit per image.
//!
//! The backbone follows the familiar four-stage patchify design — a strided
//! stem, then stages of depthwise-7x7 / norm / pointwise-expand / GELU /
//! pointwise-project blocks with layer-scaled residuals, downsampling
//! between stages. Attention blocks are gated by a learnable scalar
//! initialized near zero, so at initialization the network behaves like the
//! attention-free backbone to within float noise — they can be bolted onto
//! pretrained weights without disturbing them.
//!
//! Everything is channel-last `f64`, and a forward pass accepts any input
//! with `H, W >= 32`: convolutions slide, attention flattens whatever grid
//! it is given, and the head pools globally.

mod checkpoint;
mod saliency;

pub use checkpoint::{
    load_checkpoint, load_checkpoint_expecting, save_checkpoint, CheckpointError,
};
pub use saliency::{saliency, SaliencyError};

use ndarray::{ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use textile_autograd::{
    adaptive_avg_pool, concat, conv2d, depthwise_conv2d, layer_norm, softmax, Arr, Tape, Var,
};
use thiserror::Error;

use crate::img::TextureImage;

/// Smallest input side the stage pipeline supports.
pub const MIN_INPUT: usize = 32;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("attention placement {0} out of range for a {1}-stage backbone")]
    BadPlacement(usize, usize),
    #[error("input {h}x{w} below the {MIN_INPUT}x{MIN_INPUT} minimum")]
    UndersizedInput { h: usize, w: usize },
    #[error("input has {got} channels, network expects {want}")]
    ChannelMismatch { got: usize, want: usize },
    #[error("stage_depths and stage_widths must be equal-length and non-empty")]
    BadStages,
    #[error("channels at stage {stage} ({channels}) not divisible by {heads} heads")]
    BadHeads {
        stage: usize,
        channels: usize,
        heads: usize,
    },
}

/// Backbone shape: how deep and wide each stage is.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    /// Human-readable label recorded in checkpoints.
    pub preset: String,
    pub stage_depths: Vec<usize>,
    pub stage_widths: Vec<usize>,
    pub input_channels: usize,
    /// Initial value of the per-block residual scaling.
    pub layerscale_init: f64,
}

impl BackboneConfig {
    /// Desk-scale preset: trains on a CPU in minutes (~1.4M parameters).
    pub fn toy() -> Self {
        BackboneConfig {
            preset: "toy".into(),
            stage_depths: vec![1, 1, 2, 1],
            stage_widths: vec![32, 64, 128, 256],
            input_channels: 3,
            layerscale_init: 1.0,
        }
    }

    /// Full-scale preset mirroring a ConvNeXt-Base layout, so externally
    /// pretrained weights of that shape can be imported.
    pub fn base() -> Self {
        BackboneConfig {
            preset: "base".into(),
            stage_depths: vec![3, 3, 27, 3],
            stage_widths: vec![128, 256, 512, 1024],
            input_channels: 3,
            layerscale_init: 1e-6,
        }
    }
}

/// Residual attention configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub heads: usize,
    /// Number of pooled key/value tokens (a square grid, clamped to the
    /// feature extent); keeps attention cost linear in spatial positions.
    pub proj_dim: usize,
    /// Initial value of the learnable residual gate.
    pub lambda_init: f64,
    /// Stages after whose blocks an attention module is inserted.
    pub placements: Vec<usize>,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig {
            heads: 4,
            proj_dim: 16,
            lambda_init: 1e-6,
            placements: vec![2, 3],
        }
    }
}

/// Complete network configuration as recorded in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub backbone: BackboneConfig,
    pub attention: AttentionConfig,
    pub ln_eps: f64,
}

impl NetworkConfig {
    pub fn toy() -> Self {
        NetworkConfig {
            backbone: BackboneConfig::toy(),
            attention: AttentionConfig::default(),
            ln_eps: 1e-6,
        }
    }

    pub fn base() -> Self {
        NetworkConfig {
            backbone: BackboneConfig::base(),
            attention: AttentionConfig::default(),
            ln_eps: 1e-6,
        }
    }

    /// Total learnable parameter count, computed from shapes alone (no
    /// allocation — usable for the full-scale preset).
    pub fn param_count(&self) -> usize {
        param_shapes(self)
            .iter()
            .map(|(_, shape)| shape.iter().product::<usize>())
            .sum()
    }

    fn validate(&self) -> Result<(), NetError> {
        let stages = self.backbone.stage_depths.len();
        if stages == 0 || self.backbone.stage_widths.len() != stages {
            return Err(NetError::BadStages);
        }
        for &p in &self.attention.placements {
            if p >= stages {
                return Err(NetError::BadPlacement(p, stages));
            }
            let channels = self.backbone.stage_widths[p];
            if channels % self.attention.heads != 0 {
                return Err(NetError::BadHeads {
                    stage: p,
                    channels,
                    heads: self.attention.heads,
                });
            }
        }
        Ok(())
    }
}

/// One named parameter tensor.
#[derive(Debug, Clone)]
pub struct NamedParam {
    pub name: String,
    pub value: ArrayD<f64>,
}

/// The classifier network: configuration plus named parameters. Training
/// metadata (step count, augmentation policy hash) rides along so
/// checkpoints are self-describing.
#[derive(Debug, Clone)]
pub struct Network {
    config: NetworkConfig,
    params: Vec<NamedParam>,
    train_steps: u64,
    policy_hash: String,
}

/// Everything a forward pass exposes: the logits, the final feature map
/// (input to the pooled head — what saliency attributes over), and tape
/// handles for every parameter in [`Network::params`] order.
pub struct NetForward<'t> {
    pub logits: Var<'t>,
    pub features: Var<'t>,
    pub params: Vec<Var<'t>>,
}

/// Enumerates every parameter name and shape for a configuration, in the
/// fixed order used by forward passes, checkpoints, and optimizers.
fn param_shapes(cfg: &NetworkConfig) -> Vec<(String, Vec<usize>)> {
    let b = &cfg.backbone;
    let stages = b.stage_depths.len();
    let mut out = Vec::new();
    let w0 = b.stage_widths[0];
    out.push(("stem.conv.weight".into(), vec![4, 4, b.input_channels, w0]));
    out.push(("stem.conv.bias".into(), vec![w0]));
    out.push(("stem.norm.gain".into(), vec![w0]));
    out.push(("stem.norm.bias".into(), vec![w0]));
    for s in 0..stages {
        let c = b.stage_widths[s];
        if s > 0 {
            let prev = b.stage_widths[s - 1];
            let pre = format!("down{s}");
            out.push((format!("{pre}.norm.gain"), vec![prev]));
            out.push((format!("{pre}.norm.bias"), vec![prev]));
            out.push((format!("{pre}.conv.weight"), vec![2, 2, prev, c]));
            out.push((format!("{pre}.conv.bias"), vec![c]));
        }
        for blk in 0..b.stage_depths[s] {
            let pre = format!("stage{s}.block{blk}");
            out.push((format!("{pre}.dw.weight"), vec![7, 7, c]));
            out.push((format!("{pre}.dw.bias"), vec![c]));
            out.push((format!("{pre}.norm.gain"), vec![c]));
            out.push((format!("{pre}.norm.bias"), vec![c]));
            out.push((format!("{pre}.pw1.weight"), vec![c, 4 * c]));
            out.push((format!("{pre}.pw1.bias"), vec![4 * c]));
            out.push((format!("{pre}.pw2.weight"), vec![4 * c, c]));
            out.push((format!("{pre}.pw2.bias"), vec![c]));
            out.push((format!("{pre}.gamma"), vec![c]));
        }
        if cfg.attention.placements.contains(&s) {
            let pre = format!("att{s}");
            out.push((format!("{pre}.norm.gain"), vec![c]));
            out.push((format!("{pre}.norm.bias"), vec![c]));
            for proj in ["q", "k", "v", "out"] {
                out.push((format!("{pre}.{proj}.weight"), vec![c, c]));
                out.push((format!("{pre}.{proj}.bias"), vec![c]));
            }
            out.push((format!("{pre}.lambda"), vec![1]));
        }
    }
    let top = *b.stage_widths.last().expect("validated non-empty");
    out.push(("head.norm.gain".into(), vec![top]));
    out.push(("head.norm.bias".into(), vec![top]));
    out.push(("head.linear.weight".into(), vec![top, 1]));
    out.push(("head.linear.bias".into(), vec![1]));
    out
}

/// Builds a freshly initialized network: truncated-normal weights (std
/// 0.02, clipped at two standard deviations), zero biases, unit norm gains,
/// and residual gates at their configured starting values.
pub fn build_network(config: NetworkConfig, seed: u64) -> Result<Network, NetError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 0.02).expect("valid std");
    let mut trunc = || loop {
        let v: f64 = normal.sample(&mut rng);
        if v.abs() <= 0.04 {
            return v;
        }
    };
    let params = param_shapes(&config)
        .into_iter()
        .map(|(name, shape)| {
            let value = if name.ends_with(".weight") {
                ArrayD::from_shape_simple_fn(IxDyn(&shape), &mut trunc)
            } else if name.ends_with(".gamma") {
                ArrayD::from_elem(IxDyn(&shape), config.backbone.layerscale_init)
            } else if name.ends_with(".lambda") {
                ArrayD::from_elem(IxDyn(&shape), config.attention.lambda_init)
            } else if name.ends_with("norm.gain") {
                ArrayD::from_elem(IxDyn(&shape), 1.0)
            } else {
                ArrayD::zeros(IxDyn(&shape))
            };
            NamedParam { name, value }
        })
        .collect();
    Ok(Network {
        config,
        params,
        train_steps: 0,
        policy_hash: String::new(),
    })
}

impl Network {
    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &[NamedParam] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [NamedParam] {
        &mut self.params
    }

    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    pub fn set_train_steps(&mut self, steps: u64) {
        self.train_steps = steps;
    }

    pub fn policy_hash(&self) -> &str {
        &self.policy_hash
    }

    pub fn set_policy_hash(&mut self, hash: impl Into<String>) {
        self.policy_hash = hash.into();
    }

    pub(crate) fn from_parts(
        config: NetworkConfig,
        params: Vec<NamedParam>,
        train_steps: u64,
        policy_hash: String,
    ) -> Self {
        Network {
            config,
            params,
            train_steps,
            policy_hash,
        }
    }

    pub fn param(&self, name: &str) -> Option<&ArrayD<f64>> {
        self.params
            .iter()
            .find(|p| p.name == name)
            .map(|p| &p.value)
    }

    /// True when every parameter is finite.
    pub fn is_finite(&self) -> bool {
        self.params
            .iter()
            .all(|p| p.value.iter().all(|v| v.is_finite()))
    }

    /// Forward pass over an already-leafed input variable of shape
    /// `[N, H, W, C]`. Gradients flow to both parameters and the input.
    pub fn forward_var<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<NetForward<'t>, NetError> {
        let shape = x.shape();
        assert_eq!(shape.len(), 4, "network input must be [N,H,W,C]");
        let (h, w, c) = (shape[1], shape[2], shape[3]);
        if h < MIN_INPUT || w < MIN_INPUT {
            return Err(NetError::UndersizedInput { h, w });
        }
        if c != self.config.backbone.input_channels {
            return Err(NetError::ChannelMismatch {
                got: c,
                want: self.config.backbone.input_channels,
            });
        }

        let vars: Vec<Var<'t>> = self
            .params
            .iter()
            .map(|p| tape.leaf(p.value.clone()))
            .collect();
        let get = |name: &str| -> Var<'t> {
            let idx = self
                .params
                .iter()
                .position(|p| p.name == name)
                .unwrap_or_else(|| panic!("parameter {name} missing"));
            vars[idx]
        };
        let eps = self.config.ln_eps;

        let mut feat = conv2d(
            x,
            get("stem.conv.weight"),
            Some(get("stem.conv.bias")),
            (4, 4),
            (0, 0),
        );
        feat = layer_norm(feat, get("stem.norm.gain"), get("stem.norm.bias"), eps);

        let stages = self.config.backbone.stage_depths.len();
        for s in 0..stages {
            if s > 0 {
                let pre = format!("down{s}");
                feat = layer_norm(
                    feat,
                    get(&format!("{pre}.norm.gain")),
                    get(&format!("{pre}.norm.bias")),
                    eps,
                );
                feat = conv2d(
                    feat,
                    get(&format!("{pre}.conv.weight")),
                    Some(get(&format!("{pre}.conv.bias"))),
                    (2, 2),
                    (0, 0),
                );
            }
            for blk in 0..self.config.backbone.stage_depths[s] {
                let pre = format!("stage{s}.block{blk}");
                let residual = feat;
                let mut d = depthwise_conv2d(
                    feat,
                    get(&format!("{pre}.dw.weight")),
                    Some(get(&format!("{pre}.dw.bias"))),
                    (3, 3),
                );
                d = layer_norm(
                    d,
                    get(&format!("{pre}.norm.gain")),
                    get(&format!("{pre}.norm.bias")),
                    eps,
                );
                d = linear_lastdim(
                    d,
                    get(&format!("{pre}.pw1.weight")),
                    get(&format!("{pre}.pw1.bias")),
                );
                d = d.gelu();
                d = linear_lastdim(
                    d,
                    get(&format!("{pre}.pw2.weight")),
                    get(&format!("{pre}.pw2.bias")),
                );
                d = d.mul(get(&format!("{pre}.gamma")));
                feat = residual.add(d);
            }
            if self.config.attention.placements.contains(&s) {
                feat = self.residual_attention(feat, s, &get);
            }
        }

        let features = feat;
        // head: global average pool -> norm -> single logit
        let pooled = feat.mean_axes(&[1, 2], false);
        let normed = layer_norm(pooled, get("head.norm.gain"), get("head.norm.bias"), eps);
        let logits = linear_lastdim(normed, get("head.linear.weight"), get("head.linear.bias"));
        let n = shape[0];
        let logits = logits.reshape(&[n]);
        Ok(NetForward {
            logits,
            features,
            params: vars,
        })
    }

    /// Forward pass from a raw `[N, H, W, C]` array.
    pub fn forward<'t>(&self, tape: &'t Tape, x: &Arr) -> Result<NetForward<'t>, NetError> {
        let leaf = tape.leaf(x.clone());
        self.forward_var(tape, leaf)
    }

    /// Convenience inference: one logit per image, no gradient bookkeeping.
    /// Images are evaluated one at a time — logits are independent of batch
    /// composition, so this matches batched evaluation bit for bit.
    pub fn logits(&self, images: &[TextureImage]) -> Result<Vec<f64>, NetError> {
        images
            .iter()
            .map(|img| {
                let tape = Tape::inference();
                let x = img.data().clone().insert_axis(ndarray::Axis(0)).into_dyn();
                let out = self.forward(&tape, &x)?;
                Ok(out.logits.value()[[0]])
            })
            .collect()
    }

    /// The attention residual `x + lambda * f_att(x)`: pre-norm, queries
    /// from every spatial token, keys/values from a small pooled token
    /// grid, per-head scaled dot-product, output projection.
    fn residual_attention<'t>(
        &self,
        x: Var<'t>,
        stage: usize,
        get: &dyn Fn(&str) -> Var<'t>,
    ) -> Var<'t> {
        let pre = format!("att{stage}");
        let shape = x.shape();
        let (n, h, w, c) = (shape[0], shape[1], shape[2], shape[3]);
        let heads = self.config.attention.heads;
        let dh = c / heads;
        let tokens = h * w;
        // pooled KV grid: ceil(sqrt(proj_dim)) per side, clamped to extent
        let side = (self.config.attention.proj_dim as f64).sqrt().ceil() as usize;
        let (gh, gw) = (side.min(h).max(1), side.min(w).max(1));
        let pooled_tokens = gh * gw;

        let ln = layer_norm(
            x,
            get(&format!("{pre}.norm.gain")),
            get(&format!("{pre}.norm.bias")),
            self.config.ln_eps,
        );
        let flat = ln.reshape(&[n * tokens, c]);
        let q = linear_lastdim(
            flat,
            get(&format!("{pre}.q.weight")),
            get(&format!("{pre}.q.bias")),
        );
        let pooled = adaptive_avg_pool(ln, (gh, gw)).reshape(&[n * pooled_tokens, c]);
        let k = linear_lastdim(
            pooled,
            get(&format!("{pre}.k.weight")),
            get(&format!("{pre}.k.bias")),
        );
        let v = linear_lastdim(
            pooled,
            get(&format!("{pre}.v.weight")),
            get(&format!("{pre}.v.bias")),
        );

        let q = q.reshape(&[n, tokens, heads, dh]).permute(&[0, 2, 1, 3]);
        let k = k
            .reshape(&[n, pooled_tokens, heads, dh])
            .permute(&[0, 2, 3, 1]);
        let v = v
            .reshape(&[n, pooled_tokens, heads, dh])
            .permute(&[0, 2, 1, 3]);

        let scale = 1.0 / (dh as f64).sqrt();
        let mut batch_outputs = Vec::with_capacity(n);
        for i in 0..n {
            let mut head_outputs = Vec::with_capacity(heads);
            for hd in 0..heads {
                let qi = q
                    .slice(&[(i, 1), (hd, 1), (0, tokens), (0, dh)])
                    .reshape(&[tokens, dh]);
                let ki = k
                    .slice(&[(i, 1), (hd, 1), (0, dh), (0, pooled_tokens)])
                    .reshape(&[dh, pooled_tokens]);
                let vi = v
                    .slice(&[(i, 1), (hd, 1), (0, pooled_tokens), (0, dh)])
                    .reshape(&[pooled_tokens, dh]);
                let scores = qi.matmul(ki).scale(scale);
                let attn = softmax(scores);
                head_outputs.push(attn.matmul(vi));
            }
            let merged = concat(1, &head_outputs).reshape(&[1, tokens, c]);
            batch_outputs.push(merged);
        }
        let merged = if n == 1 {
            batch_outputs[0]
        } else {
            concat(0, &batch_outputs)
        };
        let out = linear_lastdim(
            merged.reshape(&[n * tokens, c]),
            get(&format!("{pre}.out.weight")),
            get(&format!("{pre}.out.bias")),
        );
        let f_att = out.reshape(&[n, h, w, c]);
        x.add(f_att.mul(get(&format!("{pre}.lambda"))))
    }
}

/// Applies `x @ w + b` over the last dimension of an arbitrary-rank tensor.
fn linear_lastdim<'t>(x: Var<'t>, w: Var<'t>, b: Var<'t>) -> Var<'t> {
    let shape = x.shape();
    let cin = *shape.last().expect("input has dims");
    let cout = w.shape()[1];
    let rows: usize = shape[..shape.len() - 1].iter().product();
    let flat = if shape.len() == 2 {
        x
    } else {
        x.reshape(&[rows, cin])
    };
    let out = flat.matmul(w).add(b);
    if shape.len() == 2 {
        out
    } else {
        let mut out_shape = shape[..shape.len() - 1].to_vec();
        out_shape.push(cout);
        out.reshape(&out_shape)
    }
}

#[cfg(test)]
mod tests;
