//! Channel and spatial attention gates.
//!
//! Four interchangeable gates fill the attention slot of the residual and
//! MBConv blocks: squeeze-excitation (SE), efficient channel attention
//! (ECA), the convolutional block attention module (CBAM), and coordinate
//! attention. All of them preserve the input shape and multiply it by
//! sigmoid gates, so `|out| <= |x|` holds elementwise.

use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::arch::ConfigError;
use crate::params::{BatchNormParams, Conv2dParams, DenseParams, FwdCtx, ParamId, ParamSet};
use crate::scalar::Scalar;
use crate::tape::NodeId;
use crate::tensor::ShapeError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    None,
    Se,
    Eca,
    Cbam,
    Coord,
}

impl AttentionKind {
    /// Model-name suffix ("-SE", "-ECA", ...); empty for none.
    pub fn suffix(&self) -> &'static str {
        match self {
            AttentionKind::None => "",
            AttentionKind::Se => "-SE",
            AttentionKind::Eca => "-ECA",
            AttentionKind::Cbam => "-CBAM",
            AttentionKind::Coord => "-COORD",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttentionSpec {
    pub kind: AttentionKind,
    /// SE bottleneck reduction ratio (also reused by the CBAM channel MLP).
    pub se_reduction: usize,
    /// Odd kernel of the CBAM spatial convolution.
    pub cbam_spatial_kernel: usize,
    pub coord_reduction: usize,
    pub eca_gamma: usize,
    pub eca_b: usize,
}

impl AttentionSpec {
    pub fn none() -> Self {
        Self::new(AttentionKind::None)
    }

    pub fn new(kind: AttentionKind) -> Self {
        Self {
            kind,
            se_reduction: 16,
            cbam_spatial_kernel: 7,
            coord_reduction: 32,
            eca_gamma: 2,
            eca_b: 1,
        }
    }

    /// Checks this gate configuration against one attachment site of
    /// `channels` width.
    pub fn validate(&self, channels: usize) -> Result<(), ConfigError> {
        match self.kind {
            AttentionKind::Se => {
                if self.se_reduction < 1 || self.se_reduction > channels {
                    return Err(ConfigError::Attention(format!(
                        "se_reduction {} must be in 1..={channels} at a {channels}-channel site",
                        self.se_reduction
                    )));
                }
            }
            AttentionKind::Cbam => {
                if self.cbam_spatial_kernel.is_multiple_of(2) {
                    return Err(ConfigError::Attention(format!(
                        "cbam_spatial_kernel {} must be odd",
                        self.cbam_spatial_kernel
                    )));
                }
                if self.se_reduction < 1 || self.se_reduction > channels {
                    return Err(ConfigError::Attention(format!(
                        "cbam channel reduction {} must be in 1..={channels}",
                        self.se_reduction
                    )));
                }
            }
            AttentionKind::Coord => {
                if self.coord_reduction < 1 {
                    return Err(ConfigError::Attention("coord_reduction must be >= 1".into()));
                }
            }
            AttentionKind::Eca => {
                if self.eca_gamma == 0 {
                    return Err(ConfigError::Attention("eca_gamma must be >= 1".into()));
                }
            }
            AttentionKind::None => {}
        }
        Ok(())
    }

    /// Trainable + buffer scalars one gate adds at a `channels`-wide site.
    pub fn param_count(&self, channels: usize) -> usize {
        match self.kind {
            AttentionKind::None => 0,
            AttentionKind::Se => se_param_count(channels, self.se_reduction),
            AttentionKind::Eca => eca_kernel_size(channels, self.eca_gamma, self.eca_b) + 1,
            AttentionKind::Cbam => {
                se_param_count(channels, self.se_reduction)
                    + 2 * self.cbam_spatial_kernel * self.cbam_spatial_kernel
                    + 4
            }
            AttentionKind::Coord => {
                let mid = coord_mid(channels, self.coord_reduction);
                channels * mid + mid + 4 * mid + 2 * (mid * channels + channels)
            }
        }
    }
}

impl Default for AttentionSpec {
    fn default() -> Self {
        Self::none()
    }
}

fn se_mid(channels: usize, reduction: usize) -> usize {
    channels.div_ceil(reduction).max(1)
}

/// SE gate size: 2·C·⌈C/r⌉ + ⌈C/r⌉ + C (both dense layers biased).
pub fn se_param_count(channels: usize, reduction: usize) -> usize {
    let mid = se_mid(channels, reduction);
    2 * channels * mid + mid + channels
}

fn coord_mid(channels: usize, reduction: usize) -> usize {
    (channels / reduction).max(8)
}

/// Adaptive ECA kernel: floor(log2(C)/γ + b/γ), bumped to the next odd
/// number, never below 3.
pub fn eca_kernel_size(channels: usize, gamma: usize, b: usize) -> usize {
    let v = ((channels as f64).log2() + b as f64) / gamma as f64;
    let mut k = v.floor() as usize;
    if k.is_multiple_of(2) {
        k += 1;
    }
    k.max(3)
}

// ── layers ──────────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct SeBlock {
    fc1: DenseParams,
    fc2: DenseParams,
    channels: usize,
}

impl SeBlock {
    pub fn build<E: Scalar>(
        params: &mut ParamSet<E>,
        rng: &mut ChaCha20Rng,
        prefix: &str,
        channels: usize,
        reduction: usize,
    ) -> Self {
        let mid = se_mid(channels, reduction);
        Self {
            fc1: DenseParams::build(params, rng, &format!("{prefix}.fc1"), channels, mid, true),
            fc2: DenseParams::build(params, rng, &format!("{prefix}.fc2"), mid, channels, true),
            channels,
        }
    }

    pub fn forward<E: Scalar>(&self, ctx: &mut FwdCtx<E>, x: NodeId) -> Result<NodeId, ShapeError> {
        let n = ctx.tape.shape(x)[0];
        let pooled = ctx.tape.global_avg_pool2d(x)?;
        let h = self.fc1.forward(ctx, pooled)?;
        let h = ctx.tape.relu(h);
        let h = self.fc2.forward(ctx, h)?;
        let gate = ctx.tape.sigmoid(h);
        let gate = ctx.tape.reshape(gate, vec![n, self.channels, 1, 1])?;
        ctx.tape.mul(x, gate)
    }
}

#[derive(Debug, Clone)]
pub struct EcaBlock {
    pub w: ParamId,
    pub b: ParamId,
    channels: usize,
    kernel: usize,
}

impl EcaBlock {
    pub fn build<E: Scalar>(
        params: &mut ParamSet<E>,
        rng: &mut ChaCha20Rng,
        prefix: &str,
        channels: usize,
        spec: &AttentionSpec,
    ) -> Self {
        let kernel = eca_kernel_size(channels, spec.eca_gamma, spec.eca_b);
        let w = params.he_uniform(rng, format!("{prefix}.w"), vec![1, 1, kernel], kernel);
        let b = params.zeros(format!("{prefix}.b"), vec![1], true);
        Self {
            w,
            b,
            channels,
            kernel,
        }
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn forward<E: Scalar>(&self, ctx: &mut FwdCtx<E>, x: NodeId) -> Result<NodeId, ShapeError> {
        let n = ctx.tape.shape(x)[0];
        let pooled = ctx.tape.global_avg_pool2d(x)?;
        let seq = ctx.tape.reshape(pooled, vec![n, 1, self.channels])?;
        let conv = ctx
            .tape
            .conv1d_same(seq, ctx.binding.node(self.w), Some(ctx.binding.node(self.b)))?;
        let gate = ctx.tape.sigmoid(conv);
        let gate = ctx.tape.reshape(gate, vec![n, self.channels, 1, 1])?;
        ctx.tape.mul(x, gate)
    }
}

#[derive(Debug, Clone)]
pub struct CbamBlock {
    mlp1: DenseParams,
    mlp2: DenseParams,
    spatial: Conv2dParams,
    spatial_bn: BatchNormParams,
    channels: usize,
}

impl CbamBlock {
    pub fn build<E: Scalar>(
        params: &mut ParamSet<E>,
        rng: &mut ChaCha20Rng,
        prefix: &str,
        channels: usize,
        spec: &AttentionSpec,
    ) -> Self {
        let mid = se_mid(channels, spec.se_reduction);
        Self {
            mlp1: DenseParams::build(params, rng, &format!("{prefix}.mlp1"), channels, mid, true),
            mlp2: DenseParams::build(params, rng, &format!("{prefix}.mlp2"), mid, channels, true),
            spatial: Conv2dParams::build(
                params,
                rng,
                &format!("{prefix}.spatial"),
                2,
                1,
                spec.cbam_spatial_kernel,
                1,
                false,
            ),
            spatial_bn: BatchNormParams::build(params, &format!("{prefix}.spatial_bn"), 1),
            channels,
        }
    }

    pub fn forward<E: Scalar>(&self, ctx: &mut FwdCtx<E>, x: NodeId) -> Result<NodeId, ShapeError> {
        let shape = ctx.tape.shape(x).to_vec();
        let (n, h, w) = (shape[0], shape[2], shape[3]);
        // CAM: shared MLP over both the GAP and GMP channel vectors
        let avg = ctx.tape.global_avg_pool2d(x)?;
        let mx = ctx.tape.global_max_pool2d(x)?;
        let a = self.mlp1.forward(ctx, avg)?;
        let a = ctx.tape.relu(a);
        let a = self.mlp2.forward(ctx, a)?;
        let m = self.mlp1.forward(ctx, mx)?;
        let m = ctx.tape.relu(m);
        let m = self.mlp2.forward(ctx, m)?;
        let sum = ctx.tape.add(a, m)?;
        let cgate = ctx.tape.sigmoid(sum);
        let cgate = ctx.tape.reshape(cgate, vec![n, self.channels, 1, 1])?;
        let gated = ctx.tape.mul(x, cgate)?;
        // SAM: channel pool to a 2xHxW stack, conv to one map, BN, sigmoid
        let ch_mean = ctx.tape.mean_axis(gated, 1)?;
        let ch_mean = ctx.tape.reshape(ch_mean, vec![n, 1, h, w])?;
        let ch_max = ctx.tape.max_axis(gated, 1)?;
        let ch_max = ctx.tape.reshape(ch_max, vec![n, 1, h, w])?;
        let stack = ctx.tape.concat(&[ch_max, ch_mean], 1)?;
        let s = self.spatial.forward(ctx, stack)?;
        let s = self.spatial_bn.forward(ctx, s)?;
        let sgate = ctx.tape.sigmoid(s);
        ctx.tape.mul(gated, sgate)
    }
}

#[derive(Debug, Clone)]
pub struct CoordBlock {
    conv1: Conv2dParams,
    bn: BatchNormParams,
    conv_h: Conv2dParams,
    conv_w: Conv2dParams,
}

impl CoordBlock {
    pub fn build<E: Scalar>(
        params: &mut ParamSet<E>,
        rng: &mut ChaCha20Rng,
        prefix: &str,
        channels: usize,
        spec: &AttentionSpec,
    ) -> Self {
        let mid = coord_mid(channels, spec.coord_reduction);
        Self {
            conv1: Conv2dParams::build(params, rng, &format!("{prefix}.conv1"), channels, mid, 1, 1, true),
            bn: BatchNormParams::build(params, &format!("{prefix}.bn"), mid),
            conv_h: Conv2dParams::build(params, rng, &format!("{prefix}.conv_h"), mid, channels, 1, 1, true),
            conv_w: Conv2dParams::build(params, rng, &format!("{prefix}.conv_w"), mid, channels, 1, 1, true),
        }
    }

    pub fn forward<E: Scalar>(&self, ctx: &mut FwdCtx<E>, x: NodeId) -> Result<NodeId, ShapeError> {
        let shape = ctx.tape.shape(x).to_vec();
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        // directional pooling: along W for the H descriptor and vice versa
        let ph = ctx.tape.mean_axis(x, 3)?;
        let ph = ctx.tape.reshape(ph, vec![n, c, h, 1])?;
        let pw = ctx.tape.mean_axis(x, 2)?;
        let pw = ctx.tape.reshape(pw, vec![n, c, w, 1])?;
        let cat = ctx.tape.concat(&[ph, pw], 2)?;
        let y = self.conv1.forward(ctx, cat)?;
        let y = self.bn.forward(ctx, y)?;
        let y = ctx.tape.swish(y);
        let yh = ctx.tape.slice(y, 2, 0, h)?;
        let yw = ctx.tape.slice(y, 2, h, w)?;
        let gh = self.conv_h.forward(ctx, yh)?;
        let gh = ctx.tape.sigmoid(gh);
        let gw = self.conv_w.forward(ctx, yw)?;
        let gw = ctx.tape.permute(gw, &[0, 1, 3, 2])?;
        let gw = ctx.tape.sigmoid(gw);
        let out = ctx.tape.mul(x, gh)?;
        ctx.tape.mul(out, gw)
    }
}

/// The attention slot of a block: one of the four gates or a pass-through.
#[derive(Debug, Clone)]
pub enum AttentionLayer {
    None,
    Se(SeBlock),
    Eca(EcaBlock),
    Cbam(CbamBlock),
    Coord(CoordBlock),
}

impl AttentionLayer {
    pub fn build<E: Scalar>(
        params: &mut ParamSet<E>,
        rng: &mut ChaCha20Rng,
        prefix: &str,
        channels: usize,
        spec: &AttentionSpec,
    ) -> Result<Self, ConfigError> {
        spec.validate(channels)?;
        Ok(match spec.kind {
            AttentionKind::None => AttentionLayer::None,
            AttentionKind::Se => AttentionLayer::Se(SeBlock::build(
                params,
                rng,
                prefix,
                channels,
                spec.se_reduction,
            )),
            AttentionKind::Eca => {
                AttentionLayer::Eca(EcaBlock::build(params, rng, prefix, channels, spec))
            }
            AttentionKind::Cbam => {
                AttentionLayer::Cbam(CbamBlock::build(params, rng, prefix, channels, spec))
            }
            AttentionKind::Coord => {
                AttentionLayer::Coord(CoordBlock::build(params, rng, prefix, channels, spec))
            }
        })
    }

    pub fn forward<E: Scalar>(&self, ctx: &mut FwdCtx<E>, x: NodeId) -> Result<NodeId, ShapeError> {
        match self {
            AttentionLayer::None => Ok(x),
            AttentionLayer::Se(l) => l.forward(ctx, x),
            AttentionLayer::Eca(l) => l.forward(ctx, x),
            AttentionLayer::Cbam(l) => l.forward(ctx, x),
            AttentionLayer::Coord(l) => l.forward(ctx, x),
        }
    }
}
