//! Composable network building blocks: the widened pre-activation residual
//! block, the inverted residual (MBConv) block, and the ghost convolution
//! substitute that produces part of its feature maps with cheap depthwise
//! transforms.

use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::arch::ConfigError;
use crate::attention::{AttentionLayer, AttentionSpec};
use crate::kernels::Padding;
use crate::params::{BatchNormParams, Conv2dParams, FwdCtx, ParamId, ParamSet};
use crate::scalar::Scalar;
use crate::tape::NodeId;
use crate::tensor::ShapeError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockKind {
    Wrn,
    MbConv1,
    MbConv6,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub attention: AttentionSpec,
    pub ghost: bool,
    pub ghost_ratio: usize,
    pub ghost_dw_kernel: usize,
    /// Depthwise kernel of MBConv blocks (3 or 5); the residual block always
    /// uses 3x3 convolutions.
    pub kernel: usize,
}

impl BlockSpec {
    pub fn new(kind: BlockKind, in_channels: usize, out_channels: usize, stride: usize) -> Self {
        Self {
            kind,
            in_channels,
            out_channels,
            stride,
            attention: AttentionSpec::none(),
            ghost: false,
            ghost_ratio: 2,
            ghost_dw_kernel: 3,
            kernel: 3,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.stride == 1 || self.stride == 2) {
            return Err(ConfigError::Block(format!(
                "stride {} not in {{1, 2}}",
                self.stride
            )));
        }
        if self.out_channels == 0 {
            return Err(ConfigError::Block("out_channels must be >= 1".into()));
        }
        if self.ghost && self.ghost_ratio == 0 {
            return Err(ConfigError::Block("ghost_ratio must be >= 1".into()));
        }
        Ok(())
    }

    /// MBConv expansion factor (1 or 6); not meaningful for Wrn.
    pub fn expansion(&self) -> usize {
        match self.kind {
            BlockKind::MbConv1 => 1,
            BlockKind::MbConv6 => 6,
            BlockKind::Wrn => 1,
        }
    }
}

/// Scalars held by a ghost substitution of a `cin -> cout`, `k x k` conv.
pub fn ghost_conv_param_count(
    cin: usize,
    cout: usize,
    k: usize,
    ratio: usize,
    dw_kernel: usize,
) -> usize {
    if ratio == 1 {
        return cin * cout * k * k;
    }
    let intrinsic = cout / ratio;
    cin * intrinsic * k * k + (ratio - 1) * intrinsic * dw_kernel * dw_kernel
}

/// Convolution substitute: a primary conv produces `out/ratio` intrinsic
/// maps and `ratio-1` cheap depthwise passes produce the remaining ghost
/// maps, concatenated along the channel axis. `ratio == 1` degenerates to a
/// plain convolution.
#[derive(Debug, Clone)]
pub struct GhostConv {
    primary_w: ParamId,
    cheap_w: Vec<ParamId>,
    stride: usize,
}

impl GhostConv {
    #[allow(clippy::too_many_arguments)]
    pub fn build<E: Scalar>(
        params: &mut ParamSet<E>,
        rng: &mut ChaCha20Rng,
        prefix: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        ratio: usize,
        dw_kernel: usize,
    ) -> Result<Self, ConfigError> {
        if ratio == 0 || !cout.is_multiple_of(ratio) {
            return Err(ConfigError::Block(format!(
                "ghost_ratio {ratio} must divide the {cout} output channels of {prefix}"
            )));
        }
        let intrinsic = cout / ratio;
        let primary_w = params.he_uniform(
            rng,
            format!("{prefix}.primary.w"),
            vec![intrinsic, cin, k, k],
            cin * k * k,
        );
        let cheap_w = (0..ratio - 1)
            .map(|i| {
                params.he_uniform(
                    rng,
                    format!("{prefix}.cheap{i}.w"),
                    vec![intrinsic, 1, dw_kernel, dw_kernel],
                    dw_kernel * dw_kernel,
                )
            })
            .collect();
        Ok(Self {
            primary_w,
            cheap_w,
            stride,
        })
    }

    pub fn forward<E: Scalar>(&self, ctx: &mut FwdCtx<E>, x: NodeId) -> Result<NodeId, ShapeError> {
        let primary = ctx.tape.conv2d(
            x,
            ctx.binding.node(self.primary_w),
            None,
            self.stride,
            Padding::Same,
        )?;
        if self.cheap_w.is_empty() {
            return Ok(primary);
        }
        let mut parts = vec![primary];
        for w in &self.cheap_w {
            let ghost =
                ctx.tape
                    .depthwise_conv2d(primary, ctx.binding.node(*w), None, 1, Padding::Same)?;
            parts.push(ghost);
        }
        ctx.tape.concat(&parts, 1)
    }
}

/// Either a plain (bias-free, same-padded) convolution or its ghost
/// substitute, chosen by the block spec.
#[derive(Debug, Clone)]
pub enum ConvOrGhost {
    Plain(Conv2dParams),
    Ghost(GhostConv),
}

impl ConvOrGhost {
    #[allow(clippy::too_many_arguments)]
    pub fn build<E: Scalar>(
        params: &mut ParamSet<E>,
        rng: &mut ChaCha20Rng,
        prefix: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        spec: &BlockSpec,
    ) -> Result<Self, ConfigError> {
        Ok(if spec.ghost {
            ConvOrGhost::Ghost(GhostConv::build(
                params,
                rng,
                prefix,
                cin,
                cout,
                k,
                stride,
                spec.ghost_ratio,
                spec.ghost_dw_kernel,
            )?)
        } else {
            ConvOrGhost::Plain(Conv2dParams::build(
                params, rng, prefix, cin, cout, k, stride, false,
            ))
        })
    }

    pub fn forward<E: Scalar>(&self, ctx: &mut FwdCtx<E>, x: NodeId) -> Result<NodeId, ShapeError> {
        match self {
            ConvOrGhost::Plain(c) => c.forward(ctx, x),
            ConvOrGhost::Ghost(g) => g.forward(ctx, x),
        }
    }
}

/// Pre-activation widened residual block:
/// BN -> relu -> conv3x3(stride) -> BN -> relu -> conv3x3 -> attention ->
/// + shortcut (1x1 projection when the shape changes).
#[derive(Debug, Clone)]
pub struct WrnBlock {
    bn1: BatchNormParams,
    conv1: ConvOrGhost,
    bn2: BatchNormParams,
    conv2: ConvOrGhost,
    attention: AttentionLayer,
    shortcut: Option<Conv2dParams>,
}

impl WrnBlock {
    pub fn build<E: Scalar>(
        params: &mut ParamSet<E>,
        rng: &mut ChaCha20Rng,
        prefix: &str,
        spec: &BlockSpec,
    ) -> Result<Self, ConfigError> {
        spec.validate()?;
        let (cin, cout) = (spec.in_channels, spec.out_channels);
        let bn1 = BatchNormParams::build(params, &format!("{prefix}.bn1"), cin);
        let conv1 = ConvOrGhost::build(
            params,
            rng,
            &format!("{prefix}.conv1"),
            cin,
            cout,
            3,
            spec.stride,
            spec,
        )?;
        let bn2 = BatchNormParams::build(params, &format!("{prefix}.bn2"), cout);
        let conv2 = ConvOrGhost::build(
            params,
            rng,
            &format!("{prefix}.conv2"),
            cout,
            cout,
            3,
            1,
            spec,
        )?;
        let attention = AttentionLayer::build(
            params,
            rng,
            &format!("{prefix}.att"),
            cout,
            &spec.attention,
        )?;
        // projection shortcut only when the shape changes; plain 1x1, no BN
        let shortcut = (cin != cout || spec.stride != 1).then(|| {
            Conv2dParams::build(
                params,
                rng,
                &format!("{prefix}.shortcut"),
                cin,
                cout,
                1,
                spec.stride,
                false,
            )
        });
        Ok(Self {
            bn1,
            conv1,
            bn2,
            conv2,
            attention,
            shortcut,
        })
    }

    pub fn forward<E: Scalar>(&self, ctx: &mut FwdCtx<E>, x: NodeId) -> Result<NodeId, ShapeError> {
        let h = self.bn1.forward(ctx, x)?;
        let h = ctx.tape.relu(h);
        let h = self.conv1.forward(ctx, h)?;
        let h = self.bn2.forward(ctx, h)?;
        let h = ctx.tape.relu(h);
        let h = self.conv2.forward(ctx, h)?;
        let h = self.attention.forward(ctx, h)?;
        let sc = match &self.shortcut {
            Some(proj) => proj.forward(ctx, x)?,
            None => x,
        };
        ctx.tape.add(h, sc)
    }
}

/// Inverted residual block: pointwise expansion (elided at factor 1) ->
/// depthwise conv -> attention -> pointwise projection, with BN + swish
/// after the first two stages and a residual add at stride 1 when the
/// channel count is preserved.
#[derive(Debug, Clone)]
pub struct MbConvBlock {
    expand: Option<(ConvOrGhost, BatchNormParams)>,
    dw_w: ParamId,
    dw_bn: BatchNormParams,
    attention: AttentionLayer,
    project: Conv2dParams,
    project_bn: BatchNormParams,
    stride: usize,
    residual: bool,
}

impl MbConvBlock {
    pub fn build<E: Scalar>(
        params: &mut ParamSet<E>,
        rng: &mut ChaCha20Rng,
        prefix: &str,
        spec: &BlockSpec,
    ) -> Result<Self, ConfigError> {
        spec.validate()?;
        let (cin, cout) = (spec.in_channels, spec.out_channels);
        let factor = spec.expansion();
        let mid = cin * factor;
        let expand = if factor > 1 {
            let conv = ConvOrGhost::build(
                params,
                rng,
                &format!("{prefix}.expand"),
                cin,
                mid,
                1,
                1,
                spec,
            )?;
            let bn = BatchNormParams::build(params, &format!("{prefix}.expand_bn"), mid);
            Some((conv, bn))
        } else {
            None
        };
        let dw_w = params.he_uniform(
            rng,
            format!("{prefix}.dw.w"),
            vec![mid, 1, spec.kernel, spec.kernel],
            spec.kernel * spec.kernel,
        );
        let dw_bn = BatchNormParams::build(params, &format!("{prefix}.dw_bn"), mid);
        let attention = AttentionLayer::build(
            params,
            rng,
            &format!("{prefix}.att"),
            mid,
            &spec.attention,
        )?;
        let project = Conv2dParams::build(
            params,
            rng,
            &format!("{prefix}.project"),
            mid,
            cout,
            1,
            1,
            false,
        );
        let project_bn = BatchNormParams::build(params, &format!("{prefix}.project_bn"), cout);
        Ok(Self {
            expand,
            dw_w,
            dw_bn,
            attention,
            project,
            project_bn,
            stride: spec.stride,
            residual: spec.stride == 1 && cin == cout,
        })
    }

    pub fn has_residual(&self) -> bool {
        self.residual
    }

    pub fn forward<E: Scalar>(&self, ctx: &mut FwdCtx<E>, x: NodeId) -> Result<NodeId, ShapeError> {
        let mut h = x;
        if let Some((conv, bn)) = &self.expand {
            h = conv.forward(ctx, h)?;
            h = bn.forward(ctx, h)?;
            h = ctx.tape.swish(h);
        }
        h = ctx
            .tape
            .depthwise_conv2d(h, ctx.binding.node(self.dw_w), None, self.stride, Padding::Same)?;
        h = self.dw_bn.forward(ctx, h)?;
        h = ctx.tape.swish(h);
        h = self.attention.forward(ctx, h)?;
        h = self.project.forward(ctx, h)?;
        h = self.project_bn.forward(ctx, h)?;
        if self.residual {
            h = ctx.tape.add(h, x)?;
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::{Mode, Tape};
    use rand::{Rng, SeedableRng};

    fn ctx_run<E: Scalar, F>(params: &mut ParamSet<E>, shape: Vec<usize>, x: Vec<E>, f: F) -> (Vec<usize>, Vec<E>)
    where
        F: FnOnce(&mut FwdCtx<E>, NodeId) -> Result<NodeId, ShapeError>,
    {
        let mut tape = Tape::new();
        let binding = params.bind(&mut tape);
        let xid = tape.leaf_from(shape, x).unwrap();
        let mut ctx = FwdCtx {
            tape: &mut tape,
            params,
            binding: &binding,
            mode: Mode::Train,
            bn_eps: E::from_f64c(1e-3),
            bn_momentum: E::from_f64c(0.99),
        };
        let y = f(&mut ctx, xid).unwrap();
        (tape.shape(y).to_vec(), tape.data(y).to_vec())
    }

    #[test]
    fn ghost_param_count_examples() {
        // Cin=16, Cout=32, k=3, s=2: primary 16·16·9 + cheap 16·9 = 2448 vs 4608
        assert_eq!(ghost_conv_param_count(16, 32, 3, 2, 3), 2448);
        assert_eq!(ghost_conv_param_count(16, 32, 3, 1, 3), 4608);
        let mut params = ParamSet::<f32>::new();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        GhostConv::build(&mut params, &mut rng, "g", 16, 32, 3, 1, 2, 3).unwrap();
        assert_eq!(params.total_scalars(), 2448);
    }

    #[test]
    fn ghost_count_below_standard_conv_at_substitution_sites() {
        // Strictly cheaper whenever the substituted kernel carries more
        // weights per map than the depthwise transform (cin·k² > dw²); that
        // covers every site the builders substitute (3x3 body convs with
        // cin >= 10 and 1x1 expansions with cin >= 16).
        for cin in [2usize, 10, 16, 33] {
            for k in [3usize, 5] {
                for ratio in [2usize, 4] {
                    let cout = ratio * 8;
                    assert!(
                        ghost_conv_param_count(cin, cout, k, ratio, 3) < cin * cout * k * k,
                        "cin={cin} k={k} ratio={ratio}"
                    );
                }
            }
        }
        for cin in [16usize, 64, 320] {
            assert!(ghost_conv_param_count(cin, 32, 1, 2, 3) < cin * 32);
        }
    }

    #[test]
    fn ghost_ratio_must_divide_out_channels() {
        let mut params = ParamSet::<f32>::new();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let err = GhostConv::build(&mut params, &mut rng, "g", 4, 9, 3, 1, 2, 3).unwrap_err();
        assert!(err.to_string().contains("ghost_ratio"));
    }

    #[test]
    fn ghost_ratio_one_matches_plain_conv_exactly() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let x: Vec<f32> = (0..2 * 3 * 5 * 5).map(|_| rng.gen::<f32>() - 0.5).collect();
        let w: Vec<f32> = (0..8 * 3 * 9).map(|_| rng.gen::<f32>() - 0.5).collect();

        let mut p1 = ParamSet::<f32>::new();
        let ghost = GhostConv::build(&mut p1, &mut ChaCha20Rng::seed_from_u64(0), "g", 3, 8, 3, 1, 1, 3).unwrap();
        p1.get_mut(ghost.primary_w).data = w.clone();
        let (_, got) = ctx_run(&mut p1, vec![2, 3, 5, 5], x.clone(), |ctx, xid| {
            ghost.forward(ctx, xid)
        });

        let mut p2 = ParamSet::<f32>::new();
        let conv = Conv2dParams::build(&mut p2, &mut ChaCha20Rng::seed_from_u64(0), "c", 3, 8, 3, 1, false);
        p2.get_mut(conv.w).data = w;
        let (_, want) = ctx_run(&mut p2, vec![2, 3, 5, 5], x, |ctx, xid| conv.forward(ctx, xid));
        assert_eq!(got, want);
    }

    #[test]
    fn wrn_block_pure_shortcut_with_zero_convs() {
        let spec = BlockSpec::new(BlockKind::Wrn, 4, 4, 1);
        let mut params = ParamSet::<f32>::new();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let block = WrnBlock::build(&mut params, &mut rng, "b", &spec).unwrap();
        assert!(block.shortcut.is_none());
        for e in params.entries_mut() {
            if e.name.contains("conv") {
                e.data.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let x: Vec<f32> = (0..4 * 9).map(|i| i as f32 * 0.25 - 3.0).collect();
        let (shape, y) = ctx_run(&mut params, vec![1, 4, 3, 3], x.clone(), |ctx, xid| {
            block.forward(ctx, xid)
        });
        assert_eq!(shape, vec![1, 4, 3, 3]);
        assert_eq!(y, x);
    }

    #[test]
    fn blocks_halve_spatial_extent_at_stride_two() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let x: Vec<f32> = (0..2 * 4 * 7 * 7).map(|_| rng.gen()).collect();
        let spec = BlockSpec::new(BlockKind::Wrn, 4, 6, 2);
        let mut params = ParamSet::<f32>::new();
        let block = WrnBlock::build(&mut params, &mut rng, "b", &spec).unwrap();
        assert!(block.shortcut.is_some());
        let (shape, _) = ctx_run(&mut params, vec![2, 4, 7, 7], x.clone(), |ctx, xid| {
            block.forward(ctx, xid)
        });
        assert_eq!(shape, vec![2, 6, 4, 4], "ceil(7/2) = 4");

        let spec = BlockSpec::new(BlockKind::MbConv6, 4, 6, 2);
        let mut params = ParamSet::<f32>::new();
        let block = MbConvBlock::build(&mut params, &mut rng, "m", &spec).unwrap();
        assert!(!block.has_residual(), "stride-2 block has no residual add");
        let (shape, _) = ctx_run(&mut params, vec![2, 4, 7, 7], x, |ctx, xid| {
            block.forward(ctx, xid)
        });
        assert_eq!(shape, vec![2, 6, 4, 4]);
    }

    #[test]
    fn mbconv6_expands_mid_channels_sixfold() {
        let spec = BlockSpec::new(BlockKind::MbConv6, 5, 5, 1);
        let mut params = ParamSet::<f32>::new();
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let block = MbConvBlock::build(&mut params, &mut rng, "m", &spec).unwrap();
        assert!(block.has_residual());
        let dw = params.get(block.dw_w);
        assert_eq!(dw.shape[0], 30, "depthwise runs on 6x expanded channels");
        // factor-1 block elides the expansion conv entirely
        let spec1 = BlockSpec::new(BlockKind::MbConv1, 5, 5, 1);
        let mut params1 = ParamSet::<f32>::new();
        let block1 = MbConvBlock::build(&mut params1, &mut rng, "m", &spec1).unwrap();
        assert!(block1.expand.is_none());
    }

    #[test]
    fn invalid_strides_rejected() {
        let spec = BlockSpec::new(BlockKind::Wrn, 4, 4, 3);
        assert!(spec.validate().is_err());
    }
}
