//! Declarative model builders for the four benchmarked families and their
//! parameter accounting.
//!
//! A [`ModelConfig`] fully describes an architecture; [`Model::build`]
//! materializes it into a [`ParamSet`] plus a layer graph. Reported model
//! sizes count every stored scalar, including batch-norm running statistics,
//! which is the convention the published size tables follow (convolutions
//! are bias-free, the classifier head is biased).

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::AttentionSpec;
use crate::blocks::{BlockKind, BlockSpec, ConvOrGhost, MbConvBlock, WrnBlock};
use crate::params::{
    Binding, BatchNormParams, Conv2dParams, DenseParams, FwdCtx, LayerNormParams, ParamId,
    ParamSet,
};
use crate::scalar::Scalar;
use crate::tape::{Mode, NodeId, Tape};
use crate::tensor::{ShapeError, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("attention: {0}")]
    Attention(String),
    #[error("block: {0}")]
    Block(String),
    #[error("model: {0}")]
    Model(String),
    #[error("scaling: {0}")]
    Scaling(String),
}

/// Family-specific architecture knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum FamilySpec {
    Wrn {
        base_depth: usize,
        widen_factor: usize,
    },
    EfficientNet,
    MlpMixer {
        patch: usize,
        hidden: usize,
        layers: usize,
        token_dim: usize,
        channel_dim: usize,
    },
    Vit {
        patch: usize,
        layers: usize,
        heads: usize,
        hidden: usize,
        mlp_ratio: usize,
        use_class_token: bool,
    },
}

impl FamilySpec {
    pub fn tag(&self) -> &'static str {
        match self {
            FamilySpec::Wrn { .. } => "WRN",
            FamilySpec::EfficientNet => "EfficientNet",
            FamilySpec::MlpMixer { .. } => "MLPMixer",
            FamilySpec::Vit { .. } => "ViT",
        }
    }

    pub fn is_convolutional(&self) -> bool {
        matches!(self, FamilySpec::Wrn { .. } | FamilySpec::EfficientNet)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(flatten)]
    pub family: FamilySpec,
    pub attention: AttentionSpec,
    pub ghost: bool,
    pub depth_multiplier: f64,
    pub width_multiplier: f64,
    pub resolution: usize,
    pub in_channels: usize,
    pub num_classes: usize,
}

impl ModelConfig {
    pub fn new(family: FamilySpec) -> Self {
        let resolution = match family {
            FamilySpec::MlpMixer { .. } | FamilySpec::Vit { .. } => 120,
            _ => 60,
        };
        Self {
            family,
            attention: AttentionSpec::none(),
            ghost: false,
            depth_multiplier: 1.0,
            width_multiplier: 1.0,
            resolution,
            in_channels: 10,
            num_classes: 19,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.depth_multiplier < 1.0 || self.width_multiplier < 1.0 {
            return Err(ConfigError::Model(format!(
                "multipliers must be >= 1, got d={} w={}",
                self.depth_multiplier, self.width_multiplier
            )));
        }
        if self.resolution == 0 || self.in_channels == 0 || self.num_classes == 0 {
            return Err(ConfigError::Model(
                "resolution, in_channels and num_classes must be positive".into(),
            ));
        }
        match &self.family {
            FamilySpec::Wrn {
                base_depth,
                widen_factor,
            } => {
                if *base_depth < 10 || (*base_depth - 4) % 6 != 0 {
                    return Err(ConfigError::Model(format!(
                        "wrn base_depth {base_depth} must satisfy 6n+4 with n >= 1"
                    )));
                }
                if *widen_factor == 0 {
                    return Err(ConfigError::Model("widen_factor must be >= 1".into()));
                }
            }
            FamilySpec::MlpMixer { patch, .. } => {
                if !self.resolution.is_multiple_of(*patch) {
                    return Err(ConfigError::Model(format!(
                        "MLPMixer/{patch}: resolution {} is not divisible by the patch size",
                        self.resolution
                    )));
                }
            }
            FamilySpec::Vit {
                patch,
                heads,
                hidden,
                ..
            } => {
                if !self.resolution.is_multiple_of(*patch) {
                    return Err(ConfigError::Model(format!(
                        "ViT/{patch}: resolution {} is not divisible by the patch size",
                        self.resolution
                    )));
                }
                if hidden % heads != 0 {
                    return Err(ConfigError::Model(format!(
                        "ViT hidden width {hidden} is not divisible by {heads} heads"
                    )));
                }
            }
            FamilySpec::EfficientNet => {}
        }
        Ok(())
    }

    /// Concrete layout signature: configs that materialize into the same
    /// architecture compare equal here even when their raw multipliers
    /// differ (used by the grid-search dedupe rule).
    pub fn layout_signature(&self) -> Result<Vec<usize>, ConfigError> {
        self.validate()?;
        let mut sig = vec![
            self.resolution,
            self.in_channels,
            self.num_classes,
            self.ghost as usize,
        ];
        match &self.family {
            FamilySpec::Wrn { .. } => {
                let l = wrn_layout(self)?;
                sig.push(0);
                sig.push(l.blocks_per_group);
                sig.extend_from_slice(&l.widths);
            }
            FamilySpec::EfficientNet => {
                let (stem, stages, head) = effnet_layout(self.width_multiplier, self.depth_multiplier);
                sig.push(1);
                sig.push(stem);
                sig.push(head);
                for s in stages {
                    sig.push(s.channels);
                    sig.push(s.repeats);
                }
            }
            FamilySpec::MlpMixer {
                patch,
                hidden,
                layers,
                token_dim,
                channel_dim,
            } => sig.extend_from_slice(&[2, *patch, *hidden, *layers, *token_dim, *channel_dim]),
            FamilySpec::Vit {
                patch,
                layers,
                heads,
                hidden,
                mlp_ratio,
                use_class_token,
            } => sig.extend_from_slice(&[
                3,
                *patch,
                *layers,
                *heads,
                *hidden,
                *mlp_ratio,
                *use_class_token as usize,
            ]),
        }
        Ok(sig)
    }
}

// ── WRN layout ──────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WrnLayout {
    pub stem_width: usize,
    pub widths: [usize; 3],
    pub blocks_per_group: usize,
}

pub fn wrn_layout(cfg: &ModelConfig) -> Result<WrnLayout, ConfigError> {
    let FamilySpec::Wrn {
        base_depth,
        widen_factor,
    } = cfg.family
    else {
        return Err(ConfigError::Model("not a wrn config".into()));
    };
    let n_base = (base_depth - 4) / 6;
    let blocks = ((n_base as f64 * cfg.depth_multiplier).round() as usize).max(1);
    let width = |base: usize| ((base * widen_factor) as f64 * cfg.width_multiplier).round() as usize;
    Ok(WrnLayout {
        stem_width: 16,
        widths: [width(16).max(1), width(32).max(1), width(64).max(1)],
        blocks_per_group: blocks,
    })
}

// ── EfficientNet layout ─────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EffStage {
    pub expand: usize,
    pub channels: usize,
    pub repeats: usize,
    pub stride: usize,
    pub kernel: usize,
}

const EFFNET_BASE_STAGES: [EffStage; 7] = [
    EffStage { expand: 1, channels: 16, repeats: 1, stride: 1, kernel: 3 },
    EffStage { expand: 6, channels: 24, repeats: 2, stride: 2, kernel: 3 },
    EffStage { expand: 6, channels: 40, repeats: 2, stride: 2, kernel: 5 },
    EffStage { expand: 6, channels: 80, repeats: 3, stride: 2, kernel: 3 },
    EffStage { expand: 6, channels: 112, repeats: 3, stride: 1, kernel: 5 },
    EffStage { expand: 6, channels: 192, repeats: 4, stride: 2, kernel: 5 },
    EffStage { expand: 6, channels: 320, repeats: 1, stride: 1, kernel: 3 },
];

/// Round a filter count to the nearest multiple of 8 that stays within 90%
/// of the unrounded value.
pub fn round_filters(filters: usize, width_mult: f64) -> usize {
    let scaled = filters as f64 * width_mult;
    let mut new = (((scaled + 4.0) / 8.0).floor() * 8.0).max(8.0);
    if new < 0.9 * scaled {
        new += 8.0;
    }
    new as usize
}

pub fn round_repeats(repeats: usize, depth_mult: f64) -> usize {
    (repeats as f64 * depth_mult).ceil() as usize
}

pub fn effnet_layout(width_mult: f64, depth_mult: f64) -> (usize, Vec<EffStage>, usize) {
    let stem = round_filters(32, width_mult);
    let head = round_filters(1280, width_mult);
    let stages = EFFNET_BASE_STAGES
        .iter()
        .map(|s| EffStage {
            expand: s.expand,
            channels: round_filters(s.channels, width_mult),
            repeats: round_repeats(s.repeats, depth_mult),
            stride: s.stride,
            kernel: s.kernel,
        })
        .collect();
    (stem, stages, head)
}

// ── model bodies ────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
struct WrnBody {
    stem: Conv2dParams,
    groups: Vec<Vec<WrnBlock>>,
    final_bn: BatchNormParams,
    head: DenseParams,
}

#[derive(Debug, Clone)]
struct EffBody {
    stem: Conv2dParams,
    stem_bn: BatchNormParams,
    blocks: Vec<MbConvBlock>,
    head_conv: ConvOrGhost,
    head_bn: BatchNormParams,
    head: DenseParams,
}

#[derive(Debug, Clone)]
struct MixerLayer {
    ln1: LayerNormParams,
    tok1: DenseParams,
    tok2: DenseParams,
    ln2: LayerNormParams,
    ch1: DenseParams,
    ch2: DenseParams,
}

#[derive(Debug, Clone)]
struct MixerBody {
    embed: DenseParams,
    layers: Vec<MixerLayer>,
    final_ln: LayerNormParams,
    head: DenseParams,
    patch: usize,
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    ln1: LayerNormParams,
    qkv: DenseParams,
    proj: DenseParams,
    ln2: LayerNormParams,
    fc1: DenseParams,
    fc2: DenseParams,
}

#[derive(Debug, Clone)]
struct VitBody {
    embed: DenseParams,
    cls: Option<ParamId>,
    pos: ParamId,
    layers: Vec<EncoderLayer>,
    final_ln: LayerNormParams,
    head: DenseParams,
    patch: usize,
    heads: usize,
}

#[derive(Debug, Clone)]
enum Body {
    Wrn(WrnBody),
    Eff(EffBody),
    Mixer(MixerBody),
    Vit(VitBody),
}

/// Forward output with the final convolutional feature map exposed for
/// class-evidence heatmaps (only the convolutional families have one).
pub struct Traced {
    pub logits: NodeId,
    pub features: Option<NodeId>,
}

#[derive(Debug, Clone)]
pub struct Model<E: Scalar> {
    pub config: ModelConfig,
    pub params: ParamSet<E>,
    body: Body,
}

impl<E: Scalar> Model<E> {
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self, ConfigError> {
        config.validate()?;
        let mut params = ParamSet::new();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let body = match &config.family {
            FamilySpec::Wrn { .. } => Body::Wrn(build_wrn_body(&config, &mut params, &mut rng)?),
            FamilySpec::EfficientNet => {
                Body::Eff(build_eff_body(&config, &mut params, &mut rng)?)
            }
            FamilySpec::MlpMixer { .. } => {
                Body::Mixer(build_mixer_body(&config, &mut params, &mut rng)?)
            }
            FamilySpec::Vit { .. } => Body::Vit(build_vit_body(&config, &mut params, &mut rng)?),
        };
        Ok(Self {
            config,
            params,
            body,
        })
    }

    /// Total stored scalars (weights, biases, norm parameters and their
    /// running statistics) — the "model size" column of the reports.
    pub fn count_params(&self) -> usize {
        self.params.total_scalars()
    }

    pub fn bind(&self, tape: &mut Tape<E>) -> Binding {
        self.params.bind(tape)
    }

    /// Forward pass returning the logits node plus the traced feature map.
    pub fn forward_traced(
        &mut self,
        tape: &mut Tape<E>,
        binding: &Binding,
        x: NodeId,
        mode: Mode,
    ) -> Result<Traced, ShapeError> {
        let expected = self.config.in_channels;
        let got = tape.shape(x).to_vec();
        if got.len() != 4 || got[1] != expected {
            return Err(ShapeError::Invalid {
                op: "forward",
                msg: format!("input {got:?} does not carry {expected} channels on axis 1"),
            });
        }
        let mut ctx = FwdCtx {
            tape,
            params: &mut self.params,
            binding,
            mode,
            bn_eps: E::from_f64c(1e-3),
            bn_momentum: E::from_f64c(0.99),
        };
        match &self.body {
            Body::Wrn(b) => {
                let mut h = b.stem.forward(&mut ctx, x)?;
                for group in &b.groups {
                    for block in group {
                        h = block.forward(&mut ctx, h)?;
                    }
                }
                let h = b.final_bn.forward(&mut ctx, h)?;
                let feats = ctx.tape.relu(h);
                let pooled = ctx.tape.global_avg_pool2d(feats)?;
                let logits = b.head.forward(&mut ctx, pooled)?;
                Ok(Traced {
                    logits,
                    features: Some(feats),
                })
            }
            Body::Eff(b) => {
                let h = b.stem.forward(&mut ctx, x)?;
                let h = b.stem_bn.forward(&mut ctx, h)?;
                let mut h = ctx.tape.swish(h);
                for block in &b.blocks {
                    h = block.forward(&mut ctx, h)?;
                }
                let h = b.head_conv.forward(&mut ctx, h)?;
                let h = b.head_bn.forward(&mut ctx, h)?;
                let feats = ctx.tape.swish(h);
                let pooled = ctx.tape.global_avg_pool2d(feats)?;
                let logits = b.head.forward(&mut ctx, pooled)?;
                Ok(Traced {
                    logits,
                    features: Some(feats),
                })
            }
            Body::Mixer(b) => {
                let tokens = patchify(ctx.tape, x, b.patch)?;
                let mut h = b.embed.forward(&mut ctx, tokens)?;
                for layer in &b.layers {
                    // token mixing across the patch axis
                    let y = layer.ln1.forward(&mut ctx, h)?;
                    let y = ctx.tape.permute(y, &[0, 2, 1])?;
                    let y = layer.tok1.forward(&mut ctx, y)?;
                    let y = ctx.tape.gelu(y);
                    let y = layer.tok2.forward(&mut ctx, y)?;
                    let y = ctx.tape.permute(y, &[0, 2, 1])?;
                    h = ctx.tape.add(h, y)?;
                    // channel mixing per token
                    let y = layer.ln2.forward(&mut ctx, h)?;
                    let y = layer.ch1.forward(&mut ctx, y)?;
                    let y = ctx.tape.gelu(y);
                    let y = layer.ch2.forward(&mut ctx, y)?;
                    h = ctx.tape.add(h, y)?;
                }
                let h = b.final_ln.forward(&mut ctx, h)?;
                let pooled = ctx.tape.mean_axis(h, 1)?;
                let logits = b.head.forward(&mut ctx, pooled)?;
                Ok(Traced {
                    logits,
                    features: None,
                })
            }
            Body::Vit(b) => {
                let n = ctx.tape.shape(x)[0];
                let tokens = patchify(ctx.tape, x, b.patch)?;
                let mut h = b.embed.forward(&mut ctx, tokens)?;
                let hidden = *ctx.tape.shape(h).last().unwrap();
                if let Some(cls) = b.cls {
                    let cls_node = ctx.binding.node(cls);
                    let cls_b = ctx.tape.broadcast_to(cls_node, vec![n, 1, hidden])?;
                    h = ctx.tape.concat(&[cls_b, h], 1)?;
                }
                let pos = ctx.binding.node(b.pos);
                h = ctx.tape.add(h, pos)?;
                let t = ctx.tape.shape(h)[1];
                let dh = hidden / b.heads;
                for layer in &b.layers {
                    let y = layer.ln1.forward(&mut ctx, h)?;
                    let qkv = layer.qkv.forward(&mut ctx, y)?;
                    let q = ctx.tape.slice(qkv, 2, 0, hidden)?;
                    let k = ctx.tape.slice(qkv, 2, hidden, hidden)?;
                    let v = ctx.tape.slice(qkv, 2, 2 * hidden, hidden)?;
                    let split = |tape: &mut Tape<E>, id| -> Result<NodeId, ShapeError> {
                        let id = tape.reshape(id, vec![n, t, b.heads, dh])?;
                        tape.permute(id, &[0, 2, 1, 3])
                    };
                    let q = split(ctx.tape, q)?;
                    let k = split(ctx.tape, k)?;
                    let v = split(ctx.tape, v)?;
                    let att = ctx.tape.scaled_dot_product_attention(q, k, v)?;
                    let att = ctx.tape.permute(att, &[0, 2, 1, 3])?;
                    let att = ctx.tape.reshape(att, vec![n, t, hidden])?;
                    let att = layer.proj.forward(&mut ctx, att)?;
                    h = ctx.tape.add(h, att)?;
                    let y = layer.ln2.forward(&mut ctx, h)?;
                    let y = layer.fc1.forward(&mut ctx, y)?;
                    let y = ctx.tape.gelu(y);
                    let y = layer.fc2.forward(&mut ctx, y)?;
                    h = ctx.tape.add(h, y)?;
                }
                let h = b.final_ln.forward(&mut ctx, h)?;
                let pooled = if b.cls.is_some() {
                    let c = ctx.tape.slice(h, 1, 0, 1)?;
                    ctx.tape.reshape(c, vec![n, hidden])?
                } else {
                    ctx.tape.mean_axis(h, 1)?
                };
                let logits = b.head.forward(&mut ctx, pooled)?;
                Ok(Traced {
                    logits,
                    features: None,
                })
            }
        }
    }

    pub fn forward_bound(
        &mut self,
        tape: &mut Tape<E>,
        binding: &Binding,
        x: NodeId,
        mode: Mode,
    ) -> Result<NodeId, ShapeError> {
        Ok(self.forward_traced(tape, binding, x, mode)?.logits)
    }

    /// One-shot inference on a detached batch tensor.
    pub fn forward(&mut self, batch: &Tensor<E>, mode: Mode) -> Result<Tensor<E>, ShapeError> {
        let mut tape = Tape::new();
        let binding = self.bind(&mut tape);
        let x = tape.leaf(batch.clone());
        let logits = self.forward_bound(&mut tape, &binding, x, mode)?;
        Ok(tape.value(logits))
    }

    pub fn cast<F: Scalar>(&self) -> Model<F> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            body: self.body.clone(),
        }
    }

    /// Copies every same-named, same-shaped tensor from `src`, skipping the
    /// classifier head; returns how many entries were transplanted.
    pub fn load_backbone_from(&mut self, src: &ParamSet<E>) -> usize {
        let mut copied = 0;
        for entry in self.params.entries_mut() {
            if entry.name.starts_with("head.") {
                continue;
            }
            if let Some(id) = src.find(&entry.name) {
                let s = src.get(id);
                if s.shape == entry.shape {
                    entry.data.clone_from(&s.data);
                    copied += 1;
                }
            }
        }
        copied
    }
}

/// Non-overlapping patch extraction: NCHW -> [N, (H/p)·(W/p), C·p·p].
fn patchify<E: Scalar>(tape: &mut Tape<E>, x: NodeId, patch: usize) -> Result<NodeId, ShapeError> {
    let s = tape.shape(x).to_vec();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    if h % patch != 0 || w % patch != 0 {
        return Err(ShapeError::Invalid {
            op: "patchify",
            msg: format!("input {h}x{w} not divisible by patch {patch}"),
        });
    }
    let (hp, wp) = (h / patch, w / patch);
    let r = tape.reshape(x, vec![n, c, hp, patch, wp, patch])?;
    let p = tape.permute(r, &[0, 2, 4, 1, 3, 5])?;
    tape.reshape(p, vec![n, hp * wp, c * patch * patch])
}

fn build_wrn_body<E: Scalar>(
    cfg: &ModelConfig,
    params: &mut ParamSet<E>,
    rng: &mut ChaCha20Rng,
) -> Result<WrnBody, ConfigError> {
    let layout = wrn_layout(cfg)?;
    let stem = Conv2dParams::build(
        params,
        rng,
        "stem",
        cfg.in_channels,
        layout.stem_width,
        3,
        1,
        false,
    );
    let mut groups = Vec::with_capacity(3);
    let mut cin = layout.stem_width;
    for (gi, (&width, stride)) in layout.widths.iter().zip([1usize, 2, 2]).enumerate() {
        let mut blocks = Vec::with_capacity(layout.blocks_per_group);
        for bi in 0..layout.blocks_per_group {
            let mut spec = BlockSpec::new(BlockKind::Wrn, cin, width, if bi == 0 { stride } else { 1 });
            spec.attention = cfg.attention;
            spec.ghost = cfg.ghost;
            blocks.push(WrnBlock::build(
                params,
                rng,
                &format!("g{gi}.b{bi}"),
                &spec,
            )?);
            cin = width;
        }
        groups.push(blocks);
    }
    let final_bn = BatchNormParams::build(params, "final_bn", cin);
    let head = DenseParams::build(params, rng, "head", cin, cfg.num_classes, true);
    Ok(WrnBody {
        stem,
        groups,
        final_bn,
        head,
    })
}

fn build_eff_body<E: Scalar>(
    cfg: &ModelConfig,
    params: &mut ParamSet<E>,
    rng: &mut ChaCha20Rng,
) -> Result<EffBody, ConfigError> {
    let (stem_w, stages, head_w) = effnet_layout(cfg.width_multiplier, cfg.depth_multiplier);
    let stem = Conv2dParams::build(params, rng, "stem", cfg.in_channels, stem_w, 3, 2, false);
    let stem_bn = BatchNormParams::build(params, "stem_bn", stem_w);
    let mut blocks = Vec::new();
    let mut cin = stem_w;
    for (si, stage) in stages.iter().enumerate() {
        for r in 0..stage.repeats {
            let kind = if stage.expand == 1 {
                BlockKind::MbConv1
            } else {
                BlockKind::MbConv6
            };
            let mut spec = BlockSpec::new(
                kind,
                cin,
                stage.channels,
                if r == 0 { stage.stride } else { 1 },
            );
            spec.kernel = stage.kernel;
            spec.attention = cfg.attention;
            spec.ghost = cfg.ghost;
            blocks.push(MbConvBlock::build(
                params,
                rng,
                &format!("s{si}.b{r}"),
                &spec,
            )?);
            cin = stage.channels;
        }
    }
    let head_spec = {
        let mut s = BlockSpec::new(BlockKind::MbConv1, cin, head_w, 1);
        s.ghost = cfg.ghost;
        s
    };
    let head_conv = ConvOrGhost::build(params, rng, "head_conv", cin, head_w, 1, 1, &head_spec)?;
    let head_bn = BatchNormParams::build(params, "head_bn", head_w);
    let head = DenseParams::build(params, rng, "head", head_w, cfg.num_classes, true);
    Ok(EffBody {
        stem,
        stem_bn,
        blocks,
        head_conv,
        head_bn,
        head,
    })
}

fn build_mixer_body<E: Scalar>(
    cfg: &ModelConfig,
    params: &mut ParamSet<E>,
    rng: &mut ChaCha20Rng,
) -> Result<MixerBody, ConfigError> {
    let FamilySpec::MlpMixer {
        patch,
        hidden,
        layers,
        token_dim,
        channel_dim,
    } = cfg.family
    else {
        return Err(ConfigError::Model("not a mixer config".into()));
    };
    let tokens = (cfg.resolution / patch) * (cfg.resolution / patch);
    let patch_len = cfg.in_channels * patch * patch;
    let embed = DenseParams::build(params, rng, "embed", patch_len, hidden, true);
    let layer_list = (0..layers)
        .map(|i| MixerLayer {
            ln1: LayerNormParams::build(params, &format!("l{i}.ln1"), hidden),
            tok1: DenseParams::build(params, rng, &format!("l{i}.tok1"), tokens, token_dim, true),
            tok2: DenseParams::build(params, rng, &format!("l{i}.tok2"), token_dim, tokens, true),
            ln2: LayerNormParams::build(params, &format!("l{i}.ln2"), hidden),
            ch1: DenseParams::build(params, rng, &format!("l{i}.ch1"), hidden, channel_dim, true),
            ch2: DenseParams::build(params, rng, &format!("l{i}.ch2"), channel_dim, hidden, true),
        })
        .collect();
    let final_ln = LayerNormParams::build(params, "final_ln", hidden);
    let head = DenseParams::build(params, rng, "head", hidden, cfg.num_classes, true);
    Ok(MixerBody {
        embed,
        layers: layer_list,
        final_ln,
        head,
        patch,
    })
}

fn build_vit_body<E: Scalar>(
    cfg: &ModelConfig,
    params: &mut ParamSet<E>,
    rng: &mut ChaCha20Rng,
) -> Result<VitBody, ConfigError> {
    let FamilySpec::Vit {
        patch,
        layers,
        heads,
        hidden,
        mlp_ratio,
        use_class_token,
    } = cfg.family
    else {
        return Err(ConfigError::Model("not a vit config".into()));
    };
    let patches = (cfg.resolution / patch) * (cfg.resolution / patch);
    let tokens = patches + use_class_token as usize;
    let patch_len = cfg.in_channels * patch * patch;
    let embed = DenseParams::build(params, rng, "embed", patch_len, hidden, true);
    let cls = use_class_token.then(|| params.zeros("cls_token".into(), vec![1, 1, hidden], true));
    let pos = {
        let n = tokens * hidden;
        let data: Vec<E> = (0..n)
            .map(|_| E::from_f64c(rand::Rng::gen::<f64>(rng) * 0.04 - 0.02))
            .collect();
        params.add("pos_embed".into(), vec![1, tokens, hidden], data, true)
    };
    let layer_list = (0..layers)
        .map(|i| EncoderLayer {
            ln1: LayerNormParams::build(params, &format!("l{i}.ln1"), hidden),
            qkv: DenseParams::build(params, rng, &format!("l{i}.qkv"), hidden, 3 * hidden, true),
            proj: DenseParams::build(params, rng, &format!("l{i}.proj"), hidden, hidden, true),
            ln2: LayerNormParams::build(params, &format!("l{i}.ln2"), hidden),
            fc1: DenseParams::build(params, rng, &format!("l{i}.fc1"), hidden, mlp_ratio * hidden, true),
            fc2: DenseParams::build(params, rng, &format!("l{i}.fc2"), mlp_ratio * hidden, hidden, true),
        })
        .collect();
    let final_ln = LayerNormParams::build(params, "final_ln", hidden);
    let head = DenseParams::build(params, rng, "head", hidden, cfg.num_classes, true);
    Ok(VitBody {
        embed,
        cls,
        pos,
        layers: layer_list,
        final_ln,
        head,
        patch,
        heads,
    })
}
