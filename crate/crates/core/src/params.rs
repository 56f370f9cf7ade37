//! Named parameter storage shared by every model family.
//!
//! A [`ParamSet`] owns all weights of a model as flat named entries;
//! batch-norm running statistics live here too as non-trainable entries so
//! checkpoints capture them and parameter accounting matches the reported
//! model sizes. Before a forward pass the set is bound onto a tape
//! ([`ParamSet::bind`]), which registers one leaf per entry; layers address
//! values through [`ParamId`] handles.

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::scalar::Scalar;
use crate::tape::{Mode, NodeId, Tape};
use crate::tensor::{numel, ShapeError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct ParamEntry<E> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<E>,
    pub trainable: bool,
}

#[derive(Debug, Clone)]
pub struct ParamSet<E> {
    entries: Vec<ParamEntry<E>>,
}

impl<E: Scalar> ParamSet<E> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn add(&mut self, name: String, shape: Vec<usize>, data: Vec<E>, trainable: bool) -> ParamId {
        assert_eq!(numel(&shape), data.len(), "param {name}: shape/data mismatch");
        assert!(
            !self.entries.iter().any(|e| e.name == name),
            "duplicate parameter name {name}"
        );
        self.entries.push(ParamEntry {
            name,
            shape,
            data,
            trainable,
        });
        ParamId(self.entries.len() - 1)
    }

    /// Fan-in scaled uniform init (He-style): U(-√(6/fan_in), √(6/fan_in)).
    /// Values are drawn in f64 so f32 and f64 models share the same stream.
    pub fn he_uniform(
        &mut self,
        rng: &mut ChaCha20Rng,
        name: String,
        shape: Vec<usize>,
        fan_in: usize,
    ) -> ParamId {
        let limit = (6.0 / fan_in.max(1) as f64).sqrt();
        let n = numel(&shape);
        let data: Vec<E> = (0..n)
            .map(|_| E::from_f64c(rng.gen::<f64>() * 2.0 * limit - limit))
            .collect();
        self.add(name, shape, data, true)
    }

    pub fn zeros(&mut self, name: String, shape: Vec<usize>, trainable: bool) -> ParamId {
        let n = numel(&shape);
        self.add(name, shape, vec![E::ZERO; n], trainable)
    }

    pub fn ones(&mut self, name: String, shape: Vec<usize>, trainable: bool) -> ParamId {
        let n = numel(&shape);
        self.add(name, shape, vec![E::ONE; n], trainable)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of stored scalars across all entries (trainable or not).
    pub fn total_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.data.len()).sum()
    }

    pub fn entries(&self) -> &[ParamEntry<E>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<E>] {
        &mut self.entries
    }

    pub fn get(&self, id: ParamId) -> &ParamEntry<E> {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamEntry<E> {
        &mut self.entries[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Two disjoint mutable buffers, used for batch-norm running stats.
    pub fn pair_mut(&mut self, a: ParamId, b: ParamId) -> (&mut [E], &mut [E]) {
        assert_ne!(a.0, b.0);
        if a.0 < b.0 {
            let (lo, hi) = self.entries.split_at_mut(b.0);
            (&mut lo[a.0].data, &mut hi[0].data)
        } else {
            let (lo, hi) = self.entries.split_at_mut(a.0);
            (&mut hi[0].data, &mut lo[b.0].data)
        }
    }

    /// Registers every entry as a tape leaf, in entry order.
    pub fn bind(&self, tape: &mut Tape<E>) -> Binding {
        let nodes = self
            .entries
            .iter()
            .map(|e| {
                tape.leaf_from(e.shape.clone(), e.data.clone())
                    .expect("param entry consistent")
            })
            .collect();
        Binding { nodes }
    }

    pub fn cast<F: Scalar>(&self) -> ParamSet<F> {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    shape: e.shape.clone(),
                    data: e.data.iter().map(|v| F::from_f64c(v.to_f64c())).collect(),
                    trainable: e.trainable,
                })
                .collect(),
        }
    }
}

impl<E: Scalar> Default for ParamSet<E> {
    fn default() -> Self {
        Self::new()
    }
}

/// Tape node ids for one bound parameter set.
#[derive(Debug, Clone)]
pub struct Binding {
    nodes: Vec<NodeId>,
}

impl Binding {
    pub fn node(&self, id: ParamId) -> NodeId {
        self.nodes[id.0]
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }
}

/// Everything a layer needs during one forward pass.
pub struct FwdCtx<'t, E: Scalar> {
    pub tape: &'t mut Tape<E>,
    pub params: &'t mut ParamSet<E>,
    pub binding: &'t Binding,
    pub mode: Mode,
    pub bn_eps: E,
    pub bn_momentum: E,
}

// ── common layer parameter bundles ─────────────────────────────────────

/// 2-D convolution weights (optionally biased).
#[derive(Debug, Clone)]
pub struct Conv2dParams {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub stride: usize,
}

impl Conv2dParams {
    #[allow(clippy::too_many_arguments)]
    pub fn build<E: Scalar>(
        params: &mut ParamSet<E>,
        rng: &mut ChaCha20Rng,
        prefix: &str,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        bias: bool,
    ) -> Self {
        let w = params.he_uniform(
            rng,
            format!("{prefix}.w"),
            vec![out_c, in_c, k, k],
            in_c * k * k,
        );
        let b = bias.then(|| params.zeros(format!("{prefix}.b"), vec![out_c], true));
        Self { w, b, stride }
    }

    pub fn forward<E: Scalar>(&self, ctx: &mut FwdCtx<E>, x: NodeId) -> Result<NodeId, ShapeError> {
        ctx.tape.conv2d(
            x,
            ctx.binding.node(self.w),
            self.b.map(|b| ctx.binding.node(b)),
            self.stride,
            crate::kernels::Padding::Same,
        )
    }
}

/// Fully connected layer weights.
#[derive(Debug, Clone)]
pub struct DenseParams {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl DenseParams {
    pub fn build<E: Scalar>(
        params: &mut ParamSet<E>,
        rng: &mut ChaCha20Rng,
        prefix: &str,
        in_f: usize,
        out_f: usize,
        bias: bool,
    ) -> Self {
        let w = params.he_uniform(rng, format!("{prefix}.w"), vec![in_f, out_f], in_f);
        let b = bias.then(|| params.zeros(format!("{prefix}.b"), vec![out_f], true));
        Self { w, b }
    }

    pub fn forward<E: Scalar>(&self, ctx: &mut FwdCtx<E>, x: NodeId) -> Result<NodeId, ShapeError> {
        ctx.tape
            .dense(x, ctx.binding.node(self.w), self.b.map(|b| ctx.binding.node(b)))
    }
}

/// Batch normalization parameters plus running statistic buffers.
#[derive(Debug, Clone)]
pub struct BatchNormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNormParams {
    pub fn build<E: Scalar>(params: &mut ParamSet<E>, prefix: &str, channels: usize) -> Self {
        Self {
            gamma: params.ones(format!("{prefix}.gamma"), vec![channels], true),
            beta: params.zeros(format!("{prefix}.beta"), vec![channels], true),
            running_mean: params.zeros(format!("{prefix}.running_mean"), vec![channels], false),
            running_var: params.ones(format!("{prefix}.running_var"), vec![channels], false),
        }
    }

    pub fn forward<E: Scalar>(&self, ctx: &mut FwdCtx<E>, x: NodeId) -> Result<NodeId, ShapeError> {
        let gamma = ctx.binding.node(self.gamma);
        let beta = ctx.binding.node(self.beta);
        let (eps, momentum, mode) = (ctx.bn_eps, ctx.bn_momentum, ctx.mode);
        let (rm, rv) = ctx.params.pair_mut(self.running_mean, self.running_var);
        ctx.tape.batchnorm2d(x, gamma, beta, rm, rv, mode, eps, momentum)
    }
}

/// Layer normalization parameters (last axis).
#[derive(Debug, Clone)]
pub struct LayerNormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNormParams {
    pub fn build<E: Scalar>(params: &mut ParamSet<E>, prefix: &str, dim: usize) -> Self {
        Self {
            gamma: params.ones(format!("{prefix}.gamma"), vec![dim], true),
            beta: params.zeros(format!("{prefix}.beta"), vec![dim], true),
        }
    }

    pub fn forward<E: Scalar>(&self, ctx: &mut FwdCtx<E>, x: NodeId) -> Result<NodeId, ShapeError> {
        ctx.tape.layernorm(
            x,
            ctx.binding.node(self.gamma),
            ctx.binding.node(self.beta),
            E::from_f64c(1e-6),
        )
    }
}
