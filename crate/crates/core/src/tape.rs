//! Reverse-mode autodiff tape over dense tensors.
//!
//! Values are recorded as nodes in creation order; [`Tape::backward`] walks
//! the nodes in exact reverse order and accumulates gradients into a store
//! keyed by node id. Gradients of unreached nodes stay absent rather than
//! zero-filled. Repeated backward calls accumulate; [`Tape::reset_grads`]
//! clears the store explicitly.
//!
//! Batch normalization can synchronize its batch statistics (and the two
//! reduction sums of its backward pass) across data-parallel workers through
//! a [`Collective`] hooked onto the tape. With the hook installed, a sharded
//! forward/backward is algebraically identical to running the full batch on
//! one worker, which is what makes the worker-pool equivalence exact.

use std::sync::Arc;

use crate::kernels::{self, ConvGeom, Padding};
use crate::scalar::Scalar;
use crate::tensor::{numel, ShapeError, Tensor};

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Synchronous collective used by data-parallel workers. Every worker calls
/// with an equally sized buffer; on return each buffer holds the element-wise
/// sum, accumulated in ascending worker order so results are bitwise
/// reproducible.
pub trait Collective<E>: Send + Sync {
    fn allreduce_sum(&self, rank: usize, buf: &mut [E]);
    fn workers(&self) -> usize;
}

#[derive(Clone)]
pub struct SyncHandle<E> {
    pub bus: Arc<dyn Collective<E>>,
    pub rank: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum UnaryKind {
    Relu,
    Sigmoid,
    Swish,
    Gelu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinKind {
    Add,
    Sub,
    Mul,
}

enum Op<E> {
    Leaf,
    Unary {
        kind: UnaryKind,
        x: NodeId,
    },
    MulScalar {
        x: NodeId,
        c: E,
    },
    Binary {
        kind: BinKind,
        a: NodeId,
        b: NodeId,
    },
    Dense {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        rows: usize,
        in_f: usize,
        out_f: usize,
    },
    /// Batched matmul; when `trans_b` the second operand is `[..., n, k]`.
    Matmul {
        a: NodeId,
        b: NodeId,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        trans_b: bool,
    },
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        geom: ConvGeom,
        in_c: usize,
        out_c: usize,
    },
    DepthwiseConv2d {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        geom: ConvGeom,
        channels: usize,
    },
    Conv1dSame {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        len: usize,
        k: usize,
    },
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: Vec<E>,
        inv_std: Vec<E>,
        /// N·H·W summed over all workers when synced.
        count: usize,
        stats_from_batch: bool,
        synced: bool,
    },
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: Vec<E>,
        inv_std: Vec<E>,
        axis_len: usize,
    },
    Softmax {
        x: NodeId,
    },
    Gap {
        x: NodeId,
    },
    Gmp {
        x: NodeId,
        arg: Vec<u32>,
    },
    AvgPool2d {
        x: NodeId,
        geom: ConvGeom,
    },
    MaxPool2d {
        x: NodeId,
        geom: ConvGeom,
        arg: Vec<u32>,
    },
    MeanAxis {
        x: NodeId,
        axis: usize,
    },
    MaxAxis {
        x: NodeId,
        axis: usize,
        arg: Vec<u32>,
    },
    Reshape {
        x: NodeId,
    },
    Permute {
        x: NodeId,
        axes: Vec<usize>,
    },
    BroadcastTo {
        x: NodeId,
    },
    Concat {
        parts: Vec<NodeId>,
        axis: usize,
    },
    Slice {
        x: NodeId,
        axis: usize,
        start: usize,
    },
    ResizeBilinear {
        x: NodeId,
        rows: Vec<(usize, usize, f64)>,
        cols: Vec<(usize, usize, f64)>,
    },
    SumAll {
        x: NodeId,
    },
    BceWithLogits {
        logits: NodeId,
        targets: Vec<E>,
    },
}

struct Node<E> {
    shape: Vec<usize>,
    data: Vec<E>,
    op: Op<E>,
}

pub struct Tape<E: Scalar> {
    nodes: Vec<Node<E>>,
    grads: Vec<Option<Vec<E>>>,
    sync: Option<SyncHandle<E>>,
}

fn invalid(op: &'static str, msg: String) -> ShapeError {
    ShapeError::Invalid { op, msg }
}

/// Right-aligned numpy-style broadcast of two shapes.
fn broadcast_shape(a: &[usize], b: &[usize], op: &'static str) -> Result<Vec<usize>, ShapeError> {
    let nd = a.len().max(b.len());
    let mut out = vec![0usize; nd];
    for d in 0..nd {
        let da = if d + a.len() >= nd { a[d + a.len() - nd] } else { 1 };
        let db = if d + b.len() >= nd { b[d + b.len() - nd] } else { 1 };
        if da != db && da != 1 && db != 1 {
            return Err(ShapeError::AxisMismatch {
                op,
                axis: d,
                lhs: da,
                rhs: db,
            });
        }
        out[d] = da.max(db);
    }
    Ok(out)
}

/// Per-axis element strides into `shape` when viewed through `out_shape`
/// (0 on broadcast axes).
fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let nd = out_shape.len();
    let mut strides = vec![0usize; nd];
    let mut s = 1usize;
    for d in (0..shape.len()).rev() {
        let od = d + nd - shape.len();
        strides[od] = if shape[d] == 1 { 0 } else { s };
        s *= shape[d];
    }
    strides
}

/// Walks every linear index of `out_shape` together with the mapped indices
/// into two broadcast operands.
fn for_each_broadcast<F: FnMut(usize, usize, usize)>(
    out_shape: &[usize],
    a_strides: &[usize],
    b_strides: &[usize],
    mut f: F,
) {
    let n: usize = out_shape.iter().product();
    let nd = out_shape.len();
    let mut coords = vec![0usize; nd];
    let mut ai = 0usize;
    let mut bi = 0usize;
    for i in 0..n {
        f(i, ai, bi);
        for d in (0..nd).rev() {
            coords[d] += 1;
            ai += a_strides[d];
            bi += b_strides[d];
            if coords[d] < out_shape[d] {
                break;
            }
            coords[d] = 0;
            ai -= a_strides[d] * out_shape[d];
            bi -= b_strides[d] * out_shape[d];
        }
    }
}

impl<E: Scalar> Tape<E> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            sync: None,
        }
    }

    pub fn with_sync(handle: SyncHandle<E>) -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            sync: Some(handle),
        }
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<E>, op: Op<E>) -> NodeId {
        debug_assert_eq!(numel(&shape), data.len());
        self.nodes.push(Node { shape, data, op });
        self.grads.push(None);
        self.nodes.len() - 1
    }

    pub fn leaf(&mut self, t: Tensor<E>) -> NodeId {
        let (shape, data) = t.into_parts();
        self.push(shape, data, Op::Leaf)
    }

    pub fn leaf_from(&mut self, shape: Vec<usize>, data: Vec<E>) -> Result<NodeId, ShapeError> {
        Ok(self.leaf(Tensor::new(shape, data)?))
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id].shape
    }

    pub fn data(&self, id: NodeId) -> &[E] {
        &self.nodes[id].data
    }

    pub fn value(&self, id: NodeId) -> Tensor<E> {
        Tensor::new(self.nodes[id].shape.clone(), self.nodes[id].data.clone())
            .expect("node shape consistent")
    }

    pub fn grad(&self, id: NodeId) -> Option<&[E]> {
        self.grads[id].as_deref()
    }

    pub fn reset_grads(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    // ── elementwise ─────────────────────────────────────────────────────

    fn unary(&mut self, kind: UnaryKind, x: NodeId) -> NodeId {
        let data: Vec<E> = self.nodes[x]
            .data
            .iter()
            .map(|&v| match kind {
                UnaryKind::Relu => {
                    if v > E::ZERO {
                        v
                    } else {
                        E::ZERO
                    }
                }
                UnaryKind::Sigmoid => v.sigmoid(),
                UnaryKind::Swish => v * v.sigmoid(),
                UnaryKind::Gelu => gelu(v),
            })
            .collect();
        let shape = self.nodes[x].shape.clone();
        self.push(shape, data, Op::Unary { kind, x })
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.unary(UnaryKind::Relu, x)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.unary(UnaryKind::Sigmoid, x)
    }

    pub fn swish(&mut self, x: NodeId) -> NodeId {
        self.unary(UnaryKind::Swish, x)
    }

    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        self.unary(UnaryKind::Gelu, x)
    }

    pub fn mul_scalar(&mut self, x: NodeId, c: E) -> NodeId {
        let data: Vec<E> = self.nodes[x].data.iter().map(|&v| v * c).collect();
        let shape = self.nodes[x].shape.clone();
        self.push(shape, data, Op::MulScalar { x, c })
    }

    fn binary(&mut self, kind: BinKind, a: NodeId, b: NodeId) -> Result<NodeId, ShapeError> {
        let op_name = match kind {
            BinKind::Add => "add",
            BinKind::Sub => "sub",
            BinKind::Mul => "mul",
        };
        let out_shape = broadcast_shape(&self.nodes[a].shape, &self.nodes[b].shape, op_name)?;
        let n = numel(&out_shape);
        let mut data = vec![E::ZERO; n];
        let ad = &self.nodes[a].data;
        let bd = &self.nodes[b].data;
        let apply = |x: E, y: E| match kind {
            BinKind::Add => x + y,
            BinKind::Sub => x - y,
            BinKind::Mul => x * y,
        };
        if self.nodes[a].shape == self.nodes[b].shape {
            for ((o, &x), &y) in data.iter_mut().zip(ad.iter()).zip(bd.iter()) {
                *o = apply(x, y);
            }
        } else {
            let sa = broadcast_strides(&self.nodes[a].shape, &out_shape);
            let sb = broadcast_strides(&self.nodes[b].shape, &out_shape);
            for_each_broadcast(&out_shape, &sa, &sb, |i, ai, bi| {
                data[i] = apply(ad[ai], bd[bi]);
            });
        }
        Ok(self.push(out_shape, data, Op::Binary { kind, a, b }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, ShapeError> {
        self.binary(BinKind::Add, a, b)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, ShapeError> {
        self.binary(BinKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, ShapeError> {
        self.binary(BinKind::Mul, a, b)
    }

    // ── linear algebra ──────────────────────────────────────────────────

    /// `x [..., F] · w [F, G] + b [G]`, applied to the flattened leading dims.
    pub fn dense(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    ) -> Result<NodeId, ShapeError> {
        let xs = self.nodes[x].shape.clone();
        let ws = self.nodes[w].shape.clone();
        if ws.len() != 2 {
            return Err(ShapeError::Rank {
                op: "dense",
                expected: 2,
                shape: ws,
            });
        }
        let in_f = *xs.last().ok_or_else(|| invalid("dense", "input rank 0".into()))?;
        if ws[0] != in_f {
            return Err(ShapeError::AxisMismatch {
                op: "dense",
                axis: xs.len() - 1,
                lhs: in_f,
                rhs: ws[0],
            });
        }
        let out_f = ws[1];
        if let Some(bid) = b {
            let bs = &self.nodes[bid].shape;
            if bs.as_slice() != [out_f] {
                return Err(invalid(
                    "dense",
                    format!("bias shape {bs:?} incompatible with {out_f} outputs"),
                ));
            }
        }
        let rows = numel(&xs) / in_f;
        let mut data = vec![E::ZERO; rows * out_f];
        kernels::matmul(
            &self.nodes[x].data,
            &self.nodes[w].data,
            rows,
            in_f,
            out_f,
            &mut data,
        );
        if let Some(bid) = b {
            let bias = &self.nodes[bid].data;
            for r in 0..rows {
                let row = &mut data[r * out_f..(r + 1) * out_f];
                for (o, &bv) in row.iter_mut().zip(bias.iter()) {
                    *o = *o + bv;
                }
            }
        }
        let mut out_shape = xs;
        *out_shape.last_mut().unwrap() = out_f;
        Ok(self.push(
            out_shape,
            data,
            Op::Dense {
                x,
                w,
                b,
                rows,
                in_f,
                out_f,
            },
        ))
    }

    fn bmm_impl(&mut self, a: NodeId, b: NodeId, trans_b: bool) -> Result<NodeId, ShapeError> {
        let sa = self.nodes[a].shape.clone();
        let sb = self.nodes[b].shape.clone();
        if sa.len() < 2 || sa.len() != sb.len() || sa[..sa.len() - 2] != sb[..sb.len() - 2] {
            return Err(invalid(
                "matmul",
                format!("leading dims must match: {sa:?} vs {sb:?}"),
            ));
        }
        let m = sa[sa.len() - 2];
        let k = sa[sa.len() - 1];
        let (bk, n) = if trans_b {
            (sb[sb.len() - 1], sb[sb.len() - 2])
        } else {
            (sb[sb.len() - 2], sb[sb.len() - 1])
        };
        if bk != k {
            return Err(ShapeError::AxisMismatch {
                op: "matmul",
                axis: sa.len() - 1,
                lhs: k,
                rhs: bk,
            });
        }
        let batch: usize = sa[..sa.len() - 2].iter().product();
        let mut data = vec![E::ZERO; batch * m * n];
        let ad = &self.nodes[a].data;
        let bd = &self.nodes[b].data;
        for t in 0..batch {
            let aslice = &ad[t * m * k..(t + 1) * m * k];
            let bslice = &bd[t * k * n..(t + 1) * k * n];
            let oslice = &mut data[t * m * n..(t + 1) * m * n];
            if trans_b {
                kernels::matmul_bt_acc(aslice, bslice, m, k, n, oslice);
            } else {
                kernels::matmul_acc(aslice, bslice, m, k, n, oslice);
            }
        }
        let mut out_shape = sa;
        let nd = out_shape.len();
        out_shape[nd - 2] = m;
        out_shape[nd - 1] = n;
        Ok(self.push(
            out_shape,
            data,
            Op::Matmul {
                a,
                b,
                batch,
                m,
                k,
                n,
                trans_b,
            },
        ))
    }

    /// Batched `a [..., m, k] · b [..., k, n]`.
    pub fn bmm(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, ShapeError> {
        self.bmm_impl(a, b, false)
    }

    /// Batched `a [..., m, k] · b [..., n, k]ᵀ`.
    pub fn bmm_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, ShapeError> {
        self.bmm_impl(a, b, true)
    }

    // ── convolutions ────────────────────────────────────────────────────

    /// `x` NCHW, `w` O×I×kh×kw, optional bias `[O]`.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        padding: Padding,
    ) -> Result<NodeId, ShapeError> {
        let xs = self.nodes[x].shape.clone();
        let ws = self.nodes[w].shape.clone();
        if xs.len() != 4 {
            return Err(ShapeError::Rank {
                op: "conv2d input",
                expected: 4,
                shape: xs,
            });
        }
        if ws.len() != 4 {
            return Err(ShapeError::Rank {
                op: "conv2d weight",
                expected: 4,
                shape: ws,
            });
        }
        let (n, in_c, in_h, in_w) = (xs[0], xs[1], xs[2], xs[3]);
        let (out_c, wi, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        if wi != in_c {
            return Err(ShapeError::AxisMismatch {
                op: "conv2d: input channel axis (1) vs weight input channels",
                axis: 1,
                lhs: in_c,
                rhs: wi,
            });
        }
        if let Some(bid) = b {
            if self.nodes[bid].shape.as_slice() != [out_c] {
                return Err(invalid(
                    "conv2d",
                    format!(
                        "bias shape {:?} incompatible with {out_c} output channels",
                        self.nodes[bid].shape
                    ),
                ));
            }
        }
        let geom = ConvGeom::resolve(in_h, in_w, kh, kw, stride, padding).ok_or_else(|| {
            invalid(
                "conv2d",
                format!("kernel {kh}x{kw} stride {stride} does not fit input {in_h}x{in_w}"),
            )
        })?;
        let k_len = in_c * kh * kw;
        let out_area = geom.out_h * geom.out_w;
        let mut data = vec![E::ZERO; n * out_c * out_area];
        let mut col = vec![E::ZERO; k_len * out_area];
        let xd = &self.nodes[x].data;
        let wd = &self.nodes[w].data;
        let in_len = in_c * in_h * in_w;
        for s in 0..n {
            kernels::im2col(&xd[s * in_len..(s + 1) * in_len], in_c, &geom, &mut col);
            let oslice = &mut data[s * out_c * out_area..(s + 1) * out_c * out_area];
            kernels::matmul(wd, &col, out_c, k_len, out_area, oslice);
            if let Some(bid) = b {
                let bias = &self.nodes[bid].data;
                for (c, &bv) in bias.iter().enumerate() {
                    for v in &mut oslice[c * out_area..(c + 1) * out_area] {
                        *v = *v + bv;
                    }
                }
            }
        }
        Ok(self.push(
            vec![n, out_c, geom.out_h, geom.out_w],
            data,
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                in_c,
                out_c,
            },
        ))
    }

    /// `x` NCHW, `w` C×1×kh×kw: one kernel per input channel.
    pub fn depthwise_conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        padding: Padding,
    ) -> Result<NodeId, ShapeError> {
        let xs = self.nodes[x].shape.clone();
        let ws = self.nodes[w].shape.clone();
        if xs.len() != 4 {
            return Err(ShapeError::Rank {
                op: "depthwise_conv2d input",
                expected: 4,
                shape: xs,
            });
        }
        if ws.len() != 4 || ws[1] != 1 {
            return Err(invalid(
                "depthwise_conv2d",
                format!("weight must be Cx1xKhxKw, got {ws:?}"),
            ));
        }
        let (n, channels, in_h, in_w) = (xs[0], xs[1], xs[2], xs[3]);
        if ws[0] != channels {
            return Err(ShapeError::AxisMismatch {
                op: "depthwise_conv2d: channel axis (1)",
                axis: 1,
                lhs: channels,
                rhs: ws[0],
            });
        }
        if let Some(bid) = b {
            if self.nodes[bid].shape.as_slice() != [channels] {
                return Err(invalid(
                    "depthwise_conv2d",
                    format!("bias shape {:?} vs {channels} channels", self.nodes[bid].shape),
                ));
            }
        }
        let geom = ConvGeom::resolve(in_h, in_w, ws[2], ws[3], stride, padding)
            .ok_or_else(|| invalid("depthwise_conv2d", "kernel does not fit input".into()))?;
        let out_area = geom.out_h * geom.out_w;
        let mut data = vec![E::ZERO; n * channels * out_area];
        let xd = &self.nodes[x].data;
        let wd = &self.nodes[w].data;
        for s in 0..n {
            kernels::depthwise_forward(
                &xd[s * channels * in_h * in_w..(s + 1) * channels * in_h * in_w],
                wd,
                channels,
                &geom,
                &mut data[s * channels * out_area..(s + 1) * channels * out_area],
            );
        }
        if let Some(bid) = b {
            let bias = &self.nodes[bid].data;
            for s in 0..n {
                for (c, &bv) in bias.iter().enumerate() {
                    let off = (s * channels + c) * out_area;
                    for v in &mut data[off..off + out_area] {
                        *v = *v + bv;
                    }
                }
            }
        }
        Ok(self.push(
            vec![n, channels, geom.out_h, geom.out_w],
            data,
            Op::DepthwiseConv2d {
                x,
                w,
                b,
                geom,
                channels,
            },
        ))
    }

    /// `x` N×1×C, `w` 1×1×k (k odd), optional scalar bias, "same" zero padding.
    pub fn conv1d_same(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    ) -> Result<NodeId, ShapeError> {
        let xs = self.nodes[x].shape.clone();
        let ws = self.nodes[w].shape.clone();
        if xs.len() != 3 || xs[1] != 1 {
            return Err(invalid(
                "conv1d",
                format!("input must be Nx1xC, got {xs:?}"),
            ));
        }
        if ws.len() != 3 || ws[0] != 1 || ws[1] != 1 {
            return Err(invalid(
                "conv1d",
                format!("weight must be 1x1xk, got {ws:?}"),
            ));
        }
        let k = ws[2];
        if k.is_multiple_of(2) {
            return Err(invalid("conv1d", format!("kernel size {k} must be odd")));
        }
        if let Some(bid) = b {
            if numel(&self.nodes[bid].shape) != 1 {
                return Err(invalid(
                    "conv1d",
                    format!("bias must be scalar, got {:?}", self.nodes[bid].shape),
                ));
            }
        }
        let (n, len) = (xs[0], xs[2]);
        let mut data = vec![E::ZERO; n * len];
        let xd = &self.nodes[x].data;
        let wd = &self.nodes[w].data;
        for s in 0..n {
            kernels::conv1d_same_forward(
                &xd[s * len..(s + 1) * len],
                wd,
                len,
                k,
                &mut data[s * len..(s + 1) * len],
            );
        }
        if let Some(bid) = b {
            let bv = self.nodes[bid].data[0];
            for v in &mut data {
                *v = *v + bv;
            }
        }
        Ok(self.push(vec![n, 1, len], data, Op::Conv1dSame { x, w, b, len, k }))
    }

    // ── normalization ───────────────────────────────────────────────────

    /// Batch normalization over NCHW with per-channel affine parameters.
    ///
    /// Train mode normalizes by batch statistics (computed as sum/sum-of-
    /// squares so a synced multi-worker pass matches a single large batch
    /// bit for bit at worker count 1) and updates the running buffers as
    /// `running = momentum·running + (1-momentum)·batch`. Eval mode uses the
    /// running buffers as constants; calling eval before any train step just
    /// sees the initialized (0, 1) statistics.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm2d(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running_mean: &mut [E],
        running_var: &mut [E],
        mode: Mode,
        eps: E,
        momentum: E,
    ) -> Result<NodeId, ShapeError> {
        let xs = self.nodes[x].shape.clone();
        if xs.len() != 4 {
            return Err(ShapeError::Rank {
                op: "batchnorm2d input",
                expected: 4,
                shape: xs,
            });
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        for (name, id) in [("gamma", gamma), ("beta", beta)] {
            if self.nodes[id].shape.as_slice() != [c] {
                return Err(invalid(
                    "batchnorm2d",
                    format!(
                        "{name} shape {:?} vs {c} channels (axis 1)",
                        self.nodes[id].shape
                    ),
                ));
            }
        }
        if running_mean.len() != c || running_var.len() != c {
            return Err(invalid(
                "batchnorm2d",
                format!("running stats length vs {c} channels (axis 1)"),
            ));
        }
        let area = h * w;
        let local_count = n * area;
        let xd = &self.nodes[x].data;
        let (mean, inv_std, count, stats_from_batch, synced) = match mode {
            Mode::Train => {
                let mut sums = vec![E::ZERO; 2 * c + 1];
                for s in 0..n {
                    for ch in 0..c {
                        let plane = &xd[(s * c + ch) * area..(s * c + ch + 1) * area];
                        let mut sm = E::ZERO;
                        let mut sq = E::ZERO;
                        for &v in plane {
                            sm = sm + v;
                            sq = sq + v * v;
                        }
                        sums[ch] = sums[ch] + sm;
                        sums[c + ch] = sums[c + ch] + sq;
                    }
                }
                sums[2 * c] = E::from_f64c(local_count as f64);
                let synced = if let Some(handle) = &self.sync {
                    handle.bus.allreduce_sum(handle.rank, &mut sums);
                    true
                } else {
                    false
                };
                let total = sums[2 * c];
                let count = total.to_f64c() as usize;
                let mut mean = vec![E::ZERO; c];
                let mut inv_std = vec![E::ZERO; c];
                for ch in 0..c {
                    let m = sums[ch] / total;
                    let var = (sums[c + ch] / total - m * m).max(E::ZERO);
                    mean[ch] = m;
                    inv_std[ch] = E::ONE / (var + eps).sqrt();
                    running_mean[ch] = momentum * running_mean[ch] + (E::ONE - momentum) * m;
                    running_var[ch] = momentum * running_var[ch] + (E::ONE - momentum) * var;
                }
                (mean, inv_std, count, true, synced)
            }
            Mode::Eval => {
                let mean = running_mean.to_vec();
                let inv_std: Vec<E> = running_var
                    .iter()
                    .map(|&v| E::ONE / (v + eps).sqrt())
                    .collect();
                (mean, inv_std, local_count, false, false)
            }
        };
        let gd = &self.nodes[gamma].data;
        let bd = &self.nodes[beta].data;
        let mut data = vec![E::ZERO; xd.len()];
        for s in 0..n {
            for ch in 0..c {
                let off = (s * c + ch) * area;
                let scale = gd[ch] * inv_std[ch];
                let shift = bd[ch] - mean[ch] * scale;
                for i in 0..area {
                    data[off + i] = xd[off + i] * scale + shift;
                }
            }
        }
        Ok(self.push(
            xs,
            data,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                inv_std,
                count,
                stats_from_batch,
                synced,
            },
        ))
    }

    /// Layer normalization over the last axis with affine parameters.
    pub fn layernorm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: E,
    ) -> Result<NodeId, ShapeError> {
        let xs = self.nodes[x].shape.clone();
        let d = *xs
            .last()
            .ok_or_else(|| invalid("layernorm", "input rank 0".into()))?;
        for (name, id) in [("gamma", gamma), ("beta", beta)] {
            if self.nodes[id].shape.as_slice() != [d] {
                return Err(invalid(
                    "layernorm",
                    format!(
                        "{name} shape {:?} vs last axis {d}",
                        self.nodes[id].shape
                    ),
                ));
            }
        }
        let rows = numel(&xs) / d;
        let xd = &self.nodes[x].data;
        let gd = &self.nodes[gamma].data;
        let bd = &self.nodes[beta].data;
        let mut data = vec![E::ZERO; xd.len()];
        let mut means = vec![E::ZERO; rows];
        let mut inv_stds = vec![E::ZERO; rows];
        let dn = E::from_f64c(d as f64);
        for r in 0..rows {
            let row = &xd[r * d..(r + 1) * d];
            let mut sm = E::ZERO;
            for &v in row {
                sm = sm + v;
            }
            let m = sm / dn;
            let mut vs = E::ZERO;
            for &v in row {
                let dv = v - m;
                vs = vs + dv * dv;
            }
            let inv = E::ONE / (vs / dn + eps).sqrt();
            means[r] = m;
            inv_stds[r] = inv;
            let o = &mut data[r * d..(r + 1) * d];
            for i in 0..d {
                o[i] = (row[i] - m) * inv * gd[i] + bd[i];
            }
        }
        Ok(self.push(
            xs,
            data,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                mean: means,
                inv_std: inv_stds,
                axis_len: d,
            },
        ))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        let xs = self.nodes[x].shape.clone();
        let d = *xs.last().expect("softmax input rank >= 1");
        let rows = numel(&xs) / d;
        let xd = &self.nodes[x].data;
        let mut data = vec![E::ZERO; xd.len()];
        for r in 0..rows {
            let row = &xd[r * d..(r + 1) * d];
            let mut mx = row[0];
            for &v in row {
                if v > mx {
                    mx = v;
                }
            }
            let o = &mut data[r * d..(r + 1) * d];
            let mut sum = E::ZERO;
            for i in 0..d {
                let e = (row[i] - mx).exp();
                o[i] = e;
                sum = sum + e;
            }
            for v in o.iter_mut() {
                *v = *v / sum;
            }
        }
        self.push(xs, data, Op::Softmax { x })
    }

    /// `softmax(q·kᵀ/√d)·v` per head; `q,k,v` are `[..., T, d]`.
    pub fn scaled_dot_product_attention(
        &mut self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
    ) -> Result<NodeId, ShapeError> {
        let d = *self
            .nodes[q]
            .shape
            .last()
            .ok_or_else(|| invalid("attention", "q rank 0".into()))?;
        let scores = self.bmm_nt(q, k)?;
        let scaled = self.mul_scalar(scores, E::from_f64c(1.0 / (d as f64).sqrt()));
        let attn = self.softmax(scaled);
        self.bmm(attn, v)
    }

    // ── pooling and reductions ──────────────────────────────────────────

    /// Global average pool NCHW → N×C.
    pub fn global_avg_pool2d(&mut self, x: NodeId) -> Result<NodeId, ShapeError> {
        let xs = self.nodes[x].shape.clone();
        if xs.len() != 4 {
            return Err(ShapeError::Rank {
                op: "global_avg_pool2d",
                expected: 4,
                shape: xs,
            });
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let area = h * w;
        let inv = E::from_f64c(1.0 / area as f64);
        let xd = &self.nodes[x].data;
        let mut data = vec![E::ZERO; n * c];
        for i in 0..n * c {
            let mut s = E::ZERO;
            for &v in &xd[i * area..(i + 1) * area] {
                s = s + v;
            }
            data[i] = s * inv;
        }
        Ok(self.push(vec![n, c], data, Op::Gap { x }))
    }

    /// Global max pool NCHW → N×C.
    pub fn global_max_pool2d(&mut self, x: NodeId) -> Result<NodeId, ShapeError> {
        let xs = self.nodes[x].shape.clone();
        if xs.len() != 4 {
            return Err(ShapeError::Rank {
                op: "global_max_pool2d",
                expected: 4,
                shape: xs,
            });
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let area = h * w;
        let xd = &self.nodes[x].data;
        let mut data = vec![E::ZERO; n * c];
        let mut arg = vec![0u32; n * c];
        for i in 0..n * c {
            let plane = &xd[i * area..(i + 1) * area];
            let mut best = plane[0];
            let mut bi = 0u32;
            for (j, &v) in plane.iter().enumerate() {
                if v > best {
                    best = v;
                    bi = j as u32;
                }
            }
            data[i] = best;
            arg[i] = bi;
        }
        Ok(self.push(vec![n, c], data, Op::Gmp { x, arg }))
    }

    /// Windowed average pool (valid padding).
    pub fn avg_pool2d(
        &mut self,
        x: NodeId,
        window: usize,
        stride: usize,
    ) -> Result<NodeId, ShapeError> {
        let xs = self.nodes[x].shape.clone();
        if xs.len() != 4 {
            return Err(ShapeError::Rank {
                op: "avg_pool2d",
                expected: 4,
                shape: xs,
            });
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let geom = ConvGeom::resolve(h, w, window, window, stride, Padding::Valid)
            .ok_or_else(|| invalid("avg_pool2d", format!("window {window} exceeds input {h}x{w}")))?;
        let out_area = geom.out_h * geom.out_w;
        let inv = E::from_f64c(1.0 / (window * window) as f64);
        let xd = &self.nodes[x].data;
        let mut data = vec![E::ZERO; n * c * out_area];
        for i in 0..n * c {
            let plane = &xd[i * h * w..(i + 1) * h * w];
            let o = &mut data[i * out_area..(i + 1) * out_area];
            let mut idx = 0;
            for oh in 0..geom.out_h {
                for ow in 0..geom.out_w {
                    let mut s = E::ZERO;
                    for ki in 0..window {
                        for kj in 0..window {
                            s = s + plane[(oh * stride + ki) * w + ow * stride + kj];
                        }
                    }
                    o[idx] = s * inv;
                    idx += 1;
                }
            }
        }
        Ok(self.push(
            vec![n, c, geom.out_h, geom.out_w],
            data,
            Op::AvgPool2d { x, geom },
        ))
    }

    /// Windowed max pool (valid padding).
    pub fn max_pool2d(
        &mut self,
        x: NodeId,
        window: usize,
        stride: usize,
    ) -> Result<NodeId, ShapeError> {
        let xs = self.nodes[x].shape.clone();
        if xs.len() != 4 {
            return Err(ShapeError::Rank {
                op: "max_pool2d",
                expected: 4,
                shape: xs,
            });
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let geom = ConvGeom::resolve(h, w, window, window, stride, Padding::Valid)
            .ok_or_else(|| invalid("max_pool2d", format!("window {window} exceeds input {h}x{w}")))?;
        let out_area = geom.out_h * geom.out_w;
        let xd = &self.nodes[x].data;
        let mut data = vec![E::ZERO; n * c * out_area];
        let mut arg = vec![0u32; n * c * out_area];
        for i in 0..n * c {
            let plane = &xd[i * h * w..(i + 1) * h * w];
            let mut idx = 0;
            for oh in 0..geom.out_h {
                for ow in 0..geom.out_w {
                    let mut best = plane[oh * stride * w + ow * stride];
                    let mut bi = (oh * stride * w + ow * stride) as u32;
                    for ki in 0..window {
                        for kj in 0..window {
                            let p = (oh * stride + ki) * w + ow * stride + kj;
                            if plane[p] > best {
                                best = plane[p];
                                bi = p as u32;
                            }
                        }
                    }
                    data[i * out_area + idx] = best;
                    arg[i * out_area + idx] = bi;
                    idx += 1;
                }
            }
        }
        Ok(self.push(
            vec![n, c, geom.out_h, geom.out_w],
            data,
            Op::MaxPool2d { x, geom, arg },
        ))
    }

    /// Mean over one axis (axis removed from the shape).
    pub fn mean_axis(&mut self, x: NodeId, axis: usize) -> Result<NodeId, ShapeError> {
        let xs = self.nodes[x].shape.clone();
        if axis >= xs.len() {
            return Err(invalid(
                "mean_axis",
                format!("axis {axis} out of range for shape {xs:?}"),
            ));
        }
        let outer: usize = xs[..axis].iter().product();
        let mid = xs[axis];
        let inner: usize = xs[axis + 1..].iter().product();
        let inv = E::from_f64c(1.0 / mid as f64);
        let xd = &self.nodes[x].data;
        let mut data = vec![E::ZERO; outer * inner];
        for o in 0..outer {
            for m in 0..mid {
                let base = (o * mid + m) * inner;
                let obase = o * inner;
                for i in 0..inner {
                    data[obase + i] = data[obase + i] + xd[base + i];
                }
            }
        }
        for v in &mut data {
            *v = *v * inv;
        }
        let mut out_shape = xs;
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        Ok(self.push(out_shape, data, Op::MeanAxis { x, axis }))
    }

    /// Max over one axis (axis removed from the shape).
    pub fn max_axis(&mut self, x: NodeId, axis: usize) -> Result<NodeId, ShapeError> {
        let xs = self.nodes[x].shape.clone();
        if axis >= xs.len() {
            return Err(invalid(
                "max_axis",
                format!("axis {axis} out of range for shape {xs:?}"),
            ));
        }
        let outer: usize = xs[..axis].iter().product();
        let mid = xs[axis];
        let inner: usize = xs[axis + 1..].iter().product();
        let xd = &self.nodes[x].data;
        let mut data = vec![E::ZERO; outer * inner];
        let mut arg = vec![0u32; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mut best = xd[o * mid * inner + i];
                let mut bm = 0u32;
                for m in 1..mid {
                    let v = xd[(o * mid + m) * inner + i];
                    if v > best {
                        best = v;
                        bm = m as u32;
                    }
                }
                data[o * inner + i] = best;
                arg[o * inner + i] = bm;
            }
        }
        let mut out_shape = xs;
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        Ok(self.push(out_shape, data, Op::MaxAxis { x, axis, arg }))
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let mut s = E::ZERO;
        for &v in &self.nodes[x].data {
            s = s + v;
        }
        self.push(vec![1], vec![s], Op::SumAll { x })
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let n = self.nodes[x].data.len();
        let s = self.sum_all(x);
        self.mul_scalar(s, E::from_f64c(1.0 / n as f64))
    }

    // ── shape plumbing ──────────────────────────────────────────────────

    pub fn reshape(&mut self, x: NodeId, new_shape: Vec<usize>) -> Result<NodeId, ShapeError> {
        if numel(&new_shape) != self.nodes[x].data.len() {
            return Err(ShapeError::LengthMismatch {
                shape: new_shape,
                expected: self.nodes[x].data.len(),
                actual: numel(&self.nodes[x].shape),
            });
        }
        let data = self.nodes[x].data.clone();
        Ok(self.push(new_shape, data, Op::Reshape { x }))
    }

    pub fn permute(&mut self, x: NodeId, axes: &[usize]) -> Result<NodeId, ShapeError> {
        let xs = self.nodes[x].shape.clone();
        let nd = xs.len();
        let mut seen = vec![false; nd];
        if axes.len() != nd || axes.iter().any(|&a| a >= nd || std::mem::replace(&mut seen[a], true)) {
            return Err(invalid(
                "permute",
                format!("axes {axes:?} is not a permutation of rank {nd}"),
            ));
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| xs[a]).collect();
        let data = permute_data(&self.nodes[x].data, &xs, axes);
        Ok(self.push(
            out_shape,
            data,
            Op::Permute {
                x,
                axes: axes.to_vec(),
            },
        ))
    }

    /// Expand axes of size 1 to the target shape (same rank).
    pub fn broadcast_to(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId, ShapeError> {
        let xs = self.nodes[x].shape.clone();
        if xs.len() != shape.len()
            || xs
                .iter()
                .zip(shape.iter())
                .any(|(&a, &b)| a != b && a != 1)
        {
            return Err(invalid(
                "broadcast_to",
                format!("cannot expand {xs:?} to {shape:?}"),
            ));
        }
        let strides = broadcast_strides(&xs, &shape);
        let n = numel(&shape);
        let xd = &self.nodes[x].data;
        let mut data = vec![E::ZERO; n];
        for_each_broadcast(&shape, &strides, &strides, |i, ai, _| {
            data[i] = xd[ai];
        });
        Ok(self.push(shape, data, Op::BroadcastTo { x }))
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId, ShapeError> {
        if parts.is_empty() {
            return Err(invalid("concat", "no inputs".into()));
        }
        let first = self.nodes[parts[0]].shape.clone();
        if axis >= first.len() {
            return Err(invalid(
                "concat",
                format!("axis {axis} out of range for shape {first:?}"),
            ));
        }
        let mut axis_total = 0usize;
        for &p in parts {
            let s = &self.nodes[p].shape;
            if s.len() != first.len() {
                return Err(invalid(
                    "concat",
                    format!("rank mismatch: {first:?} vs {s:?}"),
                ));
            }
            for (d, (&a, &b)) in first.iter().zip(s.iter()).enumerate() {
                if d != axis && a != b {
                    return Err(ShapeError::AxisMismatch {
                        op: "concat",
                        axis: d,
                        lhs: a,
                        rhs: b,
                    });
                }
            }
            axis_total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out_shape = first;
        out_shape[axis] = axis_total;
        let mut data = vec![E::ZERO; numel(&out_shape)];
        let mut offset = 0usize;
        for &p in parts {
            let ps = self.nodes[p].shape[axis];
            let pd = &self.nodes[p].data;
            for o in 0..outer {
                let src = &pd[o * ps * inner..(o + 1) * ps * inner];
                let dst_base = (o * axis_total + offset) * inner;
                data[dst_base..dst_base + ps * inner].copy_from_slice(src);
            }
            offset += ps;
        }
        Ok(self.push(
            out_shape,
            data,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        ))
    }

    pub fn slice(
        &mut self,
        x: NodeId,
        axis: usize,
        start: usize,
        len: usize,
    ) -> Result<NodeId, ShapeError> {
        let xs = self.nodes[x].shape.clone();
        if axis >= xs.len() || start + len > xs[axis] {
            return Err(invalid(
                "slice",
                format!("range {start}..{} out of bounds on axis {axis} of {xs:?}", start + len),
            ));
        }
        let outer: usize = xs[..axis].iter().product();
        let inner: usize = xs[axis + 1..].iter().product();
        let mid = xs[axis];
        let xd = &self.nodes[x].data;
        let mut data = vec![E::ZERO; outer * len * inner];
        for o in 0..outer {
            let src = &xd[(o * mid + start) * inner..(o * mid + start + len) * inner];
            data[o * len * inner..(o + 1) * len * inner].copy_from_slice(src);
        }
        let mut out_shape = xs;
        out_shape[axis] = len;
        Ok(self.push(out_shape, data, Op::Slice { x, axis, start }))
    }

    /// Bilinear resize of NCHW feature maps (align-corners-false). Identity
    /// sizes reproduce the input bit for bit.
    pub fn resize_bilinear(
        &mut self,
        x: NodeId,
        out_h: usize,
        out_w: usize,
    ) -> Result<NodeId, ShapeError> {
        let xs = self.nodes[x].shape.clone();
        if xs.len() != 4 {
            return Err(ShapeError::Rank {
                op: "resize_bilinear",
                expected: 4,
                shape: xs,
            });
        }
        if out_h == 0 || out_w == 0 {
            return Err(invalid("resize_bilinear", "zero output size".into()));
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let rows = kernels::bilinear_axis(h, out_h);
        let cols = kernels::bilinear_axis(w, out_w);
        let xd = &self.nodes[x].data;
        let mut data = vec![E::ZERO; n * c * out_h * out_w];
        for i in 0..n * c {
            kernels::resize_bilinear_plane(
                &xd[i * h * w..(i + 1) * h * w],
                w,
                &rows,
                &cols,
                &mut data[i * out_h * out_w..(i + 1) * out_h * out_w],
            );
        }
        Ok(self.push(
            vec![n, c, out_h, out_w],
            data,
            Op::ResizeBilinear { x, rows, cols },
        ))
    }

    /// Numerically stable binary cross-entropy on logits, averaged over all
    /// entries. Targets are constants (not differentiated).
    pub fn bce_with_logits(&mut self, logits: NodeId, targets: &[E]) -> Result<NodeId, ShapeError> {
        let zd = &self.nodes[logits].data;
        if zd.len() != targets.len() {
            return Err(invalid(
                "bce_with_logits",
                format!("{} logits vs {} targets", zd.len(), targets.len()),
            ));
        }
        let mut acc = E::ZERO;
        for (&z, &t) in zd.iter().zip(targets.iter()) {
            // max(z,0) - z·t + ln(1 + exp(-|z|))
            let m = if z > E::ZERO { z } else { E::ZERO };
            acc = acc + m - z * t + (E::ONE + (-z.abs()).exp()).ln();
        }
        let loss = acc / E::from_f64c(zd.len() as f64);
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
            },
        ))
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Accumulates gradients for every node reachable from `root` (which
    /// must be scalar). Call `reset_grads` between steps; repeated calls add
    /// a full fresh pass on top of the stored gradients.
    pub fn backward(&mut self, root: NodeId) -> Result<(), ShapeError> {
        if numel(&self.nodes[root].shape) != 1 {
            return Err(invalid(
                "backward",
                format!("root must be scalar, got shape {:?}", self.nodes[root].shape),
            ));
        }
        let saved = std::mem::replace(&mut self.grads, vec![None; self.nodes.len()]);
        add_grad(&mut self.grads, root, 1, |g| g[0] = g[0] + E::ONE);
        for i in (0..=root).rev() {
            let g = match &self.grads[i] {
                Some(g) => g.clone(),
                None => continue,
            };
            self.backprop_node(i, &g);
        }
        let pass = std::mem::replace(&mut self.grads, saved);
        for (slot, fresh) in self.grads.iter_mut().zip(pass) {
            if let Some(fv) = fresh {
                match slot {
                    Some(sv) => {
                        for (a, b) in sv.iter_mut().zip(fv) {
                            *a = *a + b;
                        }
                    }
                    None => *slot = Some(fv),
                }
            }
        }
        Ok(())
    }

    fn backprop_node(&mut self, i: NodeId, g: &[E]) {
        // Split borrows: nodes are read-only here, grads are written.
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Unary { kind, x } => {
                let (kind, x) = (*kind, *x);
                let xd = &self.nodes[x].data;
                let yd = &self.nodes[i].data;
                add_grad(&mut self.grads, x, xd.len(), |dst| {
                    for j in 0..dst.len() {
                        let d = match kind {
                            UnaryKind::Relu => {
                                if xd[j] > E::ZERO {
                                    E::ONE
                                } else {
                                    E::ZERO
                                }
                            }
                            UnaryKind::Sigmoid => {
                                let s = yd[j];
                                s * (E::ONE - s)
                            }
                            UnaryKind::Swish => {
                                let s = xd[j].sigmoid();
                                s * (E::ONE + xd[j] * (E::ONE - s))
                            }
                            UnaryKind::Gelu => gelu_grad(xd[j]),
                        };
                        dst[j] = dst[j] + g[j] * d;
                    }
                });
            }
            Op::MulScalar { x, c } => {
                let (x, c) = (*x, *c);
                let n = self.nodes[x].data.len();
                add_grad(&mut self.grads, x, n, |dst| {
                    for j in 0..n {
                        dst[j] = dst[j] + g[j] * c;
                    }
                });
            }
            Op::Binary { kind, a, b } => {
                let (kind, a, b) = (*kind, *a, *b);
                let out_shape = self.nodes[i].shape.clone();
                let a_shape = self.nodes[a].shape.clone();
                let b_shape = self.nodes[b].shape.clone();
                let same = a_shape == b_shape;
                let an = self.nodes[a].data.len();
                let bn = self.nodes[b].data.len();
                match kind {
                    BinKind::Add | BinKind::Sub => {
                        let sign = if kind == BinKind::Sub { -E::ONE } else { E::ONE };
                        if same {
                            add_grad(&mut self.grads, a, an, |dst| {
                                for j in 0..an {
                                    dst[j] = dst[j] + g[j];
                                }
                            });
                            add_grad(&mut self.grads, b, bn, |dst| {
                                for j in 0..bn {
                                    dst[j] = dst[j] + g[j] * sign;
                                }
                            });
                        } else {
                            let sa = broadcast_strides(&a_shape, &out_shape);
                            let sb = broadcast_strides(&b_shape, &out_shape);
                            add_grad(&mut self.grads, a, an, |dst| {
                                for_each_broadcast(&out_shape, &sa, &sb, |j, ai, _| {
                                    dst[ai] = dst[ai] + g[j];
                                });
                            });
                            add_grad(&mut self.grads, b, bn, |dst| {
                                for_each_broadcast(&out_shape, &sa, &sb, |j, _, bi| {
                                    dst[bi] = dst[bi] + g[j] * sign;
                                });
                            });
                        }
                    }
                    BinKind::Mul => {
                        let sa = broadcast_strides(&a_shape, &out_shape);
                        let sb = broadcast_strides(&b_shape, &out_shape);
                        let ad = self.nodes[a].data.clone();
                        let bd = self.nodes[b].data.clone();
                        add_grad(&mut self.grads, a, an, |dst| {
                            for_each_broadcast(&out_shape, &sa, &sb, |j, ai, bi| {
                                dst[ai] = dst[ai] + g[j] * bd[bi];
                            });
                        });
                        add_grad(&mut self.grads, b, bn, |dst| {
                            for_each_broadcast(&out_shape, &sa, &sb, |j, ai, bi| {
                                dst[bi] = dst[bi] + g[j] * ad[ai];
                            });
                        });
                    }
                }
            }
            Op::Dense {
                x,
                w,
                b,
                rows,
                in_f,
                out_f,
            } => {
                let (x, w, b, rows, in_f, out_f) = (*x, *w, *b, *rows, *in_f, *out_f);
                let xd = &self.nodes[x].data;
                let wd = &self.nodes[w].data;
                add_grad(&mut self.grads, x, rows * in_f, |dst| {
                    // dX += g · Wᵀ
                    kernels::matmul_bt_acc(g, wd, rows, out_f, in_f, dst);
                });
                add_grad(&mut self.grads, w, in_f * out_f, |dst| {
                    // dW += Xᵀ · g
                    kernels::matmul_at_acc(xd, g, in_f, rows, out_f, dst);
                });
                if let Some(bid) = b {
                    add_grad(&mut self.grads, bid, out_f, |dst| {
                        for r in 0..rows {
                            let grow = &g[r * out_f..(r + 1) * out_f];
                            for (d, &gv) in dst.iter_mut().zip(grow.iter()) {
                                *d = *d + gv;
                            }
                        }
                    });
                }
            }
            Op::Matmul {
                a,
                b,
                batch,
                m,
                k,
                n,
                trans_b,
            } => {
                let (a, b, batch, m, k, n, trans_b) = (*a, *b, *batch, *m, *k, *n, *trans_b);
                let ad = self.nodes[a].data.clone();
                let bd = self.nodes[b].data.clone();
                add_grad(&mut self.grads, a, ad.len(), |dst| {
                    for t in 0..batch {
                        let gt = &g[t * m * n..(t + 1) * m * n];
                        let bt = &bd[t * k * n..(t + 1) * k * n];
                        let da = &mut dst[t * m * k..(t + 1) * m * k];
                        if trans_b {
                            // out = A·Bᵀ with B [n,k]: dA += g·B
                            kernels::matmul_acc(gt, bt, m, n, k, da);
                        } else {
                            // dA += g·Bᵀ
                            kernels::matmul_bt_acc(gt, bt, m, n, k, da);
                        }
                    }
                });
                add_grad(&mut self.grads, b, bd.len(), |dst| {
                    for t in 0..batch {
                        let gt = &g[t * m * n..(t + 1) * m * n];
                        let at = &ad[t * m * k..(t + 1) * m * k];
                        let db = &mut dst[t * k * n..(t + 1) * k * n];
                        if trans_b {
                            // dB[n,k] += gᵀ·A
                            kernels::matmul_at_acc(gt, at, n, m, k, db);
                        } else {
                            // dB += Aᵀ·g
                            kernels::matmul_at_acc(at, gt, k, m, n, db);
                        }
                    }
                });
            }
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                in_c,
                out_c,
            } => {
                let (x, w, b, geom, in_c, out_c) = (*x, *w, *b, *geom, *in_c, *out_c);
                let n = self.nodes[i].shape[0];
                let out_area = geom.out_h * geom.out_w;
                let k_len = in_c * geom.kh * geom.kw;
                let in_len = in_c * geom.in_h * geom.in_w;
                let xd = self.nodes[x].data.clone();
                let wd = self.nodes[w].data.clone();
                let mut col = vec![E::ZERO; k_len * out_area];
                let mut dcol = vec![E::ZERO; k_len * out_area];
                add_grad(&mut self.grads, w, wd.len(), |_| {});
                add_grad(&mut self.grads, x, xd.len(), |_| {});
                // split processing per sample: accumulate into both stores
                for s in 0..n {
                    kernels::im2col(&xd[s * in_len..(s + 1) * in_len], in_c, &geom, &mut col);
                    let gs = &g[s * out_c * out_area..(s + 1) * out_c * out_area];
                    {
                        let dw = self.grads[w].as_mut().expect("dw allocated");
                        kernels::matmul_bt_acc(gs, &col, out_c, out_area, k_len, dw);
                    }
                    dcol.fill(E::ZERO);
                    kernels::matmul_at_acc(&wd, gs, k_len, out_c, out_area, &mut dcol);
                    let dx = self.grads[x].as_mut().expect("dx allocated");
                    kernels::col2im_acc(&dcol, in_c, &geom, &mut dx[s * in_len..(s + 1) * in_len]);
                }
                if let Some(bid) = b {
                    add_grad(&mut self.grads, bid, out_c, |dst| {
                        for s in 0..n {
                            for c in 0..out_c {
                                let go = &g[(s * out_c + c) * out_area..(s * out_c + c + 1) * out_area];
                                let mut acc = E::ZERO;
                                for &v in go {
                                    acc = acc + v;
                                }
                                dst[c] = dst[c] + acc;
                            }
                        }
                    });
                }
            }
            Op::DepthwiseConv2d {
                x,
                w,
                b,
                geom,
                channels,
            } => {
                let (x, w, b, geom, channels) = (*x, *w, *b, *geom, *channels);
                let n = self.nodes[i].shape[0];
                let out_area = geom.out_h * geom.out_w;
                let in_len = channels * geom.in_h * geom.in_w;
                let xd = self.nodes[x].data.clone();
                let wd = self.nodes[w].data.clone();
                add_grad(&mut self.grads, w, wd.len(), |_| {});
                add_grad(&mut self.grads, x, xd.len(), |_| {});
                for s in 0..n {
                    let gs = &g[s * channels * out_area..(s + 1) * channels * out_area];
                    // temporary split: take dw out to appease the borrow checker
                    let mut dw = self.grads[w].take().expect("dw allocated");
                    let dx = self.grads[x].as_mut().expect("dx allocated");
                    kernels::depthwise_backward(
                        &xd[s * in_len..(s + 1) * in_len],
                        &wd,
                        gs,
                        channels,
                        &geom,
                        &mut dx[s * in_len..(s + 1) * in_len],
                        &mut dw,
                    );
                    self.grads[w] = Some(dw);
                }
                if let Some(bid) = b {
                    add_grad(&mut self.grads, bid, channels, |dst| {
                        for s in 0..n {
                            for c in 0..channels {
                                let go = &g[(s * channels + c) * out_area..(s * channels + c + 1) * out_area];
                                let mut acc = E::ZERO;
                                for &v in go {
                                    acc = acc + v;
                                }
                                dst[c] = dst[c] + acc;
                            }
                        }
                    });
                }
            }
            Op::Conv1dSame { x, w, b, len, k } => {
                let (x, w, b, len, k) = (*x, *w, *b, *len, *k);
                let n = self.nodes[i].shape[0];
                let xd = self.nodes[x].data.clone();
                let wd = self.nodes[w].data.clone();
                add_grad(&mut self.grads, w, k, |_| {});
                add_grad(&mut self.grads, x, n * len, |_| {});
                for s in 0..n {
                    let mut dw = self.grads[w].take().expect("dw allocated");
                    let dx = self.grads[x].as_mut().expect("dx allocated");
                    kernels::conv1d_same_backward(
                        &xd[s * len..(s + 1) * len],
                        &wd,
                        &g[s * len..(s + 1) * len],
                        len,
                        k,
                        &mut dx[s * len..(s + 1) * len],
                        &mut dw,
                    );
                    self.grads[w] = Some(dw);
                }
                if let Some(bid) = b {
                    add_grad(&mut self.grads, bid, 1, |dst| {
                        let mut acc = E::ZERO;
                        for &v in g {
                            acc = acc + v;
                        }
                        dst[0] = dst[0] + acc;
                    });
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                inv_std,
                count,
                stats_from_batch,
                synced,
            } => {
                let (x, gamma, beta) = (*x, *gamma, *beta);
                let (count, stats_from_batch, synced) = (*count, *stats_from_batch, *synced);
                let mean = mean.clone();
                let inv_std = inv_std.clone();
                let shape = self.nodes[i].shape.clone();
                let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
                let area = h * w;
                let xd = self.nodes[x].data.clone();
                let gd = self.nodes[gamma].data.clone();

                // Per-channel reduction sums of the incoming gradient. The
                // local copies feed dgamma/dbeta; a synced copy feeds dx so a
                // sharded batch backprops exactly like the pooled batch.
                let mut sum_g = vec![E::ZERO; c];
                let mut sum_gx = vec![E::ZERO; c];
                for s in 0..n {
                    for ch in 0..c {
                        let off = (s * c + ch) * area;
                        let mut a0 = E::ZERO;
                        let mut a1 = E::ZERO;
                        for j in 0..area {
                            let gv = g[off + j];
                            a0 = a0 + gv;
                            a1 = a1 + gv * (xd[off + j] - mean[ch]) * inv_std[ch];
                        }
                        sum_g[ch] = sum_g[ch] + a0;
                        sum_gx[ch] = sum_gx[ch] + a1;
                    }
                }
                add_grad(&mut self.grads, beta, c, |dst| {
                    for ch in 0..c {
                        dst[ch] = dst[ch] + sum_g[ch];
                    }
                });
                add_grad(&mut self.grads, gamma, c, |dst| {
                    for ch in 0..c {
                        dst[ch] = dst[ch] + sum_gx[ch];
                    }
                });
                let (red_g, red_gx) = if synced {
                    let handle = self.sync.as_ref().expect("synced node requires handle");
                    let mut buf = Vec::with_capacity(2 * c);
                    buf.extend_from_slice(&sum_g);
                    buf.extend_from_slice(&sum_gx);
                    handle.bus.allreduce_sum(handle.rank, &mut buf);
                    (buf[..c].to_vec(), buf[c..].to_vec())
                } else {
                    (sum_g, sum_gx)
                };
                let inv_count = E::from_f64c(1.0 / count as f64);
                add_grad(&mut self.grads, x, xd.len(), |dst| {
                    for s in 0..n {
                        for ch in 0..c {
                            let off = (s * c + ch) * area;
                            let scale = gd[ch] * inv_std[ch];
                            if stats_from_batch {
                                let mg = red_g[ch] * inv_count;
                                let mgx = red_gx[ch] * inv_count;
                                for j in 0..area {
                                    let xhat = (xd[off + j] - mean[ch]) * inv_std[ch];
                                    dst[off + j] =
                                        dst[off + j] + scale * (g[off + j] - mg - xhat * mgx);
                                }
                            } else {
                                for j in 0..area {
                                    dst[off + j] = dst[off + j] + scale * g[off + j];
                                }
                            }
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                mean,
                inv_std,
                axis_len,
            } => {
                let (x, gamma, beta, d) = (*x, *gamma, *beta, *axis_len);
                let mean = mean.clone();
                let inv_std = inv_std.clone();
                let xd = self.nodes[x].data.clone();
                let gd = self.nodes[gamma].data.clone();
                let rows = xd.len() / d;
                add_grad(&mut self.grads, beta, d, |dst| {
                    for r in 0..rows {
                        let grow = &g[r * d..(r + 1) * d];
                        for (dv, &gv) in dst.iter_mut().zip(grow.iter()) {
                            *dv = *dv + gv;
                        }
                    }
                });
                add_grad(&mut self.grads, gamma, d, |dst| {
                    for r in 0..rows {
                        for j in 0..d {
                            let xhat = (xd[r * d + j] - mean[r]) * inv_std[r];
                            dst[j] = dst[j] + g[r * d + j] * xhat;
                        }
                    }
                });
                let dn = E::from_f64c(d as f64);
                add_grad(&mut self.grads, x, xd.len(), |dst| {
                    for r in 0..rows {
                        let mut sum_dh = E::ZERO;
                        let mut sum_dh_xhat = E::ZERO;
                        for j in 0..d {
                            let dh = g[r * d + j] * gd[j];
                            let xhat = (xd[r * d + j] - mean[r]) * inv_std[r];
                            sum_dh = sum_dh + dh;
                            sum_dh_xhat = sum_dh_xhat + dh * xhat;
                        }
                        for j in 0..d {
                            let dh = g[r * d + j] * gd[j];
                            let xhat = (xd[r * d + j] - mean[r]) * inv_std[r];
                            dst[r * d + j] = dst[r * d + j]
                                + inv_std[r] * (dh - (sum_dh + xhat * sum_dh_xhat) / dn);
                        }
                    }
                });
            }
            Op::Softmax { x } => {
                let x = *x;
                let yd = self.nodes[i].data.clone();
                let d = *self.nodes[i].shape.last().unwrap();
                let rows = yd.len() / d;
                add_grad(&mut self.grads, x, yd.len(), |dst| {
                    for r in 0..rows {
                        let yrow = &yd[r * d..(r + 1) * d];
                        let grow = &g[r * d..(r + 1) * d];
                        let mut dot = E::ZERO;
                        for j in 0..d {
                            dot = dot + yrow[j] * grow[j];
                        }
                        for j in 0..d {
                            dst[r * d + j] = dst[r * d + j] + yrow[j] * (grow[j] - dot);
                        }
                    }
                });
            }
            Op::Gap { x } => {
                let x = *x;
                let xs = self.nodes[x].shape.clone();
                let area = xs[2] * xs[3];
                let inv = E::from_f64c(1.0 / area as f64);
                add_grad(&mut self.grads, x, numel(&xs), |dst| {
                    for (idx, &gv) in g.iter().enumerate() {
                        let gvs = gv * inv;
                        for v in &mut dst[idx * area..(idx + 1) * area] {
                            *v = *v + gvs;
                        }
                    }
                });
            }
            Op::Gmp { x, arg } => {
                let x = *x;
                let arg = arg.clone();
                let xs = self.nodes[x].shape.clone();
                let area = xs[2] * xs[3];
                add_grad(&mut self.grads, x, numel(&xs), |dst| {
                    for (idx, &gv) in g.iter().enumerate() {
                        let p = idx * area + arg[idx] as usize;
                        dst[p] = dst[p] + gv;
                    }
                });
            }
            Op::AvgPool2d { x, geom } => {
                let (x, geom) = (*x, *geom);
                let xs = self.nodes[x].shape.clone();
                let (n, c) = (xs[0], xs[1]);
                let (h, w) = (geom.in_h, geom.in_w);
                let out_area = geom.out_h * geom.out_w;
                let inv = E::from_f64c(1.0 / (geom.kh * geom.kw) as f64);
                add_grad(&mut self.grads, x, numel(&xs), |dst| {
                    for i2 in 0..n * c {
                        let go = &g[i2 * out_area..(i2 + 1) * out_area];
                        let plane = &mut dst[i2 * h * w..(i2 + 1) * h * w];
                        let mut idx = 0;
                        for oh in 0..geom.out_h {
                            for ow in 0..geom.out_w {
                                let gv = go[idx] * inv;
                                idx += 1;
                                for ki in 0..geom.kh {
                                    for kj in 0..geom.kw {
                                        let p = (oh * geom.stride + ki) * w + ow * geom.stride + kj;
                                        plane[p] = plane[p] + gv;
                                    }
                                }
                            }
                        }
                    }
                });
            }
            Op::MaxPool2d { x, geom, arg } => {
                let (x, geom) = (*x, *geom);
                let arg = arg.clone();
                let xs = self.nodes[x].shape.clone();
                let (n, c) = (xs[0], xs[1]);
                let plane_len = geom.in_h * geom.in_w;
                let out_area = geom.out_h * geom.out_w;
                add_grad(&mut self.grads, x, numel(&xs), |dst| {
                    for i2 in 0..n * c {
                        for j in 0..out_area {
                            let p = i2 * plane_len + arg[i2 * out_area + j] as usize;
                            dst[p] = dst[p] + g[i2 * out_area + j];
                        }
                    }
                });
            }
            Op::MeanAxis { x, axis } => {
                let (x, axis) = (*x, *axis);
                let xs = self.nodes[x].shape.clone();
                let outer: usize = xs[..axis].iter().product();
                let mid = xs[axis];
                let inner: usize = xs[axis + 1..].iter().product();
                let inv = E::from_f64c(1.0 / mid as f64);
                add_grad(&mut self.grads, x, numel(&xs), |dst| {
                    for o in 0..outer {
                        for m in 0..mid {
                            let base = (o * mid + m) * inner;
                            for j in 0..inner {
                                dst[base + j] = dst[base + j] + g[o * inner + j] * inv;
                            }
                        }
                    }
                });
            }
            Op::MaxAxis { x, axis, arg } => {
                let (x, axis) = (*x, *axis);
                let arg = arg.clone();
                let xs = self.nodes[x].shape.clone();
                let outer: usize = xs[..axis].iter().product();
                let mid = xs[axis];
                let inner: usize = xs[axis + 1..].iter().product();
                add_grad(&mut self.grads, x, numel(&xs), |dst| {
                    for o in 0..outer {
                        for j in 0..inner {
                            let m = arg[o * inner + j] as usize;
                            let p = (o * mid + m) * inner + j;
                            dst[p] = dst[p] + g[o * inner + j];
                        }
                    }
                });
            }
            Op::Reshape { x } => {
                let x = *x;
                let n = self.nodes[x].data.len();
                add_grad(&mut self.grads, x, n, |dst| {
                    for j in 0..n {
                        dst[j] = dst[j] + g[j];
                    }
                });
            }
            Op::Permute { x, axes } => {
                let x = *x;
                let axes = axes.clone();
                let out_shape = self.nodes[i].shape.clone();
                // inverse permutation scatters the gradient back
                let mut inv_axes = vec![0usize; axes.len()];
                for (d, &a) in axes.iter().enumerate() {
                    inv_axes[a] = d;
                }
                let dg = permute_data(g, &out_shape, &inv_axes);
                let n = dg.len();
                add_grad(&mut self.grads, x, n, |dst| {
                    for j in 0..n {
                        dst[j] = dst[j] + dg[j];
                    }
                });
            }
            Op::BroadcastTo { x } => {
                let x = *x;
                let xs = self.nodes[x].shape.clone();
                let out_shape = self.nodes[i].shape.clone();
                let strides = broadcast_strides(&xs, &out_shape);
                add_grad(&mut self.grads, x, numel(&xs), |dst| {
                    for_each_broadcast(&out_shape, &strides, &strides, |j, ai, _| {
                        dst[ai] = dst[ai] + g[j];
                    });
                });
            }
            Op::Concat { parts, axis } => {
                let parts = parts.clone();
                let axis = *axis;
                let out_shape = self.nodes[i].shape.clone();
                let outer: usize = out_shape[..axis].iter().product();
                let inner: usize = out_shape[axis + 1..].iter().product();
                let total = out_shape[axis];
                let mut offset = 0usize;
                for &p in &parts {
                    let ps = self.nodes[p].shape[axis];
                    let pn = self.nodes[p].data.len();
                    let off = offset;
                    add_grad(&mut self.grads, p, pn, |dst| {
                        for o in 0..outer {
                            let src = &g[(o * total + off) * inner..(o * total + off + ps) * inner];
                            let d = &mut dst[o * ps * inner..(o + 1) * ps * inner];
                            for (dv, &sv) in d.iter_mut().zip(src.iter()) {
                                *dv = *dv + sv;
                            }
                        }
                    });
                    offset += ps;
                }
            }
            Op::Slice { x, axis, start } => {
                let (x, axis, start) = (*x, *axis, *start);
                let xs = self.nodes[x].shape.clone();
                let out_shape = self.nodes[i].shape.clone();
                let outer: usize = xs[..axis].iter().product();
                let inner: usize = xs[axis + 1..].iter().product();
                let mid = xs[axis];
                let len = out_shape[axis];
                add_grad(&mut self.grads, x, numel(&xs), |dst| {
                    for o in 0..outer {
                        let d = &mut dst[(o * mid + start) * inner..(o * mid + start + len) * inner];
                        let src = &g[o * len * inner..(o + 1) * len * inner];
                        for (dv, &sv) in d.iter_mut().zip(src.iter()) {
                            *dv = *dv + sv;
                        }
                    }
                });
            }
            Op::ResizeBilinear { x, rows, cols } => {
                let x = *x;
                let rows = rows.clone();
                let cols = cols.clone();
                let xs = self.nodes[x].shape.clone();
                let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
                let out_area = rows.len() * cols.len();
                add_grad(&mut self.grads, x, numel(&xs), |dst| {
                    for i2 in 0..n * c {
                        kernels::resize_bilinear_plane_backward(
                            &g[i2 * out_area..(i2 + 1) * out_area],
                            w,
                            &rows,
                            &cols,
                            &mut dst[i2 * h * w..(i2 + 1) * h * w],
                        );
                    }
                });
            }
            Op::SumAll { x } => {
                let x = *x;
                let n = self.nodes[x].data.len();
                let gv = g[0];
                add_grad(&mut self.grads, x, n, |dst| {
                    for v in dst.iter_mut() {
                        *v = *v + gv;
                    }
                });
            }
            Op::BceWithLogits { logits, targets } => {
                let logits = *logits;
                let targets = targets.clone();
                let zd = self.nodes[logits].data.clone();
                let inv = E::from_f64c(1.0 / zd.len() as f64);
                let gv = g[0];
                add_grad(&mut self.grads, logits, zd.len(), |dst| {
                    for j in 0..zd.len() {
                        dst[j] = dst[j] + gv * (zd[j].sigmoid() - targets[j]) * inv;
                    }
                });
            }
        }
    }
}

impl<E: Scalar> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

fn add_grad<E: Scalar, F: FnOnce(&mut [E])>(
    grads: &mut [Option<Vec<E>>],
    id: NodeId,
    len: usize,
    f: F,
) {
    let slot = &mut grads[id];
    if slot.is_none() {
        *slot = Some(vec![E::ZERO; len]);
    }
    f(slot.as_mut().unwrap());
}

fn permute_data<E: Scalar>(data: &[E], in_shape: &[usize], axes: &[usize]) -> Vec<E> {
    let nd = in_shape.len();
    let mut in_strides = vec![1usize; nd];
    for d in (0..nd.saturating_sub(1)).rev() {
        in_strides[d] = in_strides[d + 1] * in_shape[d + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
    let step: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let n = data.len();
    let mut out = vec![E::ZERO; n];
    let mut coords = vec![0usize; nd];
    let mut src = 0usize;
    for item in out.iter_mut() {
        *item = data[src];
        for d in (0..nd).rev() {
            coords[d] += 1;
            src += step[d];
            if coords[d] < out_shape[d] {
                break;
            }
            coords[d] = 0;
            src -= step[d] * out_shape[d];
        }
    }
    out
}

#[inline]
fn gelu<E: Scalar>(x: E) -> E {
    // tanh approximation
    let c = E::from_f64c(0.7978845608028654); // sqrt(2/pi)
    let k = E::from_f64c(0.044715);
    let half = E::from_f64c(0.5);
    half * x * (E::ONE + (c * (x + k * x * x * x)).tanh())
}

#[inline]
fn gelu_grad<E: Scalar>(x: E) -> E {
    let c = E::from_f64c(0.7978845608028654);
    let k = E::from_f64c(0.044715);
    let half = E::from_f64c(0.5);
    let three = E::from_f64c(3.0);
    let inner = c * (x + k * x * x * x);
    let t = inner.tanh();
    let sech2 = E::ONE - t * t;
    half * (E::ONE + t) + half * x * sech2 * c * (E::ONE + three * k * x * x)
}
