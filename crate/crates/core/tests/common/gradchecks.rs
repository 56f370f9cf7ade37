//! Finite-difference verification of every differentiable operation and of
//! the composite blocks, in f64 across seeded random shapes. Shared by the
//! gradcheck test target and the acceptance suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use szoo_core::attention::{AttentionKind, AttentionSpec};
use szoo_core::blocks::{BlockKind, BlockSpec, GhostConv, MbConvBlock, WrnBlock};
use szoo_core::gradcheck::check_grads;
use szoo_core::params::{FwdCtx, ParamSet};
use szoo_core::tape::{Mode, NodeId, Tape};
use szoo_core::{Padding, Scalar};

const TOL: f64 = 1e-5;
const FD_EPS: f64 = 2e-6;
const SEEDS: u64 = 20;

/// Random values bounded away from zero so kinked ops (relu, max pools)
/// never sit within a finite-difference step of their corner.
fn gen_data(rng: &mut ChaCha20Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let mag = 0.05 + 0.95 * rng.gen::<f64>();
            if rng.gen::<bool>() {
                mag
            } else {
                -mag
            }
        })
        .collect()
}

fn numel(s: &[usize]) -> usize {
    s.iter().product()
}

/// Checks one case: `build` maps leaves (one per shape) to a scalar loss.
fn check_case<F>(name: &str, seed: u64, shapes: &[Vec<usize>], build: F)
where
    F: Fn(&mut Tape<f64>, &[NodeId]) -> NodeId,
{
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let inputs: Vec<Vec<f64>> = shapes.iter().map(|s| gen_data(&mut rng, numel(s))).collect();
    let forward = |data: &[Vec<f64>]| -> f64 {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = shapes
            .iter()
            .zip(data.iter())
            .map(|(s, d)| tape.leaf_from(s.clone(), d.clone()).unwrap())
            .collect();
        let loss = build(&mut tape, &ids);
        tape.data(loss)[0]
    };
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = shapes
        .iter()
        .zip(inputs.iter())
        .map(|(s, d)| tape.leaf_from(s.clone(), d.clone()).unwrap())
        .collect();
    let loss = build(&mut tape, &ids);
    tape.backward(loss).unwrap();
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .zip(shapes.iter())
        .map(|(&id, s)| {
            tape.grad(id)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; numel(s)])
        })
        .collect();
    let report = check_grads(&inputs, &analytic, FD_EPS, forward);
    assert!(
        report.passes(TOL),
        "{name} seed {seed}: max rel err {} at input {} index {} ({} checked)",
        report.max_rel_err,
        report.worst_input,
        report.worst_index,
        report.checked
    );
}

/// Weighted loss so the gradient of the output is non-uniform (sum alone
/// would miss sign errors that cancel).
fn weighted_loss(tape: &mut Tape<f64>, y: NodeId) -> NodeId {
    let n = tape.data(y).len();
    let w: Vec<f64> = (0..n).map(|i| 0.3 + 0.71 * ((i * 37 % 11) as f64)).collect();
    let shape = tape.shape(y).to_vec();
    let wid = tape.leaf_from(shape, w).unwrap();
    let prod = tape.mul(y, wid).unwrap();
    tape.sum_all(prod)
}

pub fn conv2d_gradients() {
    // the documented reference case: d(sum(conv2d(x, w)))/dw on a random
    // 2x3x8x8 input in f64
    check_case(
        "conv2d-2x3x8x8",
        424242,
        &[vec![2, 3, 8, 8], vec![4, 3, 3, 3]],
        |tape, ids| {
            let y = tape.conv2d(ids[0], ids[1], None, 1, Padding::Same).unwrap();
            tape.sum_all(y)
        },
    );
    for seed in 0..SEEDS {
        let mut rng = ChaCha20Rng::seed_from_u64(900 + seed);
        let (n, ci, co) = (
            rng.gen_range(1..3usize),
            rng.gen_range(1..4usize),
            rng.gen_range(1..4usize),
        );
        let hw = rng.gen_range(4..8usize);
        let k = [1, 3, 5][rng.gen_range(0..3)];
        let stride = rng.gen_range(1..3usize);
        let padding = if rng.gen() { Padding::Same } else { Padding::Valid };
        if padding == Padding::Valid && k > hw {
            continue;
        }
        check_case(
            "conv2d",
            seed,
            &[
                vec![n, ci, hw, hw],
                vec![co, ci, k, k],
                vec![co],
            ],
            move |tape, ids| {
                let y = tape.conv2d(ids[0], ids[1], Some(ids[2]), stride, padding).unwrap();
                weighted_loss(tape, y)
            },
        );
    }
}

pub fn depthwise_conv2d_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha20Rng::seed_from_u64(1900 + seed);
        let (n, c) = (rng.gen_range(1..3usize), rng.gen_range(1..5usize));
        let hw = rng.gen_range(4..8usize);
        let k = [1, 3][rng.gen_range(0..2)];
        let stride = rng.gen_range(1..3usize);
        check_case(
            "depthwise_conv2d",
            seed,
            &[vec![n, c, hw, hw], vec![c, 1, k, k], vec![c]],
            move |tape, ids| {
                let y = tape
                    .depthwise_conv2d(ids[0], ids[1], Some(ids[2]), stride, Padding::Same)
                    .unwrap();
                weighted_loss(tape, y)
            },
        );
    }
}

pub fn conv1d_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha20Rng::seed_from_u64(2900 + seed);
        let n = rng.gen_range(1..4usize);
        let len = rng.gen_range(3..12usize);
        let k = [1, 3, 5][rng.gen_range(0..3)];
        check_case(
            "conv1d",
            seed,
            &[vec![n, 1, len], vec![1, 1, k], vec![1]],
            |tape, ids| {
                let y = tape.conv1d_same(ids[0], ids[1], Some(ids[2])).unwrap();
                weighted_loss(tape, y)
            },
        );
    }
}

pub fn dense_and_matmul_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha20Rng::seed_from_u64(3900 + seed);
        let (m, f, g) = (
            rng.gen_range(1..4usize),
            rng.gen_range(1..5usize),
            rng.gen_range(1..5usize),
        );
        check_case(
            "dense",
            seed,
            &[vec![m, f], vec![f, g], vec![g]],
            |tape, ids| {
                let y = tape.dense(ids[0], ids[1], Some(ids[2])).unwrap();
                weighted_loss(tape, y)
            },
        );
        let (b, t, d) = (
            rng.gen_range(1..3usize),
            rng.gen_range(1..4usize),
            rng.gen_range(1..4usize),
        );
        check_case(
            "bmm",
            seed,
            &[vec![b, t, d], vec![b, d, t]],
            |tape, ids| {
                let y = tape.bmm(ids[0], ids[1]).unwrap();
                weighted_loss(tape, y)
            },
        );
        check_case(
            "bmm_nt",
            seed,
            &[vec![b, t, d], vec![b, t, d]],
            |tape, ids| {
                let y = tape.bmm_nt(ids[0], ids[1]).unwrap();
                weighted_loss(tape, y)
            },
        );
    }
}

pub fn batchnorm_gradients_train_and_eval() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha20Rng::seed_from_u64(4900 + seed);
        let (n, c, hw) = (
            rng.gen_range(2..4usize),
            rng.gen_range(1..4usize),
            rng.gen_range(2..5usize),
        );
        for mode in [Mode::Train, Mode::Eval] {
            check_case(
                "batchnorm2d",
                seed,
                &[vec![n, c, hw, hw], vec![c], vec![c]],
                move |tape, ids| {
                    let mut rm = vec![0.1; tape.shape(ids[1])[0]];
                    let mut rv = vec![0.9; tape.shape(ids[1])[0]];
                    let y = tape
                        .batchnorm2d(ids[0], ids[1], ids[2], &mut rm, &mut rv, mode, 1e-3, 0.99)
                        .unwrap();
                    weighted_loss(tape, y)
                },
            );
        }
    }
}

pub fn layernorm_softmax_attention_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha20Rng::seed_from_u64(5900 + seed);
        let (rows, d) = (rng.gen_range(1..4usize), rng.gen_range(2..6usize));
        check_case(
            "layernorm",
            seed,
            &[vec![rows, d], vec![d], vec![d]],
            |tape, ids| {
                let y = tape.layernorm(ids[0], ids[1], ids[2], 1e-6).unwrap();
                weighted_loss(tape, y)
            },
        );
        check_case("softmax", seed, &[vec![rows, d]], |tape, ids| {
            let y = tape.softmax(ids[0]);
            weighted_loss(tape, y)
        });
        let (b, h, t, dh) = (
            rng.gen_range(1..3usize),
            rng.gen_range(1..3usize),
            rng.gen_range(1..4usize),
            rng.gen_range(1..4usize),
        );
        check_case(
            "scaled_dot_product_attention",
            seed,
            &[vec![b, h, t, dh], vec![b, h, t, dh], vec![b, h, t, dh]],
            |tape, ids| {
                let y = tape
                    .scaled_dot_product_attention(ids[0], ids[1], ids[2])
                    .unwrap();
                weighted_loss(tape, y)
            },
        );
    }
}

pub fn elementwise_and_broadcast_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha20Rng::seed_from_u64(6900 + seed);
        let (n, c, hw) = (
            rng.gen_range(1..3usize),
            rng.gen_range(1..4usize),
            rng.gen_range(2..5usize),
        );
        let full = vec![n, c, hw, hw];
        let gate = vec![n, c, 1, 1];
        check_case("mul_broadcast", seed, &[full.clone(), gate.clone()], |tape, ids| {
            let y = tape.mul(ids[0], ids[1]).unwrap();
            weighted_loss(tape, y)
        });
        check_case("add_sub", seed, &[full.clone(), full.clone()], |tape, ids| {
            let a = tape.add(ids[0], ids[1]).unwrap();
            let b = tape.sub(a, ids[1]).unwrap();
            let c = tape.mul_scalar(b, 1.7);
            weighted_loss(tape, c)
        });
        for (name, f) in [
            ("relu", 0usize),
            ("sigmoid", 1),
            ("swish", 2),
            ("gelu", 3),
        ] {
            check_case(name, seed, std::slice::from_ref(&full), move |tape, ids| {
                let y = match f {
                    0 => tape.relu(ids[0]),
                    1 => tape.sigmoid(ids[0]),
                    2 => tape.swish(ids[0]),
                    _ => tape.gelu(ids[0]),
                };
                weighted_loss(tape, y)
            });
        }
    }
}

pub fn pooling_and_reduction_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha20Rng::seed_from_u64(7900 + seed);
        let (n, c, hw) = (
            rng.gen_range(1..3usize),
            rng.gen_range(1..4usize),
            rng.gen_range(3..7usize),
        );
        let shape = vec![n, c, hw, hw];
        check_case("global_avg_pool2d", seed, std::slice::from_ref(&shape), |tape, ids| {
            let y = tape.global_avg_pool2d(ids[0]).unwrap();
            weighted_loss(tape, y)
        });
        check_case("global_max_pool2d", seed, std::slice::from_ref(&shape), |tape, ids| {
            let y = tape.global_max_pool2d(ids[0]).unwrap();
            weighted_loss(tape, y)
        });
        let win = rng.gen_range(1..=hw.min(3));
        let stride = rng.gen_range(1..3usize);
        check_case("avg_pool2d", seed, std::slice::from_ref(&shape), move |tape, ids| {
            let y = tape.avg_pool2d(ids[0], win, stride).unwrap();
            weighted_loss(tape, y)
        });
        check_case("max_pool2d", seed, std::slice::from_ref(&shape), move |tape, ids| {
            let y = tape.max_pool2d(ids[0], win, stride).unwrap();
            weighted_loss(tape, y)
        });
        let axis = rng.gen_range(0..4usize);
        check_case("mean_axis", seed, std::slice::from_ref(&shape), move |tape, ids| {
            let y = tape.mean_axis(ids[0], axis).unwrap();
            weighted_loss(tape, y)
        });
        check_case("max_axis", seed, std::slice::from_ref(&shape), move |tape, ids| {
            let y = tape.max_axis(ids[0], axis).unwrap();
            weighted_loss(tape, y)
        });
    }
}

pub fn shape_plumbing_and_resize_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha20Rng::seed_from_u64(8900 + seed);
        let (n, c, hw) = (
            rng.gen_range(1..3usize),
            rng.gen_range(1..4usize),
            rng.gen_range(2..6usize),
        );
        let shape = vec![n, c, hw, hw];
        // reshape -> permute -> slice -> concat -> broadcast chain
        check_case("shape_plumbing", seed, &[shape.clone(), vec![1, c, 1, 1]], |tape, ids| {
            let s = tape.shape(ids[0]).to_vec();
            let p = tape.permute(ids[0], &[0, 2, 3, 1]).unwrap();
            let r = tape.reshape(p, vec![s[0], s[2] * s[3], s[1]]).unwrap();
            let a = tape.slice(r, 1, 0, 1).unwrap();
            let b = tape.slice(r, 1, 1, s[2] * s[3] - 1).unwrap();
            let cat = tape.concat(&[a, b], 1).unwrap();
            let back = tape.reshape(cat, s.clone()).unwrap();
            let g = tape.broadcast_to(ids[1], s).unwrap();
            let y = tape.mul(back, g).unwrap();
            weighted_loss(tape, y)
        });
        let out_hw = rng.gen_range(2..8usize);
        check_case("resize_bilinear", seed, std::slice::from_ref(&shape), move |tape, ids| {
            let y = tape.resize_bilinear(ids[0], out_hw, out_hw).unwrap();
            weighted_loss(tape, y)
        });
        let k = rng.gen_range(1..5usize);
        let targets: Vec<f64> = (0..n * k).map(|i| ((i * 7) % 2) as f64).collect();
        check_case("bce_with_logits", seed, &[vec![n, k]], move |tape, ids| {
            tape.bce_with_logits(ids[0], &targets).unwrap()
        });
    }
}

// ── composite blocks ────────────────────────────────────────────────────

/// Checks a parameterized layer: inputs are x plus every parameter entry.
fn check_block<F>(name: &str, seed: u64, x_shape: Vec<usize>, params: ParamSet<f64>, forward: F)
where
    F: Fn(&mut FwdCtx<f64>, NodeId) -> NodeId,
{
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0xB10C);
    let x = gen_data(&mut rng, numel(&x_shape));
    let mut shapes = vec![x_shape.clone()];
    let mut inputs = vec![x];
    for e in params.entries() {
        shapes.push(e.shape.clone());
        inputs.push(e.data.iter().map(|v| v.to_f64c()).collect());
    }
    let run = |data: &[Vec<f64>]| -> f64 {
        let mut p = params.clone();
        for (e, d) in p.entries_mut().iter_mut().zip(data[1..].iter()) {
            e.data.clone_from(d);
        }
        let mut tape = Tape::new();
        let binding = p.bind(&mut tape);
        let xid = tape.leaf_from(x_shape.clone(), data[0].clone()).unwrap();
        let mut ctx = FwdCtx {
            tape: &mut tape,
            params: &mut p,
            binding: &binding,
            mode: Mode::Train,
            bn_eps: 1e-3,
            bn_momentum: 0.99,
        };
        let y = forward(&mut ctx, xid);
        let loss = weighted_loss(ctx.tape, y);
        tape.data(loss)[0]
    };
    // analytic pass
    let mut p = params.clone();
    for (e, d) in p.entries_mut().iter_mut().zip(inputs[1..].iter()) {
        e.data.clone_from(d);
    }
    let mut tape = Tape::new();
    let binding = p.bind(&mut tape);
    let xid = tape.leaf_from(x_shape.clone(), inputs[0].clone()).unwrap();
    let param_nodes = binding.nodes().to_vec();
    let mut ctx = FwdCtx {
        tape: &mut tape,
        params: &mut p,
        binding: &binding,
        mode: Mode::Train,
        bn_eps: 1e-3,
        bn_momentum: 0.99,
    };
    let y = forward(&mut ctx, xid);
    let loss = weighted_loss(&mut tape, y);
    tape.backward(loss).unwrap();
    let mut analytic = vec![tape
        .grad(xid)
        .map(|g| g.to_vec())
        .unwrap_or_else(|| vec![0.0; numel(&x_shape)])];
    for (node, shape) in param_nodes.iter().zip(shapes[1..].iter()) {
        analytic.push(
            tape.grad(*node)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; numel(shape)]),
        );
    }
    let report = check_grads(&inputs, &analytic, FD_EPS, run);
    assert!(
        report.passes(TOL),
        "{name} seed {seed}: max rel err {} at input {} index {}",
        report.max_rel_err,
        report.worst_input,
        report.worst_index
    );
}

fn attention_cycle(seed: u64) -> AttentionSpec {
    let kinds = [
        AttentionKind::None,
        AttentionKind::Se,
        AttentionKind::Eca,
        AttentionKind::Cbam,
        AttentionKind::Coord,
    ];
    let mut spec = AttentionSpec::new(kinds[(seed % 5) as usize]);
    spec.se_reduction = 2;
    spec.coord_reduction = 4;
    spec.cbam_spatial_kernel = 3;
    spec
}

pub fn wrn_block_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha20Rng::seed_from_u64(100 + seed);
        let cin = rng.gen_range(2..5usize);
        let cout = rng.gen_range(2..5usize);
        let stride = rng.gen_range(1..3usize);
        let mut spec = BlockSpec::new(BlockKind::Wrn, cin, cout, stride);
        spec.attention = attention_cycle(seed);
        let mut params = ParamSet::<f64>::new();
        let block = WrnBlock::build(&mut params, &mut rng, "b", &spec).unwrap();
        let hw = rng.gen_range(4..6usize);
        check_block("wrn_block", seed, vec![2, cin, hw, hw], params, move |ctx, x| {
            block.forward(ctx, x).unwrap()
        });
    }
}

pub fn mbconv6_gradients_with_every_attention_kind() {
    let kinds = [
        AttentionKind::Se,
        AttentionKind::Eca,
        AttentionKind::Cbam,
        AttentionKind::Coord,
    ];
    for (i, kind) in kinds.iter().enumerate() {
        for seed in 0..SEEDS / 4 {
            let seed = (i as u64) * 100 + seed;
            let mut rng = ChaCha20Rng::seed_from_u64(7000 + seed);
            let cin = rng.gen_range(2..4usize);
            let cout = rng.gen_range(2..4usize);
            let stride = rng.gen_range(1..3usize);
            let mut spec = BlockSpec::new(BlockKind::MbConv6, cin, cout, stride);
            spec.attention = AttentionSpec::new(*kind);
            spec.attention.se_reduction = 2;
            spec.attention.coord_reduction = 4;
            spec.attention.cbam_spatial_kernel = 3;
            let mut params = ParamSet::<f64>::new();
            let block = MbConvBlock::build(&mut params, &mut rng, "m", &spec).unwrap();
            let hw = rng.gen_range(4..6usize);
            check_block(
                &format!("mbconv6-{kind:?}"),
                seed,
                vec![1, cin, hw, hw],
                params,
                move |ctx, x| block.forward(ctx, x).unwrap(),
            );
        }
    }
}

pub fn ghost_conv_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha20Rng::seed_from_u64(300 + seed);
        let cin = rng.gen_range(1..4usize);
        let ratio = [1usize, 2][rng.gen_range(0..2)];
        let cout = ratio * rng.gen_range(1..4usize);
        let stride = rng.gen_range(1..3usize);
        let mut params = ParamSet::<f64>::new();
        let ghost =
            GhostConv::build(&mut params, &mut rng, "g", cin, cout, 3, stride, ratio, 3).unwrap();
        let hw = rng.gen_range(4..6usize);
        check_block("ghost_conv", seed, vec![2, cin, hw, hw], params, move |ctx, x| {
            ghost.forward(ctx, x).unwrap()
        });
    }
}

pub fn mixer_layer_gradients() {
    // one full tiny mixer (embedding + a single mixer layer + head)
    use szoo_core::arch::{FamilySpec, Model, ModelConfig};
    for seed in 0..SEEDS {
        let mut cfg = ModelConfig::new(FamilySpec::MlpMixer {
            patch: 2,
            hidden: 5,
            layers: 1,
            token_dim: 3,
            channel_dim: 4,
        });
        cfg.resolution = 4;
        cfg.in_channels = 2;
        cfg.num_classes = 2;
        let model = Model::<f64>::build(cfg, seed).unwrap();
        let params = model.params.clone();
        let model = std::cell::RefCell::new(model);
        check_block("mixer_layer", seed, vec![1, 2, 4, 4], params, move |ctx, x| {
            let mut m = model.borrow_mut();
            m.params.entries_mut().clone_from_slice(ctx.params.entries());
            let traced = m
                .forward_traced(ctx.tape, ctx.binding, x, Mode::Train)
                .unwrap();
            traced.logits
        });
    }
}

pub fn transformer_layer_gradients() {
    use szoo_core::arch::{FamilySpec, Model, ModelConfig};
    for seed in 0..SEEDS {
        let mut cfg = ModelConfig::new(FamilySpec::Vit {
            patch: 2,
            layers: 1,
            heads: 2,
            hidden: 6,
            mlp_ratio: 2,
            use_class_token: seed % 2 == 0,
        });
        cfg.resolution = 4;
        cfg.in_channels = 2;
        cfg.num_classes = 2;
        let model = Model::<f64>::build(cfg, seed).unwrap();
        let params = model.params.clone();
        let model = std::cell::RefCell::new(model);
        check_block(
            "transformer_layer",
            seed,
            vec![1, 2, 4, 4],
            params,
            move |ctx, x| {
                let mut m = model.borrow_mut();
                m.params.entries_mut().clone_from_slice(ctx.params.entries());
                let traced = m
                    .forward_traced(ctx.tape, ctx.binding, x, Mode::Train)
                    .unwrap();
                traced.logits
            },
        );
    }
}

/// Runs every operation and composite-block check.
pub fn run_all() {
    conv2d_gradients();
    depthwise_conv2d_gradients();
    conv1d_gradients();
    dense_and_matmul_gradients();
    batchnorm_gradients_train_and_eval();
    layernorm_softmax_attention_gradients();
    elementwise_and_broadcast_gradients();
    pooling_and_reduction_gradients();
    shape_plumbing_and_resize_gradients();
    wrn_block_gradients();
    mbconv6_gradients_with_every_attention_kind();
    ghost_conv_gradients();
    mixer_layer_gradients();
    transformer_layer_gradients();
}
