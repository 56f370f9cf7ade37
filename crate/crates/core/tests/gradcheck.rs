//! Finite-difference verification of every differentiable operation and of
//! the composite blocks, in f64 across seeded random shapes.

mod common;

use common::gradchecks as g;

#[test]
fn conv2d_gradients() {
    g::conv2d_gradients();
}

#[test]
fn depthwise_conv2d_gradients() {
    g::depthwise_conv2d_gradients();
}

#[test]
fn conv1d_gradients() {
    g::conv1d_gradients();
}

#[test]
fn dense_and_matmul_gradients() {
    g::dense_and_matmul_gradients();
}

#[test]
fn batchnorm_gradients_train_and_eval() {
    g::batchnorm_gradients_train_and_eval();
}

#[test]
fn layernorm_softmax_attention_gradients() {
    g::layernorm_softmax_attention_gradients();
}

#[test]
fn elementwise_and_broadcast_gradients() {
    g::elementwise_and_broadcast_gradients();
}

#[test]
fn pooling_and_reduction_gradients() {
    g::pooling_and_reduction_gradients();
}

#[test]
fn shape_plumbing_and_resize_gradients() {
    g::shape_plumbing_and_resize_gradients();
}

#[test]
fn wrn_block_gradients() {
    g::wrn_block_gradients();
}

#[test]
fn mbconv6_gradients_with_every_attention_kind() {
    g::mbconv6_gradients_with_every_attention_kind();
}

#[test]
fn ghost_conv_gradients() {
    g::ghost_conv_gradients();
}

#[test]
fn mixer_layer_gradients() {
    g::mixer_layer_gradients();
}

#[test]
fn transformer_layer_gradients() {
    g::transformer_layer_gradients();
}
