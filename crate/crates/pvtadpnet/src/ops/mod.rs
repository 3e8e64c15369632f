//! Differentiable tensor ops recorded on the tape.

pub mod conv;
pub mod elementwise;
pub mod gemm;
pub mod linalg;
pub mod norm;
pub mod resample;
pub mod shape;

pub use conv::{conv2d, conv2d_out_dim, Conv2dSpec};
pub use elementwise::{
    add, add_const, clamp, div, gelu, leaky_relu, ln, mean_all, mul, neg, relu, scale,
    sigmoid, sub, sum_all,
};
pub use linalg::{add_bias_last, linear, matmul, matmul_nt, scale_channels};
pub use norm::{batch_norm2d, layer_norm, softmax_last};
pub use resample::{avg_pool_down, global_avg_pool, upsample_bilinear_2x};
pub use shape::{concat_channels, merge_heads, nchw_to_tokens, pad2d, split_heads, tokens_to_nchw};
