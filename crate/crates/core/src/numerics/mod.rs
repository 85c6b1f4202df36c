//! Dense f32 tensors, row-wise kernels and deterministic randomness.

mod kernels;
mod rng;
mod tensor;

pub use kernels::{
    cosine_similarity, gelu, layer_norm, matmul, matmul_transposed, softmax_rows, COSINE_EPS,
};
pub use rng::{seeded_gaussian, Rng};
pub use tensor::Tensor;
