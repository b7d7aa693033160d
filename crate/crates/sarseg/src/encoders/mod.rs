//! The four encoder roles: dense RGB, dense SAR (ViT-style with multi-scale
//! block taps), a global visual encoder with a class token, and a byte-level
//! text encoder producing per-class embeddings.

mod text;
mod vit;

pub use text::{encode_text, init_text_encoder, load_external_embeddings, text_forward};
pub use vit::{
    dense_forward, encode_dense, encode_global, global_forward, init_dense_encoder,
    init_global_encoder, DenseTaps, GlobalOutput,
};

use crate::tensor::Tensor;

/// Per-tap dense token features from a ViT-style encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePyramid {
    /// Three `[h*w, d]` token matrices, shallowest tap first.
    pub taps: [Tensor; 3],
    /// Token grid (h, w) = (H/patch, W/patch).
    pub grid: (usize, usize),
}

/// Unit-norm global embedding, `[1, d_g]`.
pub type GlobalEmbedding = Tensor;

/// Unit-norm per-class text embeddings, `[num_classes, d_g]`, rows in
/// vocabulary order.
pub type TextEmbeddingMatrix = Tensor;
