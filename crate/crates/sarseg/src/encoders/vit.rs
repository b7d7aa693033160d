//! ViT-style visual encoders: patch embedding, learned positional
//! embeddings, pre-norm transformer blocks, multi-scale block taps, and an
//! optional class token for the global variant.

use rand::Rng;

use super::FeaturePyramid;
use crate::config::{tap_indices, DenseEncoderConfig, GlobalEncoderConfig};
use crate::graph::{Graph, NodeId};
use crate::params::{BoundParams, ParamStore};
use crate::tensor::Tensor;

const LN_EPS: f64 = 1e-5;

pub(crate) fn init_block(store: &mut ParamStore, prefix: &str, d: usize, rng: &mut impl Rng) {
    let hidden = 4 * d;
    store.insert(format!("{prefix}.ln1.g"), Tensor::full(&[1, d], 1.0));
    store.insert(format!("{prefix}.ln1.b"), Tensor::zeros(&[1, d]));
    for name in ["wq", "wk", "wv", "wo"] {
        store.insert(
            format!("{prefix}.attn.{name}"),
            Tensor::fan_in_uniform(&[d, d], d, rng),
        );
    }
    for name in ["bq", "bk", "bv", "bo"] {
        store.insert(format!("{prefix}.attn.{name}"), Tensor::zeros(&[1, d]));
    }
    store.insert(format!("{prefix}.ln2.g"), Tensor::full(&[1, d], 1.0));
    store.insert(format!("{prefix}.ln2.b"), Tensor::zeros(&[1, d]));
    store.insert(format!("{prefix}.mlp.w1"), Tensor::fan_in_uniform(&[d, hidden], d, rng));
    store.insert(format!("{prefix}.mlp.b1"), Tensor::zeros(&[1, hidden]));
    store.insert(format!("{prefix}.mlp.w2"), Tensor::fan_in_uniform(&[hidden, d], hidden, rng));
    store.insert(format!("{prefix}.mlp.b2"), Tensor::zeros(&[1, d]));
}

/// One pre-norm transformer block over `[n, d]` tokens.
pub(crate) fn block_forward(
    g: &mut Graph,
    bound: &BoundParams,
    prefix: &str,
    tokens: NodeId,
    heads: usize,
) -> NodeId {
    let d = g.value(tokens).cols();
    let dh = d / heads;
    let p = |name: &str| bound.id(&format!("{prefix}.{name}"));

    let normed = g.layer_norm(tokens, p("ln1.g"), p("ln1.b"), LN_EPS);
    let q = g.matmul(normed, p("attn.wq"));
    let q = g.add_bias(q, p("attn.bq"));
    let k = g.matmul(normed, p("attn.wk"));
    let k = g.add_bias(k, p("attn.bk"));
    let v = g.matmul(normed, p("attn.wv"));
    let v = g.add_bias(v, p("attn.bv"));

    let mut head_outputs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice_cols(q, h * dh, dh);
        let kh = g.slice_cols(k, h * dh, dh);
        let vh = g.slice_cols(v, h * dh, dh);
        let scores = g.matmul_nt(qh, kh);
        let scores = g.scale(scores, 1.0 / (dh as f64).sqrt());
        let attn = g.softmax_rows(scores);
        head_outputs.push(g.matmul(attn, vh));
    }
    let merged = g.concat_cols(&head_outputs);
    let projected = g.matmul(merged, p("attn.wo"));
    let projected = g.add_bias(projected, p("attn.bo"));
    let tokens = g.add(tokens, projected);

    let normed = g.layer_norm(tokens, p("ln2.g"), p("ln2.b"), LN_EPS);
    let hidden = g.matmul(normed, p("mlp.w1"));
    let hidden = g.add_bias(hidden, p("mlp.b1"));
    let hidden = g.gelu(hidden);
    let out = g.matmul(hidden, p("mlp.w2"));
    let out = g.add_bias(out, p("mlp.b2"));
    g.add(tokens, out)
}

/// Create parameters for a dense encoder (no class token) under `prefix`.
pub fn init_dense_encoder(
    store: &mut ParamStore,
    prefix: &str,
    cfg: &DenseEncoderConfig,
    in_channels: usize,
    image_hw: (usize, usize),
    rng: &mut impl Rng,
) {
    let d = cfg.embed_dim;
    let patch_dim = in_channels * cfg.patch_size * cfg.patch_size;
    let tokens = (image_hw.0 / cfg.patch_size) * (image_hw.1 / cfg.patch_size);
    store.insert(format!("{prefix}.patch.w"), Tensor::fan_in_uniform(&[patch_dim, d], patch_dim, rng));
    store.insert(format!("{prefix}.patch.b"), Tensor::zeros(&[1, d]));
    store.insert(format!("{prefix}.pos"), Tensor::small_uniform(&[tokens, d], 0.02, rng));
    for i in 0..cfg.depth {
        init_block(store, &format!("{prefix}.block{i}"), d, rng);
    }
}

/// Create parameters for the global encoder (class token + projection).
pub fn init_global_encoder(
    store: &mut ParamStore,
    prefix: &str,
    cfg: &GlobalEncoderConfig,
    in_channels: usize,
    image_hw: (usize, usize),
    rng: &mut impl Rng,
) {
    let d = cfg.embed_dim;
    let patch_dim = in_channels * cfg.patch_size * cfg.patch_size;
    let tokens = (image_hw.0 / cfg.patch_size) * (image_hw.1 / cfg.patch_size);
    store.insert(format!("{prefix}.patch.w"), Tensor::fan_in_uniform(&[patch_dim, d], patch_dim, rng));
    store.insert(format!("{prefix}.patch.b"), Tensor::zeros(&[1, d]));
    store.insert(format!("{prefix}.cls"), Tensor::small_uniform(&[1, d], 0.02, rng));
    store.insert(format!("{prefix}.pos"), Tensor::small_uniform(&[tokens + 1, d], 0.02, rng));
    for i in 0..cfg.depth {
        init_block(store, &format!("{prefix}.block{i}"), d, rng);
    }
    store.insert(format!("{prefix}.ln_post.g"), Tensor::full(&[1, d], 1.0));
    store.insert(format!("{prefix}.ln_post.b"), Tensor::zeros(&[1, d]));
    store.insert(format!("{prefix}.proj"), Tensor::fan_in_uniform(&[d, cfg.output_dim], d, rng));
}

/// Graph-level dense forward: three tap token matrices plus the grid.
pub struct DenseTaps {
    pub taps: [NodeId; 3],
    pub grid: (usize, usize),
}

pub fn dense_forward(
    g: &mut Graph,
    bound: &BoundParams,
    prefix: &str,
    cfg: &DenseEncoderConfig,
    image: NodeId,
) -> DenseTaps {
    let shape = g.value(image).shape().to_vec();
    let (h, w) = (shape[1], shape[2]);
    assert!(
        h % cfg.patch_size == 0 && w % cfg.patch_size == 0,
        "image {h}x{w} not divisible by patch size {}",
        cfg.patch_size
    );
    let grid = (h / cfg.patch_size, w / cfg.patch_size);
    let patches = g.im2patches(image, cfg.patch_size);
    let tokens = g.matmul(patches, bound.id(&format!("{prefix}.patch.w")));
    let tokens = g.add_bias(tokens, bound.id(&format!("{prefix}.patch.b")));
    let mut x = g.add(tokens, bound.id(&format!("{prefix}.pos")));

    let taps = tap_indices(cfg.tap_fractions, cfg.depth).expect("validated tap fractions");
    let mut out: Vec<NodeId> = Vec::with_capacity(3);
    for i in 0..cfg.depth {
        x = block_forward(g, bound, &format!("{prefix}.block{i}"), x, cfg.heads);
        if taps.contains(&(i + 1)) {
            out.push(x);
        }
    }
    assert_eq!(out.len(), 3, "tap indices {taps:?} must all be hit");
    DenseTaps { taps: [out[0], out[1], out[2]], grid }
}

/// Graph-level global forward: unit-norm embedding plus patch-token taps
/// (class token excluded) for the optional global alignment stage.
pub struct GlobalOutput {
    /// `[1, d_g]`, unit norm.
    pub embedding: NodeId,
    /// Patch-token matrices `[h*w, d]` from the same tap rule as dense.
    pub taps: [NodeId; 3],
}

pub fn global_forward(
    g: &mut Graph,
    bound: &BoundParams,
    prefix: &str,
    cfg: &GlobalEncoderConfig,
    image: NodeId,
) -> GlobalOutput {
    let shape = g.value(image).shape().to_vec();
    let (h, w) = (shape[1], shape[2]);
    let n = (h / cfg.patch_size) * (w / cfg.patch_size);
    let patches = g.im2patches(image, cfg.patch_size);
    let tokens = g.matmul(patches, bound.id(&format!("{prefix}.patch.w")));
    let tokens = g.add_bias(tokens, bound.id(&format!("{prefix}.patch.b")));
    let with_cls = g.concat_rows(&[bound.id(&format!("{prefix}.cls")), tokens]);
    let mut x = g.add(with_cls, bound.id(&format!("{prefix}.pos")));

    let fractions = [1.0 / 3.0, 2.0 / 3.0, 1.0];
    let taps = tap_indices(fractions, cfg.depth).unwrap_or([1, 1, cfg.depth]);
    let mut tap_nodes: Vec<NodeId> = Vec::with_capacity(3);
    for i in 0..cfg.depth {
        x = block_forward(g, bound, &format!("{prefix}.block{i}"), x, cfg.heads);
        if taps.contains(&(i + 1)) {
            tap_nodes.push(g.slice_rows(x, 1, n));
        }
    }
    while tap_nodes.len() < 3 {
        let last = *tap_nodes.last().expect("depth >= 1");
        tap_nodes.push(last);
    }
    let normed = g.layer_norm(
        x,
        bound.id(&format!("{prefix}.ln_post.g")),
        bound.id(&format!("{prefix}.ln_post.b")),
        LN_EPS,
    );
    let cls = g.slice_rows(normed, 0, 1);
    let projected = g.matmul(cls, bound.id(&format!("{prefix}.proj")));
    let embedding = g.l2_normalize_rows(projected);
    GlobalOutput { embedding, taps: [tap_nodes[0], tap_nodes[1], tap_nodes[2]] }
}

/// Value-level dense forward for inspection and tests.
pub fn encode_dense(
    store: &ParamStore,
    prefix: &str,
    cfg: &DenseEncoderConfig,
    image: &Tensor,
) -> FeaturePyramid {
    let mut g = Graph::new();
    let bound = BoundParams::bind(store, &mut g);
    let image = g.leaf(image.clone());
    let out = dense_forward(&mut g, &bound, prefix, cfg, image);
    FeaturePyramid {
        taps: [
            g.value(out.taps[0]).clone(),
            g.value(out.taps[1]).clone(),
            g.value(out.taps[2]).clone(),
        ],
        grid: out.grid,
    }
}

/// Value-level global forward.
pub fn encode_global(
    store: &ParamStore,
    prefix: &str,
    cfg: &GlobalEncoderConfig,
    image: &Tensor,
) -> Tensor {
    let mut g = Graph::new();
    let bound = BoundParams::bind(store, &mut g);
    let image = g.leaf(image.clone());
    let out = global_forward(&mut g, &bound, prefix, cfg, image);
    g.value(out.embedding).clone()
}
