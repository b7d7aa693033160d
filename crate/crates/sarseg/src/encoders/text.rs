//! Byte-level text encoder: render one prompt per class, run a tiny
//! transformer over the bytes, mean-pool, project, and L2-normalize.
//! External pretrained embeddings can be loaded from CSV instead.

use std::path::Path;

use rand::Rng;

use super::vit::block_forward;
use super::TextEmbeddingMatrix;
use crate::config::TextEncoderConfig;
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::params::{BoundParams, ParamStore};
use crate::tensor::Tensor;
use crate::vocab::ClassVocabulary;

pub fn init_text_encoder(
    store: &mut ParamStore,
    prefix: &str,
    cfg: &TextEncoderConfig,
    output_dim: usize,
    rng: &mut impl Rng,
) {
    let d = cfg.embed_dim;
    store.insert(format!("{prefix}.embed"), Tensor::small_uniform(&[256, d], 0.1, rng));
    store.insert(format!("{prefix}.pos"), Tensor::small_uniform(&[cfg.max_len, d], 0.02, rng));
    for i in 0..cfg.depth {
        super::vit::init_block(store, &format!("{prefix}.block{i}"), d, rng);
    }
    store.insert(format!("{prefix}.proj"), Tensor::fan_in_uniform(&[d, output_dim], d, rng));
}

/// Graph-level forward: unit-norm rows for classes `[0, num_classes)` of the
/// vocabulary, in vocabulary order.
pub fn text_forward(
    g: &mut Graph,
    bound: &BoundParams,
    prefix: &str,
    cfg: &TextEncoderConfig,
    vocab: &ClassVocabulary,
    num_classes: usize,
) -> NodeId {
    assert!(num_classes >= 1 && num_classes <= vocab.len());
    let rows: Vec<NodeId> = (0..num_classes)
        .map(|class| {
            let prompt = vocab.prompt(class);
            let bytes: Vec<usize> =
                prompt.bytes().take(cfg.max_len).map(|b| b as usize).collect();
            let n = bytes.len();
            let tokens = g.embedding(bound.id(&format!("{prefix}.embed")), bytes);
            let pos = g.slice_rows(bound.id(&format!("{prefix}.pos")), 0, n);
            let mut x = g.add(tokens, pos);
            for i in 0..cfg.depth {
                x = block_forward(g, bound, &format!("{prefix}.block{i}"), x, cfg.heads);
            }
            let pooled = g.mean_rows(x);
            let projected = g.matmul(pooled, bound.id(&format!("{prefix}.proj")));
            g.l2_normalize_rows(projected)
        })
        .collect();
    g.concat_rows(&rows)
}

/// Value-level text forward over the full vocabulary.
pub fn encode_text(
    store: &ParamStore,
    prefix: &str,
    cfg: &TextEncoderConfig,
    vocab: &ClassVocabulary,
) -> TextEmbeddingMatrix {
    let mut g = Graph::new();
    let bound = BoundParams::bind(store, &mut g);
    let out = text_forward(&mut g, &bound, prefix, cfg, vocab, vocab.len());
    g.value(out).clone()
}

/// Load per-class embeddings from CSV: a `dim=<d>` header line, then one
/// `class_name,v1,...,vd` row per class. Rows are bound by vocabulary lookup
/// (not file order) and re-normalized to unit norm.
pub fn load_external_embeddings(
    path: &Path,
    vocab: &ClassVocabulary,
    expected_dim: usize,
) -> Result<TextEmbeddingMatrix> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read embeddings {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Data("empty embeddings file".into()))?;
    let dim: usize = header
        .strip_prefix("dim=")
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| Error::Data(format!("bad embeddings header {header:?}, want dim=<d>")))?;
    if dim != expected_dim {
        return Err(Error::Data(format!(
            "embeddings have dim {dim}, model expects {expected_dim}"
        )));
    }

    let mut by_name: Vec<(String, Vec<f64>)> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let name = parts
            .next()
            .ok_or_else(|| Error::Data(format!("line {}: missing class name", lineno + 2)))?
            .trim()
            .to_string();
        let values: Vec<f64> = parts
            .map(|p| {
                p.trim().parse().map_err(|_| {
                    Error::Data(format!("line {}: non-numeric value {p:?}", lineno + 2))
                })
            })
            .collect::<Result<_>>()?;
        if values.len() != dim {
            return Err(Error::Data(format!(
                "line {}: {} values for declared dim {dim}",
                lineno + 2,
                values.len()
            )));
        }
        by_name.push((name, values));
    }

    let mut out = Tensor::zeros(&[vocab.len(), dim]);
    for (class, entry) in vocab.classes.iter().enumerate() {
        let row = by_name
            .iter()
            .find(|(name, _)| *name == entry.name)
            .ok_or_else(|| Error::Data(format!("embeddings missing class \"{}\"", entry.name)))?;
        let norm = row.1.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= 1e-300 {
            return Err(Error::Data(format!("class \"{}\" has a zero embedding", entry.name)));
        }
        for (c, v) in row.1.iter().enumerate() {
            out.set2(class, c, v / norm);
        }
    }
    Ok(out)
}
