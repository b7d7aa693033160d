//! Stage-1 cross-modal alignment losses.
//!
//! Per tap, token maps are mean-pooled and L2-normalized; matched SAR/RGB
//! pairs are pulled together with InfoNCE against in-batch negatives (or
//! with MSE/L1 regression), and the per-tap losses are averaged.

use crate::config::LossKind;
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::tensor::Tensor;

/// Mean over the token grid, then L2-normalize: `[n,d] -> [1,d]` unit norm.
pub fn pool_tap(g: &mut Graph, tap: NodeId) -> NodeId {
    let pooled = g.mean_rows(tap);
    g.l2_normalize_rows(pooled)
}

/// Value-level pooling of a three-tap pyramid into a `[3,d]` matrix.
pub fn pool_taps(taps: &[Tensor; 3]) -> Tensor {
    let mut g = Graph::new();
    let rows: Vec<NodeId> = taps
        .iter()
        .map(|t| {
            let leaf = g.leaf(t.clone());
            pool_tap(&mut g, leaf)
        })
        .collect();
    let out = g.concat_rows(&rows);
    g.value(out).clone()
}

/// One-directional InfoNCE over unit-norm rows: anchors `[B,d]` against
/// positives `[B,d]`, where the positives of the other rows serve as
/// negatives. `B = 1` has no negatives and yields exactly 0.
pub fn infonce_loss(g: &mut Graph, anchors: NodeId, positives: NodeId, tau: f64) -> Result<NodeId> {
    if tau <= 0.0 {
        return Err(Error::Config(format!("temperature {tau} must be > 0")));
    }
    let b = g.value(anchors).rows();
    assert_eq!(b, g.value(positives).rows(), "anchor/positive batch mismatch");
    let sims = g.matmul_nt(anchors, positives);
    let logits = g.scale(sims, 1.0 / tau);
    let lse = g.logsumexp_rows(logits);
    let pos = g.diag(logits);
    let per_anchor = g.sub(lse, pos);
    Ok(g.mean_all(per_anchor))
}

/// Mean squared element-wise difference.
pub fn mse_align_loss(g: &mut Graph, a: NodeId, b: NodeId) -> NodeId {
    let diff = g.sub(a, b);
    let sq = g.mul(diff, diff);
    g.mean_all(sq)
}

/// Mean absolute element-wise difference.
pub fn l1_align_loss(g: &mut Graph, a: NodeId, b: NodeId) -> NodeId {
    let diff = g.sub(a, b);
    let ab = g.abs(diff);
    g.mean_all(ab)
}

/// Pooled per-tap feature pairs for a batch: `sar[tap]` / `rgb[tap]` are
/// `[B,d]` matrices of unit-norm rows.
pub struct AlignmentBatch {
    pub sar: [NodeId; 3],
    pub rgb: [NodeId; 3],
}

impl AlignmentBatch {
    /// Stack per-sample pooled taps (`[1,d]` nodes) into `[B,d]` matrices.
    pub fn from_pooled(
        g: &mut Graph,
        sar_pooled: &[[NodeId; 3]],
        rgb_pooled: &[[NodeId; 3]],
    ) -> Self {
        assert_eq!(sar_pooled.len(), rgb_pooled.len());
        assert!(!sar_pooled.is_empty());
        let stack = |g: &mut Graph, pooled: &[[NodeId; 3]], tap: usize| {
            let rows: Vec<NodeId> = pooled.iter().map(|p| p[tap]).collect();
            g.concat_rows(&rows)
        };
        AlignmentBatch {
            sar: [
                stack(g, sar_pooled, 0),
                stack(g, sar_pooled, 1),
                stack(g, sar_pooled, 2),
            ],
            rgb: [
                stack(g, rgb_pooled, 0),
                stack(g, rgb_pooled, 1),
                stack(g, rgb_pooled, 2),
            ],
        }
    }
}

/// Arithmetic mean of the per-tap loss over the three taps.
pub fn multiscale_alignment_loss(
    g: &mut Graph,
    batch: &AlignmentBatch,
    loss: LossKind,
    tau: f64,
) -> Result<NodeId> {
    let mut per_tap = Vec::with_capacity(3);
    for tap in 0..3 {
        let node = match loss {
            LossKind::Infonce => infonce_loss(g, batch.sar[tap], batch.rgb[tap], tau)?,
            LossKind::Mse => mse_align_loss(g, batch.sar[tap], batch.rgb[tap]),
            LossKind::L1 => l1_align_loss(g, batch.sar[tap], batch.rgb[tap]),
        };
        per_tap.push(node);
    }
    let sum = g.add_n(&per_tap);
    Ok(g.scale(sum, 1.0 / 3.0))
}

/// Mean cosine similarity of matched minus mismatched pooled pairs, averaged
/// over taps; the alignment gap that stage 1 is expected to open.
pub fn alignment_gap(sar_pooled: &[Tensor], rgb_pooled: &[Tensor]) -> f64 {
    assert_eq!(sar_pooled.len(), rgb_pooled.len());
    let n = sar_pooled.len();
    assert!(n >= 2, "gap needs at least two pairs");
    let mut matched = 0.0;
    let mut mismatched = 0.0;
    let mut mismatch_count = 0usize;
    for i in 0..n {
        let si = &sar_pooled[i];
        for j in 0..n {
            let rj = &rgb_pooled[j];
            // mean over taps of row-wise dot products
            let taps = si.rows();
            let mut cos = 0.0;
            for t in 0..taps {
                let mut dot = 0.0;
                for c in 0..si.cols() {
                    dot += si.at2(t, c) * rj.at2(t, c);
                }
                cos += dot;
            }
            cos /= taps as f64;
            if i == j {
                matched += cos;
            } else {
                mismatched += cos;
                mismatch_count += 1;
            }
        }
    }
    matched / n as f64 - mismatched / mismatch_count as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_rows(rows: Vec<Vec<f64>>) -> Tensor {
        let n = rows.len();
        let d = rows[0].len();
        let mut t = Tensor::new(vec![n, d], rows.into_iter().flatten().collect());
        for r in 0..n {
            let norm: f64 = (0..d).map(|c| t.at2(r, c).powi(2)).sum::<f64>().sqrt();
            for c in 0..d {
                let v = t.at2(r, c) / norm;
                t.set2(r, c, v);
            }
        }
        t
    }

    fn infonce_value(anchors: Tensor, positives: Tensor, tau: f64) -> f64 {
        let mut g = Graph::new();
        let a = g.leaf(anchors);
        let p = g.leaf(positives);
        let loss = infonce_loss(&mut g, a, p, tau).unwrap();
        g.value(loss).item()
    }

    #[test]
    fn single_pair_has_no_negatives_and_zero_loss() {
        let a = unit_rows(vec![vec![1.0, 0.0]]);
        let p = unit_rows(vec![vec![0.6, 0.8]]);
        assert_eq!(infonce_value(a, p, 0.07), 0.0);
    }

    #[test]
    fn closed_form_two_pair_values() {
        // Anchor 0 aligned with positive 0 (similarity 1) and orthogonal to
        // positive 1 (similarity 0); same pattern for anchor 1.
        let a = unit_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let p = unit_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let tau1 = infonce_value(a.clone(), p.clone(), 1.0);
        assert!((tau1 - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-9, "{tau1}");
        let tau_half = infonce_value(a, p, 0.5);
        assert!((tau_half - (1.0 + (-2.0f64).exp()).ln()).abs() < 1e-9, "{tau_half}");
    }

    #[test]
    fn b2_infonce_equals_direct_softmax_cross_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rand_unit = |rng: &mut ChaCha8Rng| {
            let v: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            v
        };
        let a = unit_rows(vec![rand_unit(&mut rng), rand_unit(&mut rng)]);
        let p = unit_rows(vec![rand_unit(&mut rng), rand_unit(&mut rng)]);
        let tau = 0.3;
        let loss = infonce_value(a.clone(), p.clone(), tau);

        // Oracle: two-class softmax cross-entropy per anchor.
        let mut oracle = 0.0;
        for i in 0..2 {
            let mut logits = [0.0; 2];
            for j in 0..2 {
                let mut dot = 0.0;
                for c in 0..4 {
                    dot += a.at2(i, c) * p.at2(j, c);
                }
                logits[j] = dot / tau;
            }
            let max = logits[0].max(logits[1]);
            let lse = max + ((logits[0] - max).exp() + (logits[1] - max).exp()).ln();
            oracle += lse - logits[i];
        }
        oracle /= 2.0;
        assert!((loss - oracle).abs() < 1e-12, "{loss} vs {oracle}");
    }

    #[test]
    fn infonce_is_rotation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = 4;
        // Random orthogonal matrix via Gram-Schmidt on a random basis.
        let mut basis: Vec<Vec<f64>> = (0..d)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        for i in 0..d {
            for j in 0..i {
                let dot: f64 = (0..d).map(|c| basis[i][c] * basis[j][c]).sum();
                for c in 0..d {
                    basis[i][c] -= dot * basis[j][c];
                }
            }
            let norm: f64 = basis[i].iter().map(|v| v * v).sum::<f64>().sqrt();
            for c in 0..d {
                basis[i][c] /= norm;
            }
        }
        let rot = Tensor::new(vec![d, d], basis.into_iter().flatten().collect());

        let a = unit_rows(vec![
            vec![0.3, -0.5, 0.8, 0.1],
            vec![-0.2, 0.9, 0.1, 0.4],
            vec![0.7, 0.2, -0.3, 0.5],
        ]);
        let p = unit_rows(vec![
            vec![0.5, 0.5, 0.5, 0.5],
            vec![-0.1, 0.3, 0.9, -0.2],
            vec![0.2, -0.8, 0.4, 0.3],
        ]);
        let before = infonce_value(a.clone(), p.clone(), 0.2);
        let after = infonce_value(a.matmul(&rot), p.matmul(&rot), 0.2);
        assert!((before - after).abs() < 1e-9, "{before} vs {after}");
    }

    #[test]
    fn mse_l1_known_values_and_zero_at_equality() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::full(&[2, 3], 1.5));
        let b = g.leaf(Tensor::full(&[2, 3], 0.5));
        let mse = mse_align_loss(&mut g, a, b);
        let l1 = l1_align_loss(&mut g, a, b);
        assert_eq!(g.value(mse).item(), 1.0);
        assert_eq!(g.value(l1).item(), 1.0);

        let same = g.leaf(Tensor::full(&[2, 3], 0.7));
        let mse0 = mse_align_loss(&mut g, same, same);
        let l10 = l1_align_loss(&mut g, same, same);
        assert_eq!(g.value(mse0).item(), 0.0);
        assert_eq!(g.value(l10).item(), 0.0);
        // Zero gradient at the minimum for both.
        let grads = g.backward(mse0);
        assert!(grads.get(same).unwrap().data().iter().all(|&v| v == 0.0));
        let grads = g.backward(l10);
        assert!(grads.get(same).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn random_mse_l1_match_element_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let a = Tensor::new(vec![2, 3], (0..6).map(|_| rng.random_range(-2.0..2.0)).collect());
        let b = Tensor::new(vec![2, 3], (0..6).map(|_| rng.random_range(-2.0..2.0)).collect());
        let mut g = Graph::new();
        let an = g.leaf(a.clone());
        let bn = g.leaf(b.clone());
        let mse = mse_align_loss(&mut g, an, bn);
        let l1 = l1_align_loss(&mut g, an, bn);

        let mut mse_oracle = 0.0;
        let mut l1_oracle = 0.0;
        for i in 0..6 {
            let d = a.data()[i] - b.data()[i];
            mse_oracle += d * d;
            l1_oracle += d.abs();
        }
        assert!((g.value(mse).item() - mse_oracle / 6.0).abs() < 1e-12);
        assert!((g.value(l1).item() - l1_oracle / 6.0).abs() < 1e-12);
    }

    #[test]
    fn pooling_matches_hand_computed_mean() {
        // 2x2 grid of known 2-vectors.
        let tap = Tensor::new(vec![4, 2], vec![1.0, 0.0, 3.0, 2.0, 1.0, 2.0, 3.0, 0.0]);
        let pooled = pool_taps(&[tap.clone(), tap.clone(), tap]);
        // mean = (2, 1), norm sqrt(5)
        let want = [2.0 / 5f64.sqrt(), 1.0 / 5f64.sqrt()];
        for t in 0..3 {
            assert!((pooled.at2(t, 0) - want[0]).abs() < 1e-12);
            assert!((pooled.at2(t, 1) - want[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_feature_map_pools_to_unit_direction() {
        let tap = Tensor::full(&[6, 3], 2.0);
        let pooled = pool_taps(&[tap.clone(), tap.clone(), tap]);
        let inv = 1.0 / 3f64.sqrt();
        for c in 0..3 {
            assert!((pooled.at2(0, c) - inv).abs() < 1e-12);
        }
        for t in 0..3 {
            let norm: f64 = (0..3).map(|c| pooled.at2(t, c).powi(2)).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn multiscale_loss_is_mean_of_constructed_per_tap_losses() {
        // Build taps whose MSE losses are exactly 0.3, 0.6, 0.9.
        let mut g = Graph::new();
        let mut sar_rows = Vec::new();
        let mut rgb_rows = Vec::new();
        for target in [0.3f64, 0.6, 0.9] {
            let delta = target.sqrt();
            sar_rows.push(g.leaf(Tensor::full(&[2, 2], delta)));
            rgb_rows.push(g.leaf(Tensor::zeros(&[2, 2])));
        }
        let batch = AlignmentBatch {
            sar: [sar_rows[0], sar_rows[1], sar_rows[2]],
            rgb: [rgb_rows[0], rgb_rows[1], rgb_rows[2]],
        };
        let loss = multiscale_alignment_loss(&mut g, &batch, LossKind::Mse, 1.0).unwrap();
        assert!((g.value(loss).item() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn zero_taps_give_zero_multiscale_loss() {
        let mut g = Graph::new();
        let z = g.leaf(Tensor::zeros(&[2, 4]));
        let batch = AlignmentBatch { sar: [z, z, z], rgb: [z, z, z] };
        let loss = multiscale_alignment_loss(&mut g, &batch, LossKind::L1, 1.0).unwrap();
        assert_eq!(g.value(loss).item(), 0.0);
    }
}
