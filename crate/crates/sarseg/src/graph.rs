//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Graph`] is a per-forward-pass tape. Leaves hold parameter or input
//! values; every op records its parents and a backward closure that maps the
//! output gradient to per-parent gradients. [`Graph::backward`] walks the tape
//! in reverse and accumulates gradients for every node, so a single scalar
//! loss yields gradients for all parameters bound into the pass.
//!
//! Everything is f64 and single-threaded; two identical forward passes are
//! bit-identical.

use crate::tensor::Tensor;

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

type BackwardFn = Box<dyn Fn(&Tensor, &Graph) -> Vec<Tensor>>;

struct Node {
    value: Tensor,
    parents: Vec<NodeId>,
    backward: Option<BackwardFn>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Graph::backward`].
pub struct Gradients(Vec<Option<Tensor>>);

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.0[id.0].as_ref()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Insert a leaf (parameter or input) value.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, vec![], None)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, parents: Vec<NodeId>, backward: Option<BackwardFn>) -> NodeId {
        self.nodes.push(Node { value, parents, backward });
        NodeId(self.nodes.len() - 1)
    }

    /// Backpropagate from a scalar root. Nodes after `root` on the tape are
    /// ignored; nodes not on a path to the root get no gradient.
    pub fn backward(&self, root: NodeId) -> Gradients {
        assert_eq!(self.value(root).len(), 1, "backward root must be scalar");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0));
        for id in (0..=root.0).rev() {
            let Some(grad) = grads[id].take() else { continue };
            if let Some(back) = &self.nodes[id].backward {
                let parent_grads = back(&grad, self);
                assert_eq!(parent_grads.len(), self.nodes[id].parents.len());
                for (pid, pg) in self.nodes[id].parents.iter().zip(parent_grads) {
                    match &mut grads[pid.0] {
                        Some(acc) => acc.add_assign(&pg),
                        slot => *slot = Some(pg),
                    }
                }
            }
            grads[id] = Some(grad);
        }
        Gradients(grads)
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = self.value(a).zip(self.value(b), |x, y| x + y);
        self.push(out, vec![a, b], Some(Box::new(|g, _| vec![g.clone(), g.clone()])))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = self.value(a).zip(self.value(b), |x, y| x - y);
        self.push(out, vec![a, b], Some(Box::new(|g, _| vec![g.clone(), g.map(|v| -v)])))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = self.value(a).zip(self.value(b), |x, y| x * y);
        self.push(
            out,
            vec![a, b],
            Some(Box::new(move |g, graph| {
                vec![g.zip(graph.value(b), |gv, y| gv * y), g.zip(graph.value(a), |gv, x| gv * x)]
            })),
        )
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let out = self.value(a).map(|v| c * v);
        self.push(out, vec![a], Some(Box::new(move |g, _| vec![g.map(|v| c * v)])))
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let out = self.value(a).map(|v| v + c);
        self.push(out, vec![a], Some(Box::new(|g, _| vec![g.clone()])))
    }

    /// Sum of same-shape nodes.
    pub fn add_n(&mut self, xs: &[NodeId]) -> NodeId {
        assert!(!xs.is_empty());
        let mut out = self.value(xs[0]).clone();
        for &x in &xs[1..] {
            out.add_assign(self.value(x));
        }
        let n = xs.len();
        self.push(out, xs.to_vec(), Some(Box::new(move |g, _| vec![g.clone(); n])))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(|v| 1.0 / (1.0 + (-v).exp()));
        let cached = out.clone();
        self.push(
            out,
            vec![a],
            Some(Box::new(move |g, _| vec![g.zip(&cached, |gv, y| gv * y * (1.0 - y))])),
        )
    }

    /// Elementwise absolute value; the subgradient at 0 is 0.
    pub fn abs(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(f64::abs);
        self.push(
            out,
            vec![a],
            Some(Box::new(move |g, graph| {
                vec![g.zip(graph.value(a), |gv, x| {
                    if x == 0.0 {
                        0.0
                    } else {
                        gv * x.signum()
                    }
                })]
            })),
        )
    }

    /// GELU with the tanh approximation (smooth everywhere, which keeps
    /// central finite differences well behaved).
    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        const C: f64 = 0.7978845608028654; // sqrt(2/pi)
        const A: f64 = 0.044715;
        let out = self.value(a).map(|x| {
            let u = C * (x + A * x * x * x);
            0.5 * x * (1.0 + u.tanh())
        });
        self.push(
            out,
            vec![a],
            Some(Box::new(move |g, graph| {
                let x = graph.value(a);
                vec![g.zip(x, |gv, x| {
                    let u = C * (x + A * x * x * x);
                    let t = u.tanh();
                    let du = C * (1.0 + 3.0 * A * x * x);
                    gv * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
                })]
            })),
        )
    }

    // ---- shape ----

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> NodeId {
        let out = self.value(a).clone().reshaped(shape);
        let orig = self.value(a).shape().to_vec();
        self.push(
            out,
            vec![a],
            Some(Box::new(move |g, _| vec![g.clone().reshaped(orig.clone())])),
        )
    }

    pub fn transpose2d(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).transposed2d();
        self.push(out, vec![a], Some(Box::new(|g, _| vec![g.transposed2d()])))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let v = self.value(a);
        let (n, m) = (v.rows(), v.cols());
        assert!(start + len <= m);
        let mut out = Tensor::zeros(&[n, len]);
        for r in 0..n {
            for c in 0..len {
                out.set2(r, c, v.at2(r, start + c));
            }
        }
        self.push(
            out,
            vec![a],
            Some(Box::new(move |g, _| {
                let mut dx = Tensor::zeros(&[n, m]);
                for r in 0..n {
                    for c in 0..len {
                        dx.set2(r, start + c, g.at2(r, c));
                    }
                }
                vec![dx]
            })),
        )
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let v = self.value(a);
        let (n, m) = (v.rows(), v.cols());
        assert!(start + len <= n);
        let data = v.data()[start * m..(start + len) * m].to_vec();
        self.push(
            Tensor::new(vec![len, m], data),
            vec![a],
            Some(Box::new(move |g, _| {
                let mut dx = Tensor::zeros(&[n, m]);
                dx.data_mut()[start * m..(start + len) * m].copy_from_slice(g.data());
                vec![dx]
            })),
        )
    }

    pub fn concat_cols(&mut self, xs: &[NodeId]) -> NodeId {
        assert!(!xs.is_empty());
        let n = self.value(xs[0]).rows();
        let widths: Vec<usize> = xs.iter().map(|&x| self.value(x).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut out = Tensor::zeros(&[n, total]);
        let mut off = 0;
        for (&x, &w) in xs.iter().zip(&widths) {
            let v = self.value(x);
            assert_eq!(v.rows(), n);
            for r in 0..n {
                for c in 0..w {
                    out.set2(r, off + c, v.at2(r, c));
                }
            }
            off += w;
        }
        self.push(
            out,
            xs.to_vec(),
            Some(Box::new(move |g, _| {
                let mut grads = Vec::with_capacity(widths.len());
                let mut off = 0;
                for &w in &widths {
                    let mut dx = Tensor::zeros(&[n, w]);
                    for r in 0..n {
                        for c in 0..w {
                            dx.set2(r, c, g.at2(r, off + c));
                        }
                    }
                    grads.push(dx);
                    off += w;
                }
                grads
            })),
        )
    }

    pub fn concat_rows(&mut self, xs: &[NodeId]) -> NodeId {
        assert!(!xs.is_empty());
        let m = self.value(xs[0]).cols();
        let heights: Vec<usize> = xs.iter().map(|&x| self.value(x).rows()).collect();
        let total: usize = heights.iter().sum();
        let mut data = Vec::with_capacity(total * m);
        for &x in xs {
            let v = self.value(x);
            assert_eq!(v.cols(), m);
            data.extend_from_slice(v.data());
        }
        self.push(
            Tensor::new(vec![total, m], data),
            xs.to_vec(),
            Some(Box::new(move |g, _| {
                let mut grads = Vec::with_capacity(heights.len());
                let mut off = 0;
                for &h in &heights {
                    let slice = g.data()[off * m..(off + h) * m].to_vec();
                    grads.push(Tensor::new(vec![h, m], slice));
                    off += h;
                }
                grads
            })),
        )
    }

    /// Concatenate `[c_i, h, w]` maps along the channel axis.
    pub fn concat_channels(&mut self, xs: &[NodeId]) -> NodeId {
        assert!(!xs.is_empty());
        let shape0 = self.value(xs[0]).shape().to_vec();
        let (h, w) = (shape0[1], shape0[2]);
        let chans: Vec<usize> = xs.iter().map(|&x| self.value(x).shape()[0]).collect();
        let total: usize = chans.iter().sum();
        let mut data = Vec::with_capacity(total * h * w);
        for &x in xs {
            let v = self.value(x);
            assert_eq!(&v.shape()[1..], &[h, w]);
            data.extend_from_slice(v.data());
        }
        self.push(
            Tensor::new(vec![total, h, w], data),
            xs.to_vec(),
            Some(Box::new(move |g, _| {
                let mut grads = Vec::with_capacity(chans.len());
                let mut off = 0;
                for &c in &chans {
                    let slice = g.data()[off * h * w..(off + c) * h * w].to_vec();
                    grads.push(Tensor::new(vec![c, h, w], slice));
                    off += c;
                }
                grads
            })),
        )
    }

    pub fn slice_channel(&mut self, a: NodeId, ch: usize) -> NodeId {
        let v = self.value(a);
        let (c, h, w) = (v.shape()[0], v.shape()[1], v.shape()[2]);
        assert!(ch < c);
        let data = v.data()[ch * h * w..(ch + 1) * h * w].to_vec();
        self.push(
            Tensor::new(vec![1, h, w], data),
            vec![a],
            Some(Box::new(move |g, _| {
                let mut dx = Tensor::zeros(&[c, h, w]);
                dx.data_mut()[ch * h * w..(ch + 1) * h * w].copy_from_slice(g.data());
                vec![dx]
            })),
        )
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = self.value(a).matmul(self.value(b));
        self.push(
            out,
            vec![a, b],
            Some(Box::new(move |g, graph| {
                vec![g.matmul_nt(graph.value(b)), graph.value(a).matmul_tn(g)]
            })),
        )
    }

    /// `a @ b^T` for `a: [n,k]`, `b: [m,k]`.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = self.value(a).matmul_nt(self.value(b));
        self.push(
            out,
            vec![a, b],
            Some(Box::new(move |g, graph| {
                vec![g.matmul(graph.value(b)), g.matmul_tn(graph.value(a))]
            })),
        )
    }

    /// Add a `[1,d]` bias row to every row of `[n,d]`.
    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let v = self.value(a);
        let b = self.value(bias);
        let (n, d) = (v.rows(), v.cols());
        assert_eq!(b.len(), d, "bias length");
        let mut out = v.clone();
        for r in 0..n {
            for c in 0..d {
                let idx = r * d + c;
                out.data_mut()[idx] += b.data()[c];
            }
        }
        let bshape = b.shape().to_vec();
        self.push(
            out,
            vec![a, bias],
            Some(Box::new(move |g, _| {
                let mut db = vec![0.0; d];
                for r in 0..n {
                    for c in 0..d {
                        db[c] += g.data()[r * d + c];
                    }
                }
                vec![g.clone(), Tensor::new(bshape.clone(), db)]
            })),
        )
    }

    // ---- reductions & rows ----

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let n = v.len() as f64;
        let out = Tensor::scalar(v.data().iter().sum::<f64>() / n);
        let shape = v.shape().to_vec();
        self.push(
            out,
            vec![a],
            Some(Box::new(move |g, _| {
                let gv = g.item() / n;
                vec![Tensor::full(&shape, gv)]
            })),
        )
    }

    /// Mean over rows: `[n,d] -> [1,d]`.
    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let (n, d) = (v.rows(), v.cols());
        let mut out = vec![0.0; d];
        for r in 0..n {
            for c in 0..d {
                out[c] += v.at2(r, c);
            }
        }
        for o in &mut out {
            *o /= n as f64;
        }
        self.push(
            Tensor::new(vec![1, d], out),
            vec![a],
            Some(Box::new(move |g, _| {
                let mut dx = Tensor::zeros(&[n, d]);
                for r in 0..n {
                    for c in 0..d {
                        dx.set2(r, c, g.data()[c] / n as f64);
                    }
                }
                vec![dx]
            })),
        )
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let (n, d) = (v.rows(), v.cols());
        let mut out = Tensor::zeros(&[n, d]);
        for r in 0..n {
            let row = &v.data()[r * d..(r + 1) * d];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|&x| (x - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            for c in 0..d {
                out.set2(r, c, exps[c] / sum);
            }
        }
        let y = out.clone();
        self.push(
            out,
            vec![a],
            Some(Box::new(move |g, _| {
                let mut dx = Tensor::zeros(&[n, d]);
                for r in 0..n {
                    let dot: f64 = (0..d).map(|c| g.at2(r, c) * y.at2(r, c)).sum();
                    for c in 0..d {
                        dx.set2(r, c, y.at2(r, c) * (g.at2(r, c) - dot));
                    }
                }
                vec![dx]
            })),
        )
    }

    /// Row-wise log-sum-exp: `[n,d] -> [n,1]`.
    pub fn logsumexp_rows(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let (n, d) = (v.rows(), v.cols());
        let mut out = Tensor::zeros(&[n, 1]);
        for r in 0..n {
            let row = &v.data()[r * d..(r + 1) * d];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|&x| (x - max).exp()).sum();
            out.set2(r, 0, max + sum.ln());
        }
        self.push(
            out,
            vec![a],
            Some(Box::new(move |g, graph| {
                let v = graph.value(a);
                let mut dx = Tensor::zeros(&[n, d]);
                for r in 0..n {
                    let row = &v.data()[r * d..(r + 1) * d];
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = row.iter().map(|&x| (x - max).exp()).collect();
                    let sum: f64 = exps.iter().sum();
                    for c in 0..d {
                        dx.set2(r, c, g.at2(r, 0) * exps[c] / sum);
                    }
                }
                vec![dx]
            })),
        )
    }

    /// Diagonal of a square matrix: `[n,n] -> [n,1]`.
    pub fn diag(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let n = v.rows();
        assert_eq!(n, v.cols(), "diag needs a square matrix");
        let data: Vec<f64> = (0..n).map(|i| v.at2(i, i)).collect();
        self.push(
            Tensor::new(vec![n, 1], data),
            vec![a],
            Some(Box::new(move |g, _| {
                let mut dx = Tensor::zeros(&[n, n]);
                for i in 0..n {
                    dx.set2(i, i, g.at2(i, 0));
                }
                vec![dx]
            })),
        )
    }

    /// Row-wise L2 normalization; zero rows stay zero with zero gradient.
    pub fn l2_normalize_rows(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let (n, d) = (v.rows(), v.cols());
        let mut out = Tensor::zeros(&[n, d]);
        let mut norms = vec![0.0; n];
        for r in 0..n {
            let row = &v.data()[r * d..(r + 1) * d];
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            norms[r] = norm;
            if norm > 1e-300 {
                for c in 0..d {
                    out.set2(r, c, row[c] / norm);
                }
            }
        }
        let y = out.clone();
        self.push(
            out,
            vec![a],
            Some(Box::new(move |g, _| {
                let mut dx = Tensor::zeros(&[n, d]);
                for r in 0..n {
                    if norms[r] <= 1e-300 {
                        continue;
                    }
                    let dot: f64 = (0..d).map(|c| g.at2(r, c) * y.at2(r, c)).sum();
                    for c in 0..d {
                        dx.set2(r, c, (g.at2(r, c) - y.at2(r, c) * dot) / norms[r]);
                    }
                }
                vec![dx]
            })),
        )
    }

    /// Pre-norm transformer LayerNorm over the last axis of `[n,d]`.
    pub fn layer_norm(&mut self, a: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> NodeId {
        let v = self.value(a);
        let (n, d) = (v.rows(), v.cols());
        let gm = self.value(gamma).data().to_vec();
        let bt = self.value(beta).data().to_vec();
        assert_eq!(gm.len(), d);
        assert_eq!(bt.len(), d);
        let mut out = Tensor::zeros(&[n, d]);
        let mut xhat = Tensor::zeros(&[n, d]);
        let mut inv_std = vec![0.0; n];
        for r in 0..n {
            let row = &v.data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d as f64;
            let istd = 1.0 / (var + eps).sqrt();
            inv_std[r] = istd;
            for c in 0..d {
                let xh = (row[c] - mean) * istd;
                xhat.set2(r, c, xh);
                out.set2(r, c, gm[c] * xh + bt[c]);
            }
        }
        let gshape = self.value(gamma).shape().to_vec();
        let bshape = self.value(beta).shape().to_vec();
        self.push(
            out,
            vec![a, gamma, beta],
            Some(Box::new(move |g, _| {
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                let mut dx = Tensor::zeros(&[n, d]);
                for r in 0..n {
                    let mut sum_dxhat = 0.0;
                    let mut sum_dxhat_xhat = 0.0;
                    for c in 0..d {
                        let gv = g.at2(r, c);
                        let xh = xhat.at2(r, c);
                        dgamma[c] += gv * xh;
                        dbeta[c] += gv;
                        let dxh = gv * gm[c];
                        sum_dxhat += dxh;
                        sum_dxhat_xhat += dxh * xh;
                    }
                    for c in 0..d {
                        let dxh = g.at2(r, c) * gm[c];
                        let xh = xhat.at2(r, c);
                        let val = inv_std[r]
                            * (dxh - sum_dxhat / d as f64 - xh * sum_dxhat_xhat / d as f64);
                        dx.set2(r, c, val);
                    }
                }
                vec![
                    dx,
                    Tensor::new(gshape.clone(), dgamma),
                    Tensor::new(bshape.clone(), dbeta),
                ]
            })),
        )
    }

    // ---- image-shaped ops ----

    /// Gather rows of `table: [v,d]` by fixed indices.
    pub fn embedding(&mut self, table: NodeId, indices: Vec<usize>) -> NodeId {
        let t = self.value(table);
        let (v, d) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in &indices {
            assert!(i < v, "embedding index {i} out of range {v}");
            data.extend_from_slice(&t.data()[i * d..(i + 1) * d]);
        }
        let n = indices.len();
        self.push(
            Tensor::new(vec![n, d], data),
            vec![table],
            Some(Box::new(move |g, _| {
                let mut dt = Tensor::zeros(&[v, d]);
                for (r, &i) in indices.iter().enumerate() {
                    for c in 0..d {
                        dt.data_mut()[i * d + c] += g.at2(r, c);
                    }
                }
                vec![dt]
            })),
        )
    }

    /// Extract non-overlapping `p x p` patches from `[c,h,w]`, flattened to
    /// `[num_patches, c*p*p]` in row-major patch order.
    pub fn im2patches(&mut self, a: NodeId, p: usize) -> NodeId {
        let v = self.value(a);
        let (c, h, w) = (v.shape()[0], v.shape()[1], v.shape()[2]);
        assert!(h % p == 0 && w % p == 0, "image {h}x{w} not divisible by patch {p}");
        let (gh, gw) = (h / p, w / p);
        let mut out = Tensor::zeros(&[gh * gw, c * p * p]);
        for gy in 0..gh {
            for gx in 0..gw {
                let row = gy * gw + gx;
                let mut col = 0;
                for ch in 0..c {
                    for py in 0..p {
                        for px in 0..p {
                            out.set2(row, col, v.at3(ch, gy * p + py, gx * p + px));
                            col += 1;
                        }
                    }
                }
            }
        }
        self.push(
            out,
            vec![a],
            Some(Box::new(move |g, _| {
                let mut dx = Tensor::zeros(&[c, h, w]);
                for gy in 0..gh {
                    for gx in 0..gw {
                        let row = gy * gw + gx;
                        let mut col = 0;
                        for ch in 0..c {
                            for py in 0..p {
                                for px in 0..p {
                                    dx.set3(ch, gy * p + py, gx * p + px, g.at2(row, col));
                                    col += 1;
                                }
                            }
                        }
                    }
                }
                vec![dx]
            })),
        )
    }

    /// Tokens `[h*w, d]` to a `[d, h, w]` feature map.
    pub fn tokens_to_map(&mut self, a: NodeId, h: usize, w: usize) -> NodeId {
        let t = self.transpose2d(a);
        self.reshape(t, vec![self.value(t).rows(), h, w])
    }

    /// Feature map `[d, h, w]` to tokens `[h*w, d]`.
    pub fn map_to_tokens(&mut self, a: NodeId) -> NodeId {
        let (d, h, w) = {
            let s = self.value(a).shape();
            (s[0], s[1], s[2])
        };
        let flat = self.reshape(a, vec![d, h * w]);
        self.transpose2d(flat)
    }

    /// Broadcast a `[1,d]` vector to a `[d,h,w]` map of constant channels.
    pub fn broadcast_to_map(&mut self, a: NodeId, h: usize, w: usize) -> NodeId {
        let v = self.value(a);
        let d = v.len();
        let mut out = Tensor::zeros(&[d, h, w]);
        for ch in 0..d {
            let val = v.data()[ch];
            for y in 0..h {
                for x in 0..w {
                    out.set3(ch, y, x, val);
                }
            }
        }
        let shape = v.shape().to_vec();
        self.push(
            out,
            vec![a],
            Some(Box::new(move |g, _| {
                let mut dv = vec![0.0; d];
                for ch in 0..d {
                    for y in 0..h {
                        for x in 0..w {
                            dv[ch] += g.at3(ch, y, x);
                        }
                    }
                }
                vec![Tensor::new(shape.clone(), dv)]
            })),
        )
    }

    /// 2D cross-correlation with zero padding `k/2` and stride 1.
    /// `x: [cin,h,w]`, `w: [cout,cin,k,k]`, `b: [cout]` -> `[cout,h,w]`.
    pub fn conv2d(&mut self, x: NodeId, weight: NodeId, bias: NodeId) -> NodeId {
        let xv = self.value(x);
        let wv = self.value(weight);
        let bv = self.value(bias);
        let (cin, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let ws = wv.shape().to_vec();
        assert_eq!(ws.len(), 4, "conv weight must be [cout,cin,k,k]");
        let (cout, k) = (ws[0], ws[2]);
        assert_eq!(ws[1], cin, "conv cin mismatch");
        assert_eq!(ws[3], k, "conv kernel must be square");
        assert_eq!(bv.len(), cout, "conv bias length");
        let pad = k / 2;
        let mut out = Tensor::zeros(&[cout, h, w]);
        for co in 0..cout {
            for oy in 0..h {
                for ox in 0..w {
                    let mut acc = bv.data()[co];
                    for ci in 0..cin {
                        for ky in 0..k {
                            let iy = oy as isize + ky as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = ox as isize + kx as isize - pad as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += wv.data()[((co * cin + ci) * k + ky) * k + kx]
                                    * xv.at3(ci, iy as usize, ix as usize);
                            }
                        }
                    }
                    out.set3(co, oy, ox, acc);
                }
            }
        }
        let bshape = bv.shape().to_vec();
        self.push(
            out,
            vec![x, weight, bias],
            Some(Box::new(move |g, graph| {
                let xv = graph.value(x);
                let wv = graph.value(weight);
                let mut dx = Tensor::zeros(&[cin, h, w]);
                let mut dw = Tensor::zeros(&[cout, cin, k, k]);
                let mut db = vec![0.0; cout];
                for co in 0..cout {
                    for oy in 0..h {
                        for ox in 0..w {
                            let gv = g.at3(co, oy, ox);
                            if gv == 0.0 {
                                continue;
                            }
                            db[co] += gv;
                            for ci in 0..cin {
                                for ky in 0..k {
                                    let iy = oy as isize + ky as isize - pad as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    for kx in 0..k {
                                        let ix = ox as isize + kx as isize - pad as isize;
                                        if ix < 0 || ix >= w as isize {
                                            continue;
                                        }
                                        let widx = ((co * cin + ci) * k + ky) * k + kx;
                                        dw.data_mut()[widx] +=
                                            gv * xv.at3(ci, iy as usize, ix as usize);
                                        let xidx = (ci * h + iy as usize) * w + ix as usize;
                                        dx.data_mut()[xidx] += gv * wv.data()[widx];
                                    }
                                }
                            }
                        }
                    }
                }
                vec![dx, dw, Tensor::new(bshape.clone(), db)]
            })),
        )
    }

    /// Bilinear upsample `[c,h,w]` to `[c,out_h,out_w]` (half-pixel centers).
    pub fn bilinear_upsample(&mut self, a: NodeId, out_h: usize, out_w: usize) -> NodeId {
        let v = self.value(a);
        let (c, h, w) = (v.shape()[0], v.shape()[1], v.shape()[2]);
        // Precompute interpolation taps once; reused verbatim in backward.
        let taps_y = bilinear_taps(h, out_h);
        let taps_x = bilinear_taps(w, out_w);
        let mut out = Tensor::zeros(&[c, out_h, out_w]);
        for ch in 0..c {
            for oy in 0..out_h {
                let (y0, y1, wy) = taps_y[oy];
                for ox in 0..out_w {
                    let (x0, x1, wx) = taps_x[ox];
                    let v00 = v.at3(ch, y0, x0);
                    let v01 = v.at3(ch, y0, x1);
                    let v10 = v.at3(ch, y1, x0);
                    let v11 = v.at3(ch, y1, x1);
                    let top = v00 * (1.0 - wx) + v01 * wx;
                    let bot = v10 * (1.0 - wx) + v11 * wx;
                    out.set3(ch, oy, ox, top * (1.0 - wy) + bot * wy);
                }
            }
        }
        self.push(
            out,
            vec![a],
            Some(Box::new(move |g, _| {
                let mut dx = Tensor::zeros(&[c, h, w]);
                for ch in 0..c {
                    for oy in 0..out_h {
                        let (y0, y1, wy) = taps_y[oy];
                        for ox in 0..out_w {
                            let (x0, x1, wx) = taps_x[ox];
                            let gv = g.at3(ch, oy, ox);
                            let i00 = (ch * h + y0) * w + x0;
                            let i01 = (ch * h + y0) * w + x1;
                            let i10 = (ch * h + y1) * w + x0;
                            let i11 = (ch * h + y1) * w + x1;
                            dx.data_mut()[i00] += gv * (1.0 - wy) * (1.0 - wx);
                            dx.data_mut()[i01] += gv * (1.0 - wy) * wx;
                            dx.data_mut()[i10] += gv * wy * (1.0 - wx);
                            dx.data_mut()[i11] += gv * wy * wx;
                        }
                    }
                }
                vec![dx]
            })),
        )
    }
}

/// Source taps for bilinear resampling with half-pixel alignment.
fn bilinear_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let pos = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = pos.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect()
}
