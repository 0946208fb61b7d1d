//! Minimal reverse-mode automatic differentiation over [`Tensor`].
//!
//! A [`Tape`] records every operation of a forward pass in topological
//! order; [`Tape::backward`] walks the record in reverse and accumulates
//! exact gradients for every node. The tape doubles as the forward cache:
//! replaying a recorded value is just reading it back.

use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Var(usize);

const GELU_C0: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C1: f64 = 0.044_715;

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddConst(usize),
    MulConst(usize, Tensor),
    /// `x[..., h] + b[h]`
    AddBias(usize, usize),
    MatMul(usize, usize),
    Bmm(usize, usize),
    Transpose2(usize),
    TransposeLast2(usize),
    Permute(usize, Vec<usize>),
    Reshape(usize),
    Flip0(usize),
    Tanh(usize),
    Relu(usize),
    Gelu(usize),
    /// Softmax over the last axis restricted to positions where the saved
    /// mask is 1; masked positions output exactly 0.
    MaskedSoftmax(usize),
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    /// Batch normalization over axis 0 of a 2-D input, batch statistics.
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    /// Column standardization (batch norm without affine), axis 0 of 2-D.
    Standardize {
        x: usize,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    /// `x[n,r,h] * m[n,r]`, mask constant.
    RowMask(usize, Tensor),
    SumAll(usize),
    MeanAll(usize),
    /// Mean cross-entropy of `logits[n,c]` against class indices; saves
    /// the softmax probabilities for the backward pass.
    CrossEntropyMean {
        logits: usize,
        targets: Vec<usize>,
        probs: Tensor,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Records one forward pass and computes exact gradients on demand.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, or zeros of the given shape if `v` never
    /// influenced the loss.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        match self.get(v) {
            Some(g) => g.clone(),
            None => Tensor::zeros(shape),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip(self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip(self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a.0, b.0))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).scale(c);
        self.push(v, Op::Scale(a.0, c))
    }

    pub fn add_const(&mut self, a: Var, t: &Tensor) -> Var {
        let v = self.value(a).zip(t, |x, y| x + y);
        self.push(v, Op::AddConst(a.0))
    }

    pub fn mul_const(&mut self, a: Var, t: &Tensor) -> Var {
        let v = self.value(a).zip(t, |x, y| x * y);
        self.push(v, Op::MulConst(a.0, t.clone()))
    }

    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let h = *self.value(x).shape().last().expect("add_bias on scalar");
        assert_eq!(self.value(b).shape(), &[h], "bias must match last axis");
        let bd = self.value(b).data().to_vec();
        let xv = self.value(x);
        let mut out = xv.data().to_vec();
        for chunk in out.chunks_mut(h) {
            for (o, bv) in chunk.iter_mut().zip(&bd) {
                *o += bv;
            }
        }
        let v = Tensor::new(xv.shape().to_vec(), out);
        self.push(v, Op::AddBias(x.0, b.0))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a.0, b.0))
    }

    pub fn bmm(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).bmm(self.value(b));
        self.push(v, Op::Bmm(a.0, b.0))
    }

    pub fn transpose2(&mut self, a: Var) -> Var {
        let v = self.value(a).transposed();
        self.push(v, Op::Transpose2(a.0))
    }

    pub fn transpose_last2(&mut self, a: Var) -> Var {
        let v = self.value(a).transposed_last2();
        self.push(v, Op::TransposeLast2(a.0))
    }

    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Var {
        let v = self.value(a).permuted(perm);
        self.push(v, Op::Permute(a.0, perm.to_vec()))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Var {
        let v = self.value(a).reshaped(shape);
        self.push(v, Op::Reshape(a.0))
    }

    pub fn flip0(&mut self, a: Var) -> Var {
        let v = self.value(a).flipped0();
        self.push(v, Op::Flip0(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a.0))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a.0))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| {
            0.5 * x * (1.0 + (GELU_C0 * (x + GELU_C1 * x * x * x)).tanh())
        });
        self.push(v, Op::Gelu(a.0))
    }

    /// Softmax over the last axis with a 0/1 mask of the same shape.
    /// Every row must contain at least one unmasked position; the caller
    /// is responsible for checking (bag invariants guarantee it here).
    pub fn masked_softmax(&mut self, a: Var, mask: &Tensor) -> Var {
        let xv = self.value(a);
        assert_eq!(xv.shape(), mask.shape(), "mask shape mismatch");
        let w = *xv.shape().last().unwrap();
        let rows = xv.size() / w;
        let mut out = vec![0.0; xv.size()];
        for r in 0..rows {
            let x = &xv.data()[r * w..(r + 1) * w];
            let m = &mask.data()[r * w..(r + 1) * w];
            let mut mx = f64::NEG_INFINITY;
            for j in 0..w {
                if m[j] != 0.0 && x[j] > mx {
                    mx = x[j];
                }
            }
            debug_assert!(mx.is_finite(), "masked_softmax row with no valid entries");
            let mut denom = 0.0;
            for j in 0..w {
                if m[j] != 0.0 {
                    let e = (x[j] - mx).exp();
                    out[r * w + j] = e;
                    denom += e;
                }
            }
            for j in 0..w {
                out[r * w + j] /= denom;
            }
        }
        let v = Tensor::new(xv.shape().to_vec(), out);
        self.push(v, Op::MaskedSoftmax(a.0))
    }

    /// Layer normalization over the last axis with learned scale/shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let h = *xv.shape().last().unwrap();
        assert_eq!(self.value(gamma).shape(), &[h]);
        assert_eq!(self.value(beta).shape(), &[h]);
        let rows = xv.size() / h;
        let g = self.value(gamma).data().to_vec();
        let b = self.value(beta).data().to_vec();
        let mut xhat = vec![0.0; xv.size()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xv.size()];
        for r in 0..rows {
            let row = &xv.data()[r * h..(r + 1) * h];
            let mean = row.iter().sum::<f64>() / h as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / h as f64;
            let istd = 1.0 / (var + eps).sqrt();
            inv_std[r] = istd;
            for j in 0..h {
                let xh = (row[j] - mean) * istd;
                xhat[r * h + j] = xh;
                out[r * h + j] = g[j] * xh + b[j];
            }
        }
        let shape = xv.shape().to_vec();
        let xhat = Tensor::new(shape.clone(), xhat);
        let v = Tensor::new(shape, out);
        self.push(
            v,
            Op::LayerNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                xhat,
                inv_std,
            },
        )
    }

    /// Batch normalization over axis 0 of `[n, f]` using batch statistics.
    /// Returns the output together with the per-column batch mean and
    /// (biased) variance so the caller can maintain running statistics.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> (Var, Vec<f64>, Vec<f64>) {
        let xv = self.value(x);
        assert_eq!(xv.shape().len(), 2, "batch_norm_train expects 2-D");
        let (n, f) = (xv.shape()[0], xv.shape()[1]);
        assert!(n >= 2, "batch normalization needs at least 2 samples");
        let g = self.value(gamma).data().to_vec();
        let b = self.value(beta).data().to_vec();
        let (xhat, inv_std, mean, var) = standardize(xv.data(), n, f, eps);
        let mut out = vec![0.0; n * f];
        for i in 0..n {
            for j in 0..f {
                out[i * f + j] = g[j] * xhat[i * f + j] + b[j];
            }
        }
        let xhat = Tensor::new(vec![n, f], xhat);
        let v = Tensor::new(vec![n, f], out);
        let var_ = self.push(
            v,
            Op::BatchNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                xhat,
                inv_std,
            },
        );
        (var_, mean, var)
    }

    /// Column standardization of `[n, f]`: zero mean, unit variance per
    /// column over the batch (batch normalization without affine).
    pub fn standardize_cols(&mut self, x: Var, eps: f64) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.shape().len(), 2, "standardize_cols expects 2-D");
        let (n, f) = (xv.shape()[0], xv.shape()[1]);
        let (xhat, inv_std, _, _) = standardize(xv.data(), n, f, eps);
        let v = Tensor::new(vec![n, f], xhat.clone());
        self.push(
            v,
            Op::Standardize {
                x: x.0,
                xhat: Tensor::new(vec![n, f], xhat),
                inv_std,
            },
        )
    }

    /// Multiply `x[n,r,h]` by a constant row mask `[n,r]`.
    pub fn row_mask(&mut self, x: Var, mask: &Tensor) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.shape().len(), 3, "row_mask expects 3-D");
        let (n, r, h) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        assert_eq!(mask.shape(), &[n, r], "row mask shape mismatch");
        let mut out = xv.data().to_vec();
        for i in 0..n {
            for t in 0..r {
                let m = mask.data()[i * r + t];
                if m != 1.0 {
                    for o in &mut out[(i * r + t) * h..(i * r + t + 1) * h] {
                        *o *= m;
                    }
                }
            }
        }
        let v = Tensor::new(xv.shape().to_vec(), out);
        self.push(v, Op::RowMask(x.0, mask.clone()))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::SumAll(a.0))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).size() as f64;
        let v = Tensor::scalar(self.value(a).sum() / n);
        self.push(v, Op::MeanAll(a.0))
    }

    /// Mean cross-entropy of `logits[n,c]` against integer class targets.
    pub fn cross_entropy_mean(&mut self, logits: Var, targets: &[usize]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.shape().len(), 2);
        let (n, c) = (lv.shape()[0], lv.shape()[1]);
        assert_eq!(targets.len(), n, "one target per row");
        let mut probs = vec![0.0; n * c];
        let mut loss = 0.0;
        for i in 0..n {
            let row = &lv.data()[i * c..(i + 1) * c];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for j in 0..c {
                let e = (row[j] - mx).exp();
                probs[i * c + j] = e;
                denom += e;
            }
            for j in 0..c {
                probs[i * c + j] /= denom;
            }
            assert!(targets[i] < c, "target out of range");
            loss -= probs[i * c + targets[i]].ln();
        }
        let v = Tensor::scalar(loss / n as f64);
        self.push(
            v,
            Op::CrossEntropyMean {
                logits: logits.0,
                targets: targets.to_vec(),
                probs: Tensor::new(vec![n, c], probs),
            },
        )
    }

    /// Backward pass seeded with `d root = 1` (root must be scalar).
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).size(), 1, "backward root must be scalar");
        self.backward_seeded(root, Tensor::scalar(1.0))
    }

    /// Backward pass from `root` seeded with an explicit output gradient.
    pub fn backward_seeded(&self, root: Var, seed: Tensor) -> Gradients {
        assert_eq!(
            self.value(root).shape(),
            seed.shape(),
            "seed shape must match the root value"
        );
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(seed);
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backprop(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn backprop(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let acc = |grads: &mut [Option<Tensor>], p: usize, t: Tensor| match &mut grads[p] {
            Some(existing) => existing.add_in_place(&t),
            slot @ None => *slot = Some(t),
        };
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                let ga = g.zip(&self.nodes[*b].value, |x, y| x * y);
                let gb = g.zip(&self.nodes[*a].value, |x, y| x * y);
                acc(grads, *a, ga);
                acc(grads, *b, gb);
            }
            Op::Scale(a, c) => acc(grads, *a, g.scale(*c)),
            Op::AddConst(a) => acc(grads, *a, g.clone()),
            Op::MulConst(a, t) => acc(grads, *a, g.zip(t, |x, y| x * y)),
            Op::AddBias(x, b) => {
                let h = *g.shape().last().unwrap();
                let mut db = vec![0.0; h];
                for chunk in g.data().chunks(h) {
                    for (d, v) in db.iter_mut().zip(chunk) {
                        *d += v;
                    }
                }
                acc(grads, *x, g.clone());
                acc(grads, *b, Tensor::new(vec![h], db));
            }
            Op::MatMul(a, b) => {
                let av = &self.nodes[*a].value;
                let bv = &self.nodes[*b].value;
                acc(grads, *a, g.matmul(&bv.transposed()));
                acc(grads, *b, av.transposed().matmul(g));
            }
            Op::Bmm(a, b) => {
                let av = &self.nodes[*a].value;
                let bv = &self.nodes[*b].value;
                acc(grads, *a, g.bmm(&bv.transposed_last2()));
                acc(grads, *b, av.transposed_last2().bmm(g));
            }
            Op::Transpose2(a) => acc(grads, *a, g.transposed()),
            Op::TransposeLast2(a) => acc(grads, *a, g.transposed_last2()),
            Op::Permute(a, perm) => {
                let mut inv = vec![0usize; perm.len()];
                for (d, &p) in perm.iter().enumerate() {
                    inv[p] = d;
                }
                acc(grads, *a, g.permuted(&inv));
            }
            Op::Reshape(a) => {
                let shape = self.nodes[*a].value.shape().to_vec();
                acc(grads, *a, g.reshaped(shape));
            }
            Op::Flip0(a) => acc(grads, *a, g.flipped0()),
            Op::Tanh(a) => {
                let y = &self.nodes[idx].value;
                acc(grads, *a, g.zip(y, |gv, yv| gv * (1.0 - yv * yv)));
            }
            Op::Relu(a) => {
                let x = &self.nodes[*a].value;
                acc(grads, *a, g.zip(x, |gv, xv| if xv > 0.0 { gv } else { 0.0 }));
            }
            Op::Gelu(a) => {
                let x = &self.nodes[*a].value;
                let dg = g.zip(x, |gv, xv| {
                    let u = GELU_C0 * (xv + GELU_C1 * xv * xv * xv);
                    let t = u.tanh();
                    let du = GELU_C0 * (1.0 + 3.0 * GELU_C1 * xv * xv);
                    gv * (0.5 * (1.0 + t) + 0.5 * xv * (1.0 - t * t) * du)
                });
                acc(grads, *a, dg);
            }
            Op::MaskedSoftmax(a) => {
                let y = &self.nodes[idx].value;
                let w = *y.shape().last().unwrap();
                let rows = y.size() / w;
                let mut dx = vec![0.0; y.size()];
                for r in 0..rows {
                    let yr = &y.data()[r * w..(r + 1) * w];
                    let gr = &g.data()[r * w..(r + 1) * w];
                    let s: f64 = yr.iter().zip(gr).map(|(&yv, &gv)| yv * gv).sum();
                    for j in 0..w {
                        dx[r * w + j] = yr[j] * (gr[j] - s);
                    }
                }
                acc(grads, *a, Tensor::new(y.shape().to_vec(), dx));
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let h = *xhat.shape().last().unwrap();
                let rows = xhat.size() / h;
                let gv = self.nodes[*gamma].value.data();
                let mut dgamma = vec![0.0; h];
                let mut dbeta = vec![0.0; h];
                let mut dx = vec![0.0; xhat.size()];
                for r in 0..rows {
                    let xh = &xhat.data()[r * h..(r + 1) * h];
                    let gr = &g.data()[r * h..(r + 1) * h];
                    let mut sum_dxhat = 0.0;
                    let mut sum_dxhat_xhat = 0.0;
                    for j in 0..h {
                        dgamma[j] += gr[j] * xh[j];
                        dbeta[j] += gr[j];
                        let dxh = gr[j] * gv[j];
                        sum_dxhat += dxh;
                        sum_dxhat_xhat += dxh * xh[j];
                    }
                    let m1 = sum_dxhat / h as f64;
                    let m2 = sum_dxhat_xhat / h as f64;
                    for j in 0..h {
                        let dxh = gr[j] * gv[j];
                        dx[r * h + j] = inv_std[r] * (dxh - m1 - xh[j] * m2);
                    }
                }
                acc(grads, *x, Tensor::new(xhat.shape().to_vec(), dx));
                acc(grads, *gamma, Tensor::new(vec![h], dgamma));
                acc(grads, *beta, Tensor::new(vec![h], dbeta));
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (n, f) = (xhat.shape()[0], xhat.shape()[1]);
                let gv = self.nodes[*gamma].value.data();
                let mut dgamma = vec![0.0; f];
                let mut dbeta = vec![0.0; f];
                let mut dx = vec![0.0; n * f];
                for j in 0..f {
                    let mut sum_dxhat = 0.0;
                    let mut sum_dxhat_xhat = 0.0;
                    for i in 0..n {
                        let gr = g.data()[i * f + j];
                        let xh = xhat.data()[i * f + j];
                        dgamma[j] += gr * xh;
                        dbeta[j] += gr;
                        let dxh = gr * gv[j];
                        sum_dxhat += dxh;
                        sum_dxhat_xhat += dxh * xh;
                    }
                    let m1 = sum_dxhat / n as f64;
                    let m2 = sum_dxhat_xhat / n as f64;
                    for i in 0..n {
                        let dxh = g.data()[i * f + j] * gv[j];
                        dx[i * f + j] = inv_std[j] * (dxh - m1 - xhat.data()[i * f + j] * m2);
                    }
                }
                acc(grads, *x, Tensor::new(vec![n, f], dx));
                acc(grads, *gamma, Tensor::new(vec![f], dgamma));
                acc(grads, *beta, Tensor::new(vec![f], dbeta));
            }
            Op::Standardize { x, xhat, inv_std } => {
                let (n, f) = (xhat.shape()[0], xhat.shape()[1]);
                let mut dx = vec![0.0; n * f];
                for j in 0..f {
                    let mut sum_g = 0.0;
                    let mut sum_g_xhat = 0.0;
                    for i in 0..n {
                        let gr = g.data()[i * f + j];
                        sum_g += gr;
                        sum_g_xhat += gr * xhat.data()[i * f + j];
                    }
                    let m1 = sum_g / n as f64;
                    let m2 = sum_g_xhat / n as f64;
                    for i in 0..n {
                        let gr = g.data()[i * f + j];
                        dx[i * f + j] = inv_std[j] * (gr - m1 - xhat.data()[i * f + j] * m2);
                    }
                }
                acc(grads, *x, Tensor::new(vec![n, f], dx));
            }
            Op::RowMask(x, mask) => {
                let (n, r) = (mask.shape()[0], mask.shape()[1]);
                let h = g.size() / (n * r);
                let mut dx = g.data().to_vec();
                for i in 0..n {
                    for t in 0..r {
                        let m = mask.data()[i * r + t];
                        if m != 1.0 {
                            for o in &mut dx[(i * r + t) * h..(i * r + t + 1) * h] {
                                *o *= m;
                            }
                        }
                    }
                }
                acc(grads, *x, Tensor::new(g.shape().to_vec(), dx));
            }
            Op::SumAll(a) => {
                let shape = self.nodes[*a].value.shape().to_vec();
                acc(grads, *a, Tensor::full(&shape, g.item()));
            }
            Op::MeanAll(a) => {
                let shape = self.nodes[*a].value.shape().to_vec();
                let n = self.nodes[*a].value.size() as f64;
                acc(grads, *a, Tensor::full(&shape, g.item() / n));
            }
            Op::CrossEntropyMean {
                logits,
                targets,
                probs,
            } => {
                let (n, c) = (probs.shape()[0], probs.shape()[1]);
                let scale = g.item() / n as f64;
                let mut dl = vec![0.0; n * c];
                for i in 0..n {
                    for j in 0..c {
                        let onehot = if j == targets[i] { 1.0 } else { 0.0 };
                        dl[i * c + j] = scale * (probs.data()[i * c + j] - onehot);
                    }
                }
                acc(grads, *logits, Tensor::new(vec![n, c], dl));
            }
        }
    }
}

fn standardize(data: &[f64], n: usize, f: usize, eps: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; f];
    let mut var = vec![0.0; f];
    for i in 0..n {
        for j in 0..f {
            mean[j] += data[i * f + j];
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    for i in 0..n {
        for j in 0..f {
            let d = data[i * f + j] - mean[j];
            var[j] += d * d;
        }
    }
    for v in &mut var {
        *v /= n as f64;
    }
    let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
    let mut xhat = vec![0.0; n * f];
    for i in 0..n {
        for j in 0..f {
            xhat[i * f + j] = (data[i * f + j] - mean[j]) * inv_std[j];
        }
    }
    (xhat, inv_std, mean, var)
}
