//! Dense row-major f64 tensors with just the operations the aggregator,
//! losses, and optimizers need. Kept deliberately small: shapes are plain
//! `Vec<usize>`, data a flat `Vec<f64>`.

use rayon::prelude::*;

/// Threshold (in multiply-adds) above which matrix products fan out to
/// rayon. Small products are faster single-threaded; the fork/join cost
/// only pays off well above a million multiply-adds.
const PAR_FLOPS: usize = 1 << 22;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {:?} does not match data length {}",
            shape,
            data.len()
        );
        Tensor { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn size(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() requires a scalar tensor");
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshaped(&self, shape: Vec<usize>) -> Tensor {
        assert_eq!(
            shape.iter().product::<usize>(),
            self.data.len(),
            "cannot reshape {:?} into {:?}",
            self.shape,
            shape
        );
        Tensor {
            shape,
            data: self.data.clone(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        assert_eq!(self.shape, other.shape, "zip shape mismatch");
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add_in_place(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape, "add shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|v| v * c)
    }

    /// 2-D matrix product `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.shape.len(), 2, "matmul lhs must be 2-D");
        assert_eq!(other.shape.len(), 2, "matmul rhs must be 2-D");
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, n) = (other.shape[0], other.shape[1]);
        assert_eq!(k, k2, "matmul inner dims {k} vs {k2}");
        let mut out = vec![0.0; m * n];
        matmul_into(&self.data, &other.data, &mut out, m, k, n);
        Tensor {
            shape: vec![m, n],
            data: out,
        }
    }

    /// Batched matrix product `[b,m,k] x [b,k,n] -> [b,m,n]`.
    pub fn bmm(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.shape.len(), 3, "bmm lhs must be 3-D");
        assert_eq!(other.shape.len(), 3, "bmm rhs must be 3-D");
        let (b, m, k) = (self.shape[0], self.shape[1], self.shape[2]);
        let (b2, k2, n) = (other.shape[0], other.shape[1], other.shape[2]);
        assert_eq!(b, b2, "bmm batch dims {b} vs {b2}");
        assert_eq!(k, k2, "bmm inner dims {k} vs {k2}");
        let mut out = vec![0.0; b * m * n];
        if b * m * k * n >= PAR_FLOPS && b > 1 {
            let min_batches = (PAR_FLOPS / (m * k * n).max(1)).max(1);
            out.par_chunks_mut(m * n)
                .with_min_len(min_batches)
                .enumerate()
                .for_each(|(i, dst)| {
                    matmul_into(
                        &self.data[i * m * k..(i + 1) * m * k],
                        &other.data[i * k * n..(i + 1) * k * n],
                        dst,
                        m,
                        k,
                        n,
                    );
                });
        } else {
            for i in 0..b {
                matmul_into(
                    &self.data[i * m * k..(i + 1) * m * k],
                    &other.data[i * k * n..(i + 1) * k * n],
                    &mut out[i * m * n..(i + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
        }
        Tensor {
            shape: vec![b, m, n],
            data: out,
        }
    }

    /// Transpose a 2-D tensor.
    pub fn transposed(&self) -> Tensor {
        assert_eq!(self.shape.len(), 2, "transposed requires 2-D");
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Tensor {
            shape: vec![n, m],
            data: out,
        }
    }

    /// Swap the last two axes of a 3-D tensor.
    pub fn transposed_last2(&self) -> Tensor {
        assert_eq!(self.shape.len(), 3, "transposed_last2 requires 3-D");
        let (b, m, n) = (self.shape[0], self.shape[1], self.shape[2]);
        let mut out = vec![0.0; b * m * n];
        for i in 0..b {
            let src = &self.data[i * m * n..(i + 1) * m * n];
            let dst = &mut out[i * m * n..(i + 1) * m * n];
            for r in 0..m {
                for c in 0..n {
                    dst[c * m + r] = src[r * n + c];
                }
            }
        }
        Tensor {
            shape: vec![b, n, m],
            data: out,
        }
    }

    /// General axis permutation (row-major reindex).
    pub fn permuted(&self, perm: &[usize]) -> Tensor {
        let rank = self.shape.len();
        assert_eq!(perm.len(), rank, "permutation rank mismatch");
        let mut seen = vec![false; rank];
        for &p in perm {
            assert!(p < rank && !seen[p], "invalid permutation {perm:?}");
            seen[p] = true;
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let out_strides = strides(&out_shape);
        // walk the input linearly, maintaining the output offset by
        // incrementing a multi-index with carries (no division)
        let mut out_stride_of_in_dim = vec![0usize; rank];
        for (out_d, &in_d) in perm.iter().enumerate() {
            out_stride_of_in_dim[in_d] = out_strides[out_d];
        }
        let mut out = vec![0.0; self.data.len()];
        let mut idx = vec![0usize; rank];
        let mut out_flat = 0usize;
        for &v in &self.data {
            out[out_flat] = v;
            for d in (0..rank).rev() {
                idx[d] += 1;
                out_flat += out_stride_of_in_dim[d];
                if idx[d] < self.shape[d] {
                    break;
                }
                out_flat -= idx[d] * out_stride_of_in_dim[d];
                idx[d] = 0;
            }
        }
        Tensor {
            shape: out_shape,
            data: out,
        }
    }

    /// Reverse order along axis 0.
    pub fn flipped0(&self) -> Tensor {
        let n = self.shape[0];
        let row = self.data.len() / n.max(1);
        let mut out = vec![0.0; self.data.len()];
        for i in 0..n {
            out[i * row..(i + 1) * row]
                .copy_from_slice(&self.data[(n - 1 - i) * row..(n - i) * row]);
        }
        Tensor {
            shape: self.shape.clone(),
            data: out,
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Euclidean norm of the flattened tensor.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        s[d] = s[d + 1] * shape[d + 1];
    }
    s
}

/// `out += a @ b` with `a: [m,k]`, `b: [k,n]`, `out` zeroed by the caller.
fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    let body = |i: usize, dst: &mut [f64]| {
        let arow = &a[i * k..(i + 1) * k];
        for (kk, &aik) in arow.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            for j in 0..n {
                dst[j] += aik * brow[j];
            }
        }
    };
    if m * k * n >= PAR_FLOPS && m > 1 {
        let min_rows = (PAR_FLOPS / (k * n).max(1)).max(1);
        out.par_chunks_mut(n)
            .with_min_len(min_rows)
            .enumerate()
            .for_each(|(i, dst)| body(i, dst));
    } else {
        for (i, dst) in out.chunks_mut(n).enumerate() {
            body(i, dst);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let a = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Tensor::new(vec![3, 2], vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = a.matmul(&b);
        assert_eq!(c.data(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn bmm_matches_per_batch_matmul() {
        let a = Tensor::new(vec![2, 2, 2], (0..8).map(f64::from).collect());
        let b = Tensor::new(vec![2, 2, 2], (8..16).map(f64::from).collect());
        let c = a.bmm(&b);
        for i in 0..2 {
            let ai = Tensor::new(vec![2, 2], a.data()[i * 4..(i + 1) * 4].to_vec());
            let bi = Tensor::new(vec![2, 2], b.data()[i * 4..(i + 1) * 4].to_vec());
            assert_eq!(&c.data()[i * 4..(i + 1) * 4], ai.matmul(&bi).data());
        }
    }

    #[test]
    fn permute_roundtrip() {
        let t = Tensor::new(vec![2, 3, 4], (0..24).map(f64::from).collect());
        let p = t.permuted(&[2, 0, 1]);
        assert_eq!(p.shape(), &[4, 2, 3]);
        let back = p.permuted(&[1, 2, 0]);
        assert_eq!(back, t);
    }

    #[test]
    fn flip0_is_involution() {
        let t = Tensor::new(vec![3, 2], (0..6).map(f64::from).collect());
        assert_eq!(t.flipped0().flipped0(), t);
        assert_eq!(t.flipped0().data()[0..2], [4.0, 5.0]);
    }
}
