//! 2-D matrix product and transpose.

use super::{Scalar, Tensor};
use crate::error::TensorError;

fn matmul_raw<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::ZERO; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] = orow[j].add(av.mul(brow[j]));
            }
        }
    }
    out
}

fn transpose_raw<T: Scalar>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::ZERO; a.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

impl<T: Scalar> Tensor<T> {
    /// `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        if self.rank() != 2 {
            return Err(TensorError::RankMismatch {
                expected: 2,
                shape: self.shape().to_vec(),
            });
        }
        if rhs.rank() != 2 || self.shape()[1] != rhs.shape()[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape().to_vec(),
                rhs: rhs.shape().to_vec(),
            });
        }
        let (m, k) = (self.shape()[0], self.shape()[1]);
        let n = rhs.shape()[1];
        let out = matmul_raw(&self.data(), &rhs.data(), m, k, n);
        let (lhs_b, rhs_b) = (self.clone(), rhs.clone());
        Ok(Tensor::from_op(
            out,
            vec![m, n],
            vec![self.clone(), rhs.clone()],
            Box::new(move |grad, needed| {
                // dA = dY Bᵗ ; dB = Aᵗ dY
                let da = needed[0].then(|| {
                    let bt = transpose_raw(&rhs_b.data(), k, n);
                    matmul_raw(grad, &bt, m, n, k)
                });
                let db = needed[1].then(|| {
                    let at = transpose_raw(&lhs_b.data(), m, k);
                    matmul_raw(&at, grad, k, m, n)
                });
                vec![da, db]
            }),
        ))
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&self) -> Result<Tensor<T>, TensorError> {
        if self.rank() != 2 {
            return Err(TensorError::RankMismatch {
                expected: 2,
                shape: self.shape().to_vec(),
            });
        }
        let (rows, cols) = (self.shape()[0], self.shape()[1]);
        let out = transpose_raw(&self.data(), rows, cols);
        Ok(Tensor::from_op(
            out,
            vec![cols, rows],
            vec![self.clone()],
            Box::new(move |grad, _| vec![Some(transpose_raw(grad, cols, rows))]),
        ))
    }
}
