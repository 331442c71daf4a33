//! Elementwise arithmetic, activations, and shape plumbing.

use super::shape::{
    broadcast_shape, broadcast_strides, for_each_broadcast, numel, reduce_to_shape,
};
use super::{logistic, softplus, Scalar, Tensor};
use crate::error::TensorError;

#[derive(Clone, Copy)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
    Min,
    Max,
}

impl BinaryKind {
    fn name(self) -> &'static str {
        match self {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
            BinaryKind::Div => "div",
            BinaryKind::Min => "minimum",
            BinaryKind::Max => "maximum",
        }
    }

    fn apply<T: Scalar>(self, a: T, b: T) -> T {
        match self {
            BinaryKind::Add => a.add(b),
            BinaryKind::Sub => a.sub(b),
            BinaryKind::Mul => a.mul(b),
            BinaryKind::Div => a.div(b),
            BinaryKind::Min => a.minimum(b),
            BinaryKind::Max => a.maximum(b),
        }
    }

    /// Partials (d/da, d/db) at one element. Ties in min/max route to the
    /// left operand.
    fn partials<T: Scalar>(self, a: T, b: T) -> (T, T) {
        match self {
            BinaryKind::Add => (T::ONE, T::ONE),
            BinaryKind::Sub => (T::ONE, T::ONE.neg()),
            BinaryKind::Mul => (b, a),
            BinaryKind::Div => (T::ONE.div(b), a.neg().div(b.mul(b))),
            BinaryKind::Min => {
                if a <= b {
                    (T::ONE, T::ZERO)
                } else {
                    (T::ZERO, T::ONE)
                }
            }
            BinaryKind::Max => {
                if a >= b {
                    (T::ONE, T::ZERO)
                } else {
                    (T::ZERO, T::ONE)
                }
            }
        }
    }
}

fn binary<T: Scalar>(
    kind: BinaryKind,
    lhs: &Tensor<T>,
    rhs: &Tensor<T>,
) -> Result<Tensor<T>, TensorError> {
    let out_shape = broadcast_shape(kind.name(), lhs.shape(), rhs.shape())?;
    let rank = out_shape.len();
    let a_strides = broadcast_strides(lhs.shape(), rank);
    let b_strides = broadcast_strides(rhs.shape(), rank);

    let mut out = vec![T::ZERO; numel(&out_shape)];
    {
        let a = lhs.data();
        let b = rhs.data();
        for_each_broadcast(&out_shape, &a_strides, &b_strides, |flat, ao, bo| {
            out[flat] = kind.apply(a[ao], b[bo]);
        });
    }

    let parents = vec![lhs.clone(), rhs.clone()];
    let (lhs_b, rhs_b) = (lhs.clone(), rhs.clone());
    let (lhs_shape, rhs_shape) = (lhs.shape().to_vec(), rhs.shape().to_vec());
    let backward_shape = out_shape.clone();
    Ok(Tensor::from_op(
        out,
        out_shape,
        parents,
        Box::new(move |grad, needed| {
            let a = lhs_b.data();
            let b = rhs_b.data();
            let total = grad.len();
            let mut ga_full = if needed[0] {
                vec![T::ZERO; total]
            } else {
                Vec::new()
            };
            let mut gb_full = if needed[1] {
                vec![T::ZERO; total]
            } else {
                Vec::new()
            };
            for_each_broadcast(&backward_shape, &a_strides, &b_strides, |flat, ao, bo| {
                let (da, db) = kind.partials(a[ao], b[bo]);
                if needed[0] {
                    ga_full[flat] = grad[flat].mul(da);
                }
                if needed[1] {
                    gb_full[flat] = grad[flat].mul(db);
                }
            });
            vec![
                needed[0].then(|| reduce_to_shape(&ga_full, &backward_shape, &lhs_shape)),
                needed[1].then(|| reduce_to_shape(&gb_full, &backward_shape, &rhs_shape)),
            ]
        }),
    ))
}

/// Unary op from a value map and a local-derivative map `(x, y) -> dy/dx`.
fn unary<T: Scalar>(
    input: &Tensor<T>,
    value: impl Fn(T) -> T,
    derivative: impl Fn(T, T) -> T + 'static,
) -> Tensor<T> {
    let out: Vec<T> = input.data().iter().map(|&x| value(x)).collect();
    let shape = input.shape().to_vec();
    let input_b = input.clone();
    let out_b = out.clone();
    Tensor::from_op(
        out,
        shape,
        vec![input.clone()],
        Box::new(move |grad, _| {
            let x = input_b.data();
            let g = grad
                .iter()
                .enumerate()
                .map(|(i, &go)| go.mul(derivative(x[i], out_b[i])))
                .collect();
            vec![Some(g)]
        }),
    )
}

impl<T: Scalar> Tensor<T> {
    pub fn add(&self, rhs: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        binary(BinaryKind::Add, self, rhs)
    }

    pub fn sub(&self, rhs: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        binary(BinaryKind::Sub, self, rhs)
    }

    pub fn mul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        binary(BinaryKind::Mul, self, rhs)
    }

    pub fn div(&self, rhs: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        binary(BinaryKind::Div, self, rhs)
    }

    /// Elementwise minimum; gradient follows the smaller operand.
    pub fn minimum(&self, rhs: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        binary(BinaryKind::Min, self, rhs)
    }

    /// Elementwise maximum; gradient follows the larger operand.
    pub fn maximum(&self, rhs: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        binary(BinaryKind::Max, self, rhs)
    }

    pub fn neg(&self) -> Tensor<T> {
        unary(self, |x| x.neg(), |_, _| T::ONE.neg())
    }

    pub fn exp(&self) -> Tensor<T> {
        unary(self, |x| x.exp(), |_, y| y)
    }

    pub fn ln(&self) -> Tensor<T> {
        unary(self, |x| x.ln(), |x, _| T::ONE.div(x))
    }

    pub fn sqrt(&self) -> Tensor<T> {
        unary(self, |x| x.sqrt(), |_, y| T::from_f64(0.5).div(y))
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        unary(self, logistic, |_, y| y.mul(T::ONE.sub(y)))
    }

    pub fn softplus(&self) -> Tensor<T> {
        unary(self, softplus, |x, _| logistic(x))
    }

    pub fn relu(&self) -> Tensor<T> {
        unary(
            self,
            |x| x.maximum(T::ZERO),
            |x, _| if x > T::ZERO { T::ONE } else { T::ZERO },
        )
    }

    pub fn add_scalar(&self, c: f64) -> Tensor<T> {
        let c = T::from_f64(c);
        unary(self, move |x| x.add(c), |_, _| T::ONE)
    }

    pub fn mul_scalar(&self, c: f64) -> Tensor<T> {
        let c = T::from_f64(c);
        unary(self, move |x| x.mul(c), move |_, _| c)
    }

    /// Same data, new shape; element count must match.
    pub fn reshape(&self, new_shape: &[usize]) -> Result<Tensor<T>, TensorError> {
        let expected = numel(new_shape);
        if expected != self.numel() {
            return Err(TensorError::DataLength {
                len: self.numel(),
                shape: new_shape.to_vec(),
                expected,
            });
        }
        Ok(Tensor::from_op(
            self.to_vec(),
            new_shape.to_vec(),
            vec![self.clone()],
            Box::new(|grad, _| vec![Some(grad.to_vec())]),
        ))
    }

    /// Concatenate along `axis`. All other extents must agree.
    pub fn concat(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>, TensorError> {
        let first = parts.first().ok_or(TensorError::ShapeMismatch {
            op: "concat",
            lhs: vec![],
            rhs: vec![],
        })?;
        let rank = first.rank();
        if axis >= rank {
            return Err(TensorError::InvalidAxis {
                axis,
                shape: first.shape().to_vec(),
            });
        }
        let mut out_shape = first.shape().to_vec();
        for part in &parts[1..] {
            if part.rank() != rank
                || part.shape()[..axis] != out_shape[..axis]
                || part.shape()[axis + 1..] != out_shape[axis + 1..]
            {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape().to_vec(),
                    rhs: part.shape().to_vec(),
                });
            }
            out_shape[axis] += part.shape()[axis];
        }

        let inner: usize = out_shape[axis + 1..].iter().product();
        let outer: usize = out_shape[..axis].iter().product();
        let block_rows: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let out_row = out_shape[axis];

        let mut out = vec![T::ZERO; numel(&out_shape)];
        let mut row_start = 0;
        for (part, &rows) in parts.iter().zip(&block_rows) {
            let data = part.data();
            for o in 0..outer {
                let src = o * rows * inner;
                let dst = (o * out_row + row_start) * inner;
                out[dst..dst + rows * inner].copy_from_slice(&data[src..src + rows * inner]);
            }
            row_start += rows;
        }

        let parents: Vec<Tensor<T>> = parts.iter().map(|p| (*p).clone()).collect();
        Ok(Tensor::from_op(
            out,
            out_shape,
            parents,
            Box::new(move |grad, needed| {
                let mut grads = Vec::with_capacity(block_rows.len());
                let mut row_start = 0;
                for (idx, &rows) in block_rows.iter().enumerate() {
                    if needed[idx] {
                        let mut g = vec![T::ZERO; outer * rows * inner];
                        for o in 0..outer {
                            let src = (o * out_row + row_start) * inner;
                            let dst = o * rows * inner;
                            g[dst..dst + rows * inner]
                                .copy_from_slice(&grad[src..src + rows * inner]);
                        }
                        grads.push(Some(g));
                    } else {
                        grads.push(None);
                    }
                    row_start += rows;
                }
                grads
            }),
        ))
    }

    /// Sub-tensor at `index` along axis 0 (e.g. one channel of a CHW map).
    pub fn index_axis0(&self, index: usize) -> Result<Tensor<T>, TensorError> {
        if self.rank() == 0 {
            return Err(TensorError::RankMismatch {
                expected: 1,
                shape: vec![],
            });
        }
        let extent = self.shape()[0];
        if index >= extent {
            return Err(TensorError::IndexOutOfBounds { index, extent });
        }
        let inner: usize = self.shape()[1..].iter().product();
        let out_shape = self.shape()[1..].to_vec();
        let data = self.data()[index * inner..(index + 1) * inner].to_vec();
        let full = self.numel();
        Ok(Tensor::from_op(
            data,
            out_shape,
            vec![self.clone()],
            Box::new(move |grad, _| {
                let mut g = vec![T::ZERO; full];
                g[index * inner..(index + 1) * inner].copy_from_slice(grad);
                vec![Some(g)]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(data: &[f64], shape: &[usize]) -> Tensor<f64> {
        Tensor::leaf(data.to_vec(), shape, true).unwrap()
    }

    #[test]
    fn add_is_elementwise() {
        let out = t(&[1.0, 2.0], &[2]).add(&t(&[3.0, 4.0], &[2])).unwrap();
        assert_eq!(out.to_vec(), vec![4.0, 6.0]);
    }

    #[test]
    fn mul_by_ones_is_identity() {
        let x = t(&[1.5, -2.0, 0.0, 7.0], &[2, 2]);
        let out = x.mul(&Tensor::ones(&[2, 2])).unwrap();
        assert_eq!(out.to_vec(), x.to_vec());
    }

    #[test]
    fn mul_broadcasts_rows() {
        // [[1,2],[3,4]] * [[10,20]] -> [[10,40],[30,80]]
        let a = t(&[1.0, 2.0, 3.0, 4.0], &[2, 2]);
        let b = t(&[10.0, 20.0], &[1, 2]);
        let out = a.mul(&b).unwrap();
        assert_eq!(out.shape(), &[2, 2]);
        assert_eq!(out.to_vec(), vec![10.0, 40.0, 30.0, 80.0]);
    }

    #[test]
    fn incompatible_shapes_name_both() {
        let err = t(&[1.0, 2.0], &[2])
            .add(&t(&[1.0, 2.0, 3.0], &[3]))
            .unwrap_err();
        match err {
            TensorError::ShapeMismatch { lhs, rhs, .. } => {
                assert_eq!(lhs, vec![2]);
                assert_eq!(rhs, vec![3]);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn broadcast_gradient_sums_over_stretched_axes() {
        // s = sum(a * b) with b of shape [1,2] against a [2,2]:
        // db = column sums of a.
        let a = t(&[1.0, 2.0, 3.0, 4.0], &[2, 2]);
        let b = t(&[10.0, 20.0], &[1, 2]);
        a.mul(&b).unwrap().sum_all().unwrap().backward().unwrap();
        assert_eq!(b.grad().unwrap(), vec![4.0, 6.0]);
        assert_eq!(a.grad().unwrap(), vec![10.0, 20.0, 10.0, 20.0]);
    }

    #[test]
    fn div_gradients() {
        let a = t(&[6.0], &[1]);
        let b = t(&[3.0], &[1]);
        a.div(&b).unwrap().sum_all().unwrap().backward().unwrap();
        assert!((a.grad().unwrap()[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((b.grad().unwrap()[0] + 6.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn minimum_maximum_route_gradient_to_winner() {
        let a = t(&[1.0, 5.0], &[2]);
        let b = t(&[2.0, 3.0], &[2]);
        a.minimum(&b)
            .unwrap()
            .sum_all()
            .unwrap()
            .backward()
            .unwrap();
        assert_eq!(a.grad().unwrap(), vec![1.0, 0.0]);
        assert_eq!(b.grad().unwrap(), vec![0.0, 1.0]);

        let c = t(&[1.0, 5.0], &[2]);
        let d = t(&[2.0, 3.0], &[2]);
        c.maximum(&d)
            .unwrap()
            .sum_all()
            .unwrap()
            .backward()
            .unwrap();
        assert_eq!(c.grad().unwrap(), vec![0.0, 1.0]);
        assert_eq!(d.grad().unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn sigmoid_softplus_values() {
        let x = t(&[0.0], &[1]);
        assert!((x.sigmoid().to_vec()[0] - 0.5).abs() < 1e-15);
        assert!((x.softplus().to_vec()[0] - std::f64::consts::LN_2).abs() < 1e-15);
        // extreme logits stay finite
        let y = t(&[500.0, -500.0], &[2]);
        for v in y.sigmoid().to_vec() {
            assert!(v.is_finite());
        }
        for v in y.softplus().to_vec() {
            assert!(v.is_finite());
        }
    }

    #[test]
    fn concat_and_slice_roundtrip() {
        let a = t(&[1.0, 2.0, 3.0, 4.0], &[1, 2, 2]);
        let b = t(&[9.0, 8.0, 7.0, 6.0], &[1, 2, 2]);
        let cat = Tensor::concat(&[&a, &b], 0).unwrap();
        assert_eq!(cat.shape(), &[2, 2, 2]);
        assert_eq!(cat.index_axis0(1).unwrap().to_vec(), b.to_vec());
        cat.index_axis0(0)
            .unwrap()
            .sum_all()
            .unwrap()
            .backward()
            .unwrap();
        assert_eq!(a.grad().unwrap(), vec![1.0; 4]);
        // b tracks gradients, so it still receives a (zero) contribution.
        assert_eq!(b.grad().unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn reshape_preserves_data_and_grad() {
        let a = t(&[1.0, 2.0, 3.0, 4.0], &[2, 2]);
        let r = a.reshape(&[4]).unwrap();
        assert_eq!(r.to_vec(), a.to_vec());
        r.mul(&r).unwrap().sum_all().unwrap().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![2.0, 4.0, 6.0, 8.0]);
        assert!(a.reshape(&[3]).is_err());
    }
}
