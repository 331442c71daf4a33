//! Reductions over one or more axes.

use super::shape::{numel, strides};
use super::{Scalar, Tensor};
use crate::error::TensorError;

/// Validates `axes` against `shape` and returns a per-axis "reduced" mask.
fn reduce_mask(shape: &[usize], axes: &[usize]) -> Result<Vec<bool>, TensorError> {
    let mut mask = vec![false; shape.len()];
    for &axis in axes {
        if axis >= shape.len() || mask[axis] {
            return Err(TensorError::InvalidAxis {
                axis,
                shape: shape.to_vec(),
            });
        }
        mask[axis] = true;
    }
    Ok(mask)
}

fn kept_shape(shape: &[usize], mask: &[bool], keep: bool) -> Vec<usize> {
    let mut out = Vec::new();
    for (dim, (&extent, &reduced)) in shape.iter().zip(mask).enumerate() {
        let _ = dim;
        if !reduced {
            out.push(extent);
        } else if keep {
            out.push(1);
        }
    }
    out
}

/// For every input flat index, the flat index of the output cell it reduces
/// into (with reduced axes collapsed to extent 1).
fn scatter_map(shape: &[usize], mask: &[bool]) -> Vec<usize> {
    let collapsed: Vec<usize> = shape
        .iter()
        .zip(mask)
        .map(|(&extent, &reduced)| if reduced { 1 } else { extent })
        .collect();
    let out_strides = strides(&collapsed);
    let total = numel(shape);
    let mut map = vec![0usize; total];
    let mut coords = vec![0usize; shape.len()];
    for slot in map.iter_mut() {
        let mut flat = 0;
        for d in 0..shape.len() {
            if !mask[d] {
                flat += coords[d] * out_strides[d];
            }
        }
        *slot = flat;
        for d in (0..shape.len()).rev() {
            coords[d] += 1;
            if coords[d] < shape[d] {
                break;
            }
            coords[d] = 0;
        }
    }
    map
}

impl<T: Scalar> Tensor<T> {
    /// Sum over `axes`; reduced axes stay as extent 1 when `keep` is set.
    pub fn sum_axes(&self, axes: &[usize], keep: bool) -> Result<Tensor<T>, TensorError> {
        let mask = reduce_mask(self.shape(), axes)?;
        let out_shape = kept_shape(self.shape(), &mask, keep);
        let map = scatter_map(self.shape(), &mask);
        let mut out = vec![T::ZERO; numel(&out_shape)];
        {
            let data = self.data();
            for (i, &slot) in map.iter().enumerate() {
                out[slot] = out[slot].add(data[i]);
            }
        }
        let total = self.numel();
        Ok(Tensor::from_op(
            out,
            out_shape,
            vec![self.clone()],
            Box::new(move |grad, _| {
                let mut g = vec![T::ZERO; total];
                for (i, &slot) in map.iter().enumerate() {
                    g[i] = grad[slot];
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Mean over `axes`.
    pub fn mean_axes(&self, axes: &[usize], keep: bool) -> Result<Tensor<T>, TensorError> {
        let mask = reduce_mask(self.shape(), axes)?;
        let count: usize = self
            .shape()
            .iter()
            .zip(&mask)
            .filter(|(_, &reduced)| reduced)
            .map(|(&extent, _)| extent)
            .product();
        if count == 0 {
            return Err(TensorError::EmptyReduce {
                shape: self.shape().to_vec(),
            });
        }
        Ok(self.sum_axes(axes, keep)?.mul_scalar(1.0 / count as f64))
    }

    /// Sum of every element, as a rank-0 tensor.
    pub fn sum_all(&self) -> Result<Tensor<T>, TensorError> {
        let all: Vec<usize> = (0..self.rank()).collect();
        self.sum_axes(&all, false)
    }

    /// Mean of every element, as a rank-0 tensor.
    pub fn mean_all(&self) -> Result<Tensor<T>, TensorError> {
        if self.numel() == 0 {
            return Err(TensorError::EmptyReduce {
                shape: self.shape().to_vec(),
            });
        }
        Ok(self.sum_all()?.mul_scalar(1.0 / self.numel() as f64))
    }

    /// Max over `axes`; gradient routes to the first maximal element of each
    /// reduced group.
    pub fn max_axes(&self, axes: &[usize], keep: bool) -> Result<Tensor<T>, TensorError> {
        let mask = reduce_mask(self.shape(), axes)?;
        if self.numel() == 0 {
            return Err(TensorError::EmptyReduce {
                shape: self.shape().to_vec(),
            });
        }
        let out_shape = kept_shape(self.shape(), &mask, keep);
        let map = scatter_map(self.shape(), &mask);
        let out_len = numel(&out_shape);
        let mut out = vec![T::NEG_INFINITY; out_len];
        let mut argmax = vec![usize::MAX; out_len];
        {
            let data = self.data();
            for (i, &slot) in map.iter().enumerate() {
                if argmax[slot] == usize::MAX || data[i] > out[slot] {
                    out[slot] = data[i];
                    argmax[slot] = i;
                }
            }
        }
        let total = self.numel();
        Ok(Tensor::from_op(
            out,
            out_shape,
            vec![self.clone()],
            Box::new(move |grad, _| {
                let mut g = vec![T::ZERO; total];
                for (slot, &i) in argmax.iter().enumerate() {
                    g[i] = g[i].add(grad[slot]);
                }
                vec![Some(g)]
            }),
        ))
    }
}
