//! Shape arithmetic shared by the elementwise and reduction kernels.

use crate::error::TensorError;

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Row-major strides for `shape`.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut out = vec![1; shape.len()];
    let mut acc = 1;
    for (slot, &extent) in out.iter_mut().zip(shape.iter()).rev() {
        *slot = acc;
        acc *= extent;
    }
    out
}

/// Broadcast shape of `lhs` and `rhs` under trailing-dimension rules: shapes
/// align on the right, and a size-1 (or missing) extent stretches.
pub fn broadcast_shape(
    op: &'static str,
    lhs: &[usize],
    rhs: &[usize],
) -> Result<Vec<usize>, TensorError> {
    let rank = lhs.len().max(rhs.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let a = dim_from_right(lhs, rank, i);
        let b = dim_from_right(rhs, rank, i);
        out[i] = if a == b {
            a
        } else if a == 1 {
            b
        } else if b == 1 {
            a
        } else {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: lhs.to_vec(),
                rhs: rhs.to_vec(),
            });
        };
    }
    Ok(out)
}

fn dim_from_right(shape: &[usize], rank: usize, i: usize) -> usize {
    let pad = rank - shape.len();
    if i < pad {
        1
    } else {
        shape[i - pad]
    }
}

/// Strides of `shape` viewed at `rank` dimensions, with broadcast (size-1 or
/// padded) dimensions given stride 0 so they never advance the offset.
pub fn broadcast_strides(shape: &[usize], rank: usize) -> Vec<usize> {
    let own = strides(shape);
    let pad = rank - shape.len();
    let mut out = vec![0usize; rank];
    for i in pad..rank {
        if shape[i - pad] != 1 {
            out[i] = own[i - pad];
        }
    }
    out
}

/// Walks every position of `shape` in row-major order, reporting the flat
/// offsets into two broadcast operands.
pub fn for_each_broadcast(
    shape: &[usize],
    lhs_strides: &[usize],
    rhs_strides: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let total = numel(shape);
    if total == 0 {
        return;
    }
    let rank = shape.len();
    let mut coords = vec![0usize; rank];
    let mut a_off = 0usize;
    let mut b_off = 0usize;
    for flat in 0..total {
        f(flat, a_off, b_off);
        for d in (0..rank).rev() {
            coords[d] += 1;
            a_off += lhs_strides[d];
            b_off += rhs_strides[d];
            if coords[d] < shape[d] {
                break;
            }
            a_off -= shape[d] * lhs_strides[d];
            b_off -= shape[d] * rhs_strides[d];
            coords[d] = 0;
        }
    }
}

/// Folds a gradient computed at `full_shape` back onto an operand of
/// `target_shape` by summing over the axes the operand was broadcast along.
pub fn reduce_to_shape<T: crate::tensor::Scalar>(
    full: &[T],
    full_shape: &[usize],
    target_shape: &[usize],
) -> Vec<T> {
    if full_shape == target_shape {
        return full.to_vec();
    }
    let rank = full_shape.len();
    let target_strides = broadcast_strides(target_shape, rank);
    let mut out = vec![T::ZERO; numel(target_shape)];
    let zero = vec![0usize; rank];
    for_each_broadcast(full_shape, &target_strides, &zero, |flat, t_off, _| {
        out[t_off] = out[t_off].add(full[flat]);
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_shapes_follow_trailing_rules() {
        assert_eq!(broadcast_shape("t", &[2, 3], &[2, 3]).unwrap(), vec![2, 3]);
        assert_eq!(broadcast_shape("t", &[2, 3], &[3]).unwrap(), vec![2, 3]);
        assert_eq!(broadcast_shape("t", &[2, 1], &[1, 4]).unwrap(), vec![2, 4]);
        assert_eq!(broadcast_shape("t", &[], &[5]).unwrap(), vec![5]);
        assert!(broadcast_shape("t", &[2, 3], &[4]).is_err());
    }

    #[test]
    fn reduce_to_shape_sums_broadcast_axes() {
        // full [2,2] -> target [1,2]: columns summed over rows
        let full = [1.0f64, 2.0, 3.0, 4.0];
        assert_eq!(reduce_to_shape(&full, &[2, 2], &[1, 2]), vec![4.0, 6.0]);
        assert_eq!(reduce_to_shape(&full, &[2, 2], &[2, 1]), vec![3.0, 7.0]);
        assert_eq!(reduce_to_shape(&full, &[2, 2], &[]), vec![10.0]);
    }

    #[test]
    fn strides_are_row_major() {
        assert_eq!(strides(&[2, 3, 4]), vec![12, 4, 1]);
        assert_eq!(strides(&[]), Vec::<usize>::new());
    }
}
