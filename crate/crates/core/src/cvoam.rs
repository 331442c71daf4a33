//! Cross-View Object Association Module: parameter-free spatial and channel
//! gates that modulate reference features with query evidence.

use crate::error::Result;
use crate::error::TensorError;
use crate::tensor::{Scalar, Tensor};

const NORM_EPS: f64 = 1e-5;

/// Everything one CVOAM pass produces; `a1`/`a2` are kept for inspection and
/// heatmap export.
pub struct CvoamTrace<T: Scalar> {
    pub a1: Tensor<T>,
    pub a2: Tensor<T>,
    pub o1: Tensor<T>,
    pub o2: Tensor<T>,
    pub fused: Tensor<T>,
}

/// Squash raw similarity scores into (0,1): standardize to zero mean / unit
/// variance (population variance, eps-guarded), then apply the logistic.
/// All-equal inputs come out at exactly 0.5.
pub fn normalize_scores<T: Scalar>(scores: &Tensor<T>) -> Result<Tensor<T>> {
    // Shift by the first score before centering. The shift cancels in exact
    // arithmetic and leaves the Jacobian untouched, but it makes all-equal
    // inputs cancel to literal zeros, so the gate lands on exactly 0.5
    // instead of 0.5 plus mean-rounding noise.
    let pivot = scores.reshape(&[scores.numel()])?.index_axis0(0)?;
    let shifted = scores.sub(&pivot)?;
    let mean = shifted.mean_all()?;
    let centered = shifted.sub(&mean)?;
    let var = centered.mul(&centered)?.mean_all()?;
    let std = var.add_scalar(NORM_EPS).sqrt();
    Ok(centered.div(&std)?.sigmoid())
}

fn check_channels<T: Scalar>(
    op: &'static str,
    f_q: &Tensor<T>,
    f_r: &Tensor<T>,
) -> Result<(), TensorError> {
    if f_q.rank() != 3 {
        return Err(TensorError::RankMismatch {
            expected: 3,
            shape: f_q.shape().to_vec(),
        });
    }
    if f_r.rank() != 3 || f_q.shape()[0] != f_r.shape()[0] {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: f_q.shape().to_vec(),
            rhs: f_r.shape().to_vec(),
        });
    }
    Ok(())
}

/// Spatial gate: pool the query over space, score every reference cell by
/// its channel-wise agreement with that pooled vector, and reweight f_r.
pub fn spatial_gate<T: Scalar>(f_q: &Tensor<T>, f_r: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    check_channels("spatial_gate", f_q, f_r)?;
    let c = f_r.shape()[0];
    let q = f_q.mean_axes(&[1, 2], false)?.reshape(&[c, 1, 1])?;
    let similarity = f_r.mul(&q)?.sum_axes(&[0], false)?;
    let a1 = normalize_scores(&similarity)?;
    let gate = a1.reshape(&[1, f_r.shape()[1], f_r.shape()[2]])?;
    let o1 = f_r.mul(&gate)?;
    Ok((a1, o1))
}

/// Channel gate: pool the query over channels, resample that map onto the
/// reference grid, score every reference channel against it, and reweight.
pub fn channel_gate<T: Scalar>(f_q: &Tensor<T>, f_r: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    check_channels("channel_gate", f_q, f_r)?;
    let (c, h2, w2) = (f_r.shape()[0], f_r.shape()[1], f_r.shape()[2]);
    let m = f_q.mean_axes(&[0], true)?; // [1,H1,W1]
    let m_resized = m.resize_bilinear(h2, w2)?.reshape(&[1, h2 * w2])?;
    let f_r_mat = f_r.reshape(&[c, h2 * w2])?.transpose()?; // [H2*W2, C]
    let scores = m_resized.matmul(&f_r_mat)?.reshape(&[c])?;
    let a2 = normalize_scores(&scores)?;
    let o2 = f_r.mul(&a2.reshape(&[c, 1, 1])?)?;
    Ok((a2, o2))
}

/// Element-wise sum of the two gated maps.
pub fn fuse<T: Scalar>(o1: &Tensor<T>, o2: &Tensor<T>) -> Result<Tensor<T>> {
    if o1.shape() != o2.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "fuse",
            lhs: o1.shape().to_vec(),
            rhs: o2.shape().to_vec(),
        }
        .into());
    }
    Ok(o1.add(o2)?)
}

/// Full module: both gates plus fusion. Holds no trainable state.
pub fn cvoam<T: Scalar>(f_q: &Tensor<T>, f_r: &Tensor<T>) -> Result<CvoamTrace<T>> {
    let (a1, o1) = spatial_gate(f_q, f_r)?;
    let (a2, o2) = channel_gate(f_q, f_r)?;
    let fused = fuse(&o1, &o2)?;
    Ok(CvoamTrace {
        a1,
        a2,
        o1,
        o2,
        fused,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(data: Vec<f64>, shape: &[usize]) -> Tensor<f64> {
        Tensor::leaf(data, shape, true).unwrap()
    }

    #[test]
    fn all_equal_scores_normalize_to_exactly_half() {
        let s = t(vec![3.7; 6], &[6]);
        let n = normalize_scores(&s).unwrap();
        for v in n.to_vec() {
            assert_eq!(v, 0.5);
        }
    }

    #[test]
    fn normalized_scores_stay_in_open_unit_interval_and_keep_order() {
        let s = t(vec![-100.0, -1.0, 0.0, 2.0, 1e4], &[5]);
        let n = normalize_scores(&s).unwrap().to_vec();
        for v in &n {
            assert!(*v > 0.0 && *v < 1.0);
        }
        for pair in n.windows(2) {
            assert!(pair[0] < pair[1]);
        }
    }

    #[test]
    fn spatial_gate_matches_hand_dot_product() {
        // Pooled query (1,0); single reference cell (3,4): similarity 3.
        let f_q = t(vec![1.0, 0.0], &[2, 1, 1]);
        let f_r = t(vec![3.0, 4.0], &[2, 1, 1]);
        let q = f_q.mean_axes(&[1, 2], false).unwrap();
        let sim = f_r
            .mul(&q.reshape(&[2, 1, 1]).unwrap())
            .unwrap()
            .sum_axes(&[0], false)
            .unwrap();
        assert_eq!(sim.to_vec(), vec![3.0]);
        // Single score standardizes to 0 -> gate is exactly 0.5.
        let (a1, o1) = spatial_gate(&f_q, &f_r).unwrap();
        assert_eq!(a1.to_vec(), vec![0.5]);
        assert_eq!(o1.to_vec(), vec![1.5, 2.0]);
    }

    #[test]
    fn constant_reference_gives_uniform_spatial_gate() {
        let f_q = t(vec![0.3, -0.1, 0.7, 0.2], &[1, 2, 2]);
        let f_r = t(vec![2.0; 9], &[1, 3, 3]);
        let (a1, o1) = spatial_gate(&f_q, &f_r).unwrap();
        for v in a1.to_vec() {
            assert_eq!(v, 0.5);
        }
        for v in o1.to_vec() {
            assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn zero_query_gives_uniform_gate_times_reference() {
        let f_q = t(vec![0.0; 8], &[2, 2, 2]);
        let f_r = t(vec![1.0, -2.0, 3.0, 0.5, 4.0, 2.0, -1.0, 0.0], &[2, 2, 2]);
        let (a1, o1) = spatial_gate(&f_q, &f_r).unwrap();
        for v in a1.to_vec() {
            assert_eq!(v, 0.5);
        }
        let expect: Vec<f64> = f_r.to_vec().iter().map(|v| v * 0.5).collect();
        assert_eq!(o1.to_vec(), expect);
    }

    #[test]
    fn channel_gate_scores_match_hand_computation() {
        // Channel-mean of the query is a constant 2.0 map, so the
        // pre-normalization score of channel k is 2 * sum of its plane.
        let f_q = t(vec![2.0; 8], &[2, 2, 2]);
        let f_r = t(vec![1.0, 2.0, 3.0, 4.0, -1.0, 0.0, 1.0, 2.0], &[2, 2, 2]);
        let m = f_q.mean_axes(&[0], true).unwrap();
        let m2 = m.resize_bilinear(2, 2).unwrap().reshape(&[1, 4]).unwrap();
        let fr_mat = f_r.reshape(&[2, 4]).unwrap().transpose().unwrap();
        let scores = m2.matmul(&fr_mat).unwrap();
        assert_eq!(scores.to_vec(), vec![20.0, 4.0]);

        let (a2, o2) = channel_gate(&f_q, &f_r).unwrap();
        assert_eq!(a2.shape(), &[2]);
        let a = a2.to_vec();
        assert!(a[0] > a[1]);
        let o = o2.to_vec();
        for (k, gate) in a.iter().enumerate() {
            for j in 0..4 {
                assert!((o[k * 4 + j] - gate * f_r.to_vec()[k * 4 + j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_reference_gives_zero_gated_output() {
        let f_q = t(vec![0.5; 4], &[1, 2, 2]);
        let f_r = t(vec![0.0; 16], &[1, 4, 4]);
        let (_, o2) = channel_gate(&f_q, &f_r).unwrap();
        assert_eq!(o2.to_vec(), vec![0.0; 16]);
    }

    #[test]
    fn shapes_are_preserved_and_checked() {
        let f_q = t(vec![0.1; 4 * 8 * 8], &[4, 8, 8]);
        let f_r = t(vec![0.2; 4 * 16 * 16], &[4, 16, 16]);
        let trace = cvoam(&f_q, &f_r).unwrap();
        assert_eq!(trace.fused.shape(), f_r.shape());
        assert_eq!(trace.a1.shape(), &[16, 16]);
        assert_eq!(trace.a2.shape(), &[4]);

        let mismatched = t(vec![0.0; 3 * 4], &[3, 2, 2]);
        assert!(spatial_gate(&mismatched, &f_r).is_err());
        assert!(channel_gate(&mismatched, &f_r).is_err());
    }

    #[test]
    fn fuse_adds_elementwise_and_rejects_mismatch() {
        let x = t(vec![1.0, 2.0], &[2, 1, 1]);
        let zero = t(vec![0.0, 0.0], &[2, 1, 1]);
        assert_eq!(fuse(&zero, &x).unwrap().to_vec(), x.to_vec());
        assert_eq!(fuse(&x, &x).unwrap().to_vec(), vec![2.0, 4.0]);
        let y = t(vec![1.0], &[1, 1, 1]);
        assert!(fuse(&x, &y).is_err());
    }

    #[test]
    fn gradients_reach_both_inputs() {
        let f_q = t(vec![0.3, -0.2, 0.5, 0.1, 0.9, -0.4, 0.2, 0.6], &[2, 2, 2]);
        let f_r = t(
            vec![
                0.7, 0.1, -0.3, 0.2, 0.5, -0.1, 0.4, 0.8, 0.15, -0.25, 0.35, 0.45, 0.55, 0.65,
                -0.75, 0.85, 0.2, 0.3,
            ],
            &[2, 3, 3],
        );
        cvoam(&f_q, &f_r)
            .unwrap()
            .fused
            .sum_all()
            .unwrap()
            .backward()
            .unwrap();
        let gq = f_q.grad().unwrap();
        let gr = f_r.grad().unwrap();
        assert!(gq.iter().any(|g| g.abs() > 1e-9));
        assert!(gr.iter().any(|g| g.abs() > 1e-9));
        assert!(gq.iter().chain(&gr).all(|g| g.is_finite()));
    }

    #[test]
    fn spatial_gate_is_permutation_equivariant() {
        let f_q = t(vec![0.4, -0.6, 0.2, 0.8], &[1, 2, 2]);
        let cells = [0.9, -0.3, 0.5, 0.1];
        let f_r = t(cells.to_vec(), &[1, 2, 2]);
        // Reverse the spatial cells.
        let perm: Vec<f64> = cells.iter().rev().copied().collect();
        let f_r_perm = t(perm, &[1, 2, 2]);
        let (a1, _) = spatial_gate(&f_q, &f_r).unwrap();
        let (a1p, _) = spatial_gate(&f_q, &f_r_perm).unwrap();
        let mut reversed = a1.to_vec();
        reversed.reverse();
        for (a, b) in reversed.iter().zip(a1p.to_vec()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
