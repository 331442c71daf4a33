//! Direct 2-D convolution (cross-correlation) on CHW maps.

use super::{Scalar, Tensor};
use crate::error::TensorError;

struct Geometry {
    c_in: usize,
    c_out: usize,
    h_in: usize,
    w_in: usize,
    h_out: usize,
    w_out: usize,
    k: usize,
    stride: usize,
    padding: usize,
}

impl Geometry {
    /// Valid output-column range for kernel column `kx`:
    /// the `ox` with `0 <= ox*stride + kx - padding < w_in`.
    fn ox_range(&self, kx: usize) -> (usize, usize) {
        let lo = if kx >= self.padding {
            0
        } else {
            (self.padding - kx).div_ceil(self.stride)
        };
        let max_ix = self.w_in + self.padding;
        if kx >= max_ix {
            return (0, 0);
        }
        let hi = ((max_ix - 1 - kx) / self.stride + 1).min(self.w_out);
        (lo.min(hi), hi)
    }
}

fn check_geometry<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Geometry, TensorError> {
    if input.rank() != 3 {
        return Err(TensorError::RankMismatch {
            expected: 3,
            shape: input.shape().to_vec(),
        });
    }
    if weight.rank() != 4 || weight.shape()[2] != weight.shape()[3] {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            lhs: input.shape().to_vec(),
            rhs: weight.shape().to_vec(),
        });
    }
    let k = weight.shape()[2];
    if k % 2 == 0 {
        return Err(TensorError::EvenKernel { kernel: k });
    }
    if weight.shape()[1] != input.shape()[0] {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            lhs: input.shape().to_vec(),
            rhs: weight.shape().to_vec(),
        });
    }
    let (h_in, w_in) = (input.shape()[1], input.shape()[2]);
    if stride == 0 || h_in + 2 * padding < k || w_in + 2 * padding < k {
        return Err(TensorError::ConvGeometry {
            input: vec![input.shape()[0], h_in, w_in],
            kernel: k,
            stride,
            padding,
        });
    }
    Ok(Geometry {
        c_in: input.shape()[0],
        c_out: weight.shape()[0],
        h_in,
        w_in,
        h_out: (h_in + 2 * padding - k) / stride + 1,
        w_out: (w_in + 2 * padding - k) / stride + 1,
        k,
        stride,
        padding,
    })
}

fn forward<T: Scalar>(x: &[T], w: &[T], bias: Option<&[T]>, g: &Geometry) -> Vec<T> {
    let plane_in = g.h_in * g.w_in;
    let plane_out = g.h_out * g.w_out;
    let mut out = vec![T::ZERO; g.c_out * plane_out];
    for co in 0..g.c_out {
        let out_plane = &mut out[co * plane_out..(co + 1) * plane_out];
        if let Some(b) = bias {
            out_plane.fill(b[co]);
        }
        for ci in 0..g.c_in {
            let in_plane = &x[ci * plane_in..(ci + 1) * plane_in];
            for ky in 0..g.k {
                for kx in 0..g.k {
                    let wv = w[((co * g.c_in + ci) * g.k + ky) * g.k + kx];
                    let (ox_lo, ox_hi) = g.ox_range(kx);
                    for oy in 0..g.h_out {
                        let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                        if iy < 0 || iy as usize >= g.h_in {
                            continue;
                        }
                        let in_row = &in_plane[iy as usize * g.w_in..];
                        let out_row = &mut out_plane[oy * g.w_out..];
                        for ox in ox_lo..ox_hi {
                            let ix = ox * g.stride + kx - g.padding;
                            out_row[ox] = out_row[ox].add(wv.mul(in_row[ix]));
                        }
                    }
                }
            }
        }
    }
    out
}

impl<T: Scalar> Tensor<T> {
    /// Convolve a `[C_in,H,W]` map with `[C_out,C_in,k,k]` weights (odd `k`)
    /// plus an optional `[C_out]` bias.
    pub fn conv2d(
        &self,
        weight: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor<T>, TensorError> {
        let g = check_geometry(self, weight, stride, padding)?;
        if let Some(b) = bias {
            if b.shape() != [g.c_out] {
                return Err(TensorError::ShapeMismatch {
                    op: "conv2d bias",
                    lhs: vec![g.c_out],
                    rhs: b.shape().to_vec(),
                });
            }
        }
        let out = forward(
            &self.data(),
            &weight.data(),
            bias.map(|b| b.data().to_vec()).as_deref(),
            &g,
        );
        let out_shape = vec![g.c_out, g.h_out, g.w_out];

        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        let (input_b, weight_b) = (self.clone(), weight.clone());
        let has_bias = bias.is_some();
        Ok(Tensor::from_op(
            out,
            out_shape,
            parents,
            Box::new(move |grad, needed| {
                let x = input_b.data();
                let w = weight_b.data();
                let plane_in = g.h_in * g.w_in;
                let plane_out = g.h_out * g.w_out;
                let mut dx = needed[0].then(|| vec![T::ZERO; x.len()]);
                let mut dw = needed[1].then(|| vec![T::ZERO; w.len()]);
                if dx.is_some() || dw.is_some() {
                    for co in 0..g.c_out {
                        let g_plane = &grad[co * plane_out..(co + 1) * plane_out];
                        for ci in 0..g.c_in {
                            let in_plane = &x[ci * plane_in..(ci + 1) * plane_in];
                            for ky in 0..g.k {
                                for kx in 0..g.k {
                                    let widx = ((co * g.c_in + ci) * g.k + ky) * g.k + kx;
                                    let wv = w[widx];
                                    let (ox_lo, ox_hi) = g.ox_range(kx);
                                    let mut wsum = T::ZERO;
                                    for oy in 0..g.h_out {
                                        let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                                        if iy < 0 || iy as usize >= g.h_in {
                                            continue;
                                        }
                                        let base_in = iy as usize * g.w_in;
                                        let g_row = &g_plane[oy * g.w_out..];
                                        for ox in ox_lo..ox_hi {
                                            let ix = ox * g.stride + kx - g.padding;
                                            let go = g_row[ox];
                                            wsum = wsum.add(go.mul(in_plane[base_in + ix]));
                                            if let Some(dx) = dx.as_mut() {
                                                let slot = ci * plane_in + base_in + ix;
                                                dx[slot] = dx[slot].add(go.mul(wv));
                                            }
                                        }
                                    }
                                    if let Some(dw) = dw.as_mut() {
                                        dw[widx] = dw[widx].add(wsum);
                                    }
                                }
                            }
                        }
                    }
                }
                let mut grads = vec![dx, dw];
                if has_bias {
                    grads.push(needed[2].then(|| {
                        (0..g.c_out)
                            .map(|co| {
                                grad[co * plane_out..(co + 1) * plane_out]
                                    .iter()
                                    .fold(T::ZERO, |acc, &v| acc.add(v))
                            })
                            .collect()
                    }));
                }
                grads
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
    fn identity_kernel_reproduces_input() {
        let x = t(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0], &[1, 3, 3]);
        let w = t(
            &[0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0],
            &[1, 1, 3, 3],
        );
        let y = x.conv2d(&w, None, 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 3, 3]);
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn box_filter_valid_mode() {
        let x = t(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0], &[1, 3, 3]);
        let w = t(&[1.0; 9], &[1, 1, 3, 3]);
        let y = x.conv2d(&w, None, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.to_vec(), vec![45.0]);
    }

    #[test]
    fn stride_two_downsamples() {
        let x = Tensor::<f64>::leaf((0..16).map(f64::from).collect(), &[1, 4, 4], false).unwrap();
        let w = t(&[1.0], &[1, 1, 1, 1]);
        let y = x.conv2d(&w, None, 2, 0).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        assert_eq!(y.to_vec(), vec![0.0, 2.0, 8.0, 10.0]);
    }

    #[test]
    fn bias_shifts_every_cell() {
        let x = t(&[1.0, 2.0, 3.0, 4.0], &[1, 2, 2]);
        let w = t(&[1.0], &[1, 1, 1, 1]);
        let b = t(&[10.0], &[1]);
        let y = x.conv2d(&w, Some(&b), 1, 0).unwrap();
        assert_eq!(y.to_vec(), vec![11.0, 12.0, 13.0, 14.0]);
    }

    #[test]
    fn rejects_even_kernels_and_bad_geometry() {
        let x = t(&[0.0; 16], &[1, 4, 4]);
        let even = t(&[0.0; 4], &[1, 1, 2, 2]);
        assert!(matches!(
            x.conv2d(&even, None, 1, 0),
            Err(TensorError::EvenKernel { kernel: 2 })
        ));
        let w = t(&[0.0; 25], &[1, 1, 5, 5]);
        assert!(matches!(
            x.conv2d(&w, None, 1, 0),
            Err(TensorError::ConvGeometry { .. })
        ));
        assert!(matches!(
            x.conv2d(&w, None, 0, 2),
            Err(TensorError::ConvGeometry { .. })
        ));
    }

    #[test]
    fn gradients_match_hand_computation() {
        // y = conv(x, w) on a 2x2 input with a 1x1 kernel of value 3:
        // sum(y) gives dx = 3 everywhere, dw = sum(x), db = 4.
        let x = t(&[1.0, 2.0, 3.0, 4.0], &[1, 2, 2]);
        let w = t(&[3.0], &[1, 1, 1, 1]);
        let b = t(&[0.0], &[1]);
        x.conv2d(&w, Some(&b), 1, 0)
            .unwrap()
            .sum_all()
            .unwrap()
            .backward()
            .unwrap();
        assert_eq!(x.grad().unwrap(), vec![3.0; 4]);
        assert_eq!(w.grad().unwrap(), vec![10.0]);
        assert_eq!(b.grad().unwrap(), vec![4.0]);
    }

    #[test]
    fn padded_conv_gradient_ignores_padding_cells() {
        let x = t(&[5.0], &[1, 1, 1]);
        let w = t(&[1.0; 9], &[1, 1, 3, 3]);
        let y = x.conv2d(&w, None, 1, 1).unwrap();
        assert_eq!(y.to_vec(), vec![5.0]);
        y.sum_all().unwrap().backward().unwrap();
        // Only the kernel centre ever touches the single input cell.
        let dw = w.grad().unwrap();
        assert_eq!(dw[4], 5.0);
        assert_eq!(dw.iter().sum::<f64>(), 5.0);
        assert_eq!(x.grad().unwrap(), vec![1.0]);
    }

    #[test]
    fn multi_channel_accumulates() {
        let x = t(&[1.0, 2.0, 10.0, 20.0], &[2, 1, 2]);
        let w = t(&[1.0, 100.0], &[1, 2, 1, 1]);
        let y = x.conv2d(&w, None, 1, 0).unwrap();
        assert_eq!(y.to_vec(), vec![1001.0, 2002.0]);
    }
}
