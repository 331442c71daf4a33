//! Corner-aligned bilinear resampling of CHW maps.

use super::{Scalar, Tensor};
use crate::error::TensorError;

/// Per output index: the two source indices and the blend weight of the
/// second one. Corner-aligned, so index 0 and the last index land exactly on
/// the source endpoints.
fn axis_table<T: Scalar>(in_len: usize, out_len: usize) -> Vec<(usize, usize, T)> {
    (0..out_len)
        .map(|i| {
            if out_len == 1 || in_len == 1 {
                return (0, 0, T::ZERO);
            }
            let src = i as f64 * (in_len - 1) as f64 / (out_len - 1) as f64;
            let lo = (src.floor() as usize).min(in_len - 1);
            let hi = (lo + 1).min(in_len - 1);
            (lo, hi, T::from_f64(src - lo as f64))
        })
        .collect()
}

impl<T: Scalar> Tensor<T> {
    /// Resample a `[C,H,W]` map to `[C,h,w]` with bilinear interpolation.
    pub fn resize_bilinear(&self, h: usize, w: usize) -> Result<Tensor<T>, TensorError> {
        if self.rank() != 3 {
            return Err(TensorError::RankMismatch {
                expected: 3,
                shape: self.shape().to_vec(),
            });
        }
        if h == 0 || w == 0 {
            return Err(TensorError::DataLength {
                len: 0,
                shape: vec![self.shape()[0], h, w],
                expected: 1,
            });
        }
        let (c, h_in, w_in) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let ys = axis_table::<T>(h_in, h);
        let xs = axis_table::<T>(w_in, w);

        let mut out = vec![T::ZERO; c * h * w];
        {
            let data = self.data();
            for ch in 0..c {
                let plane = &data[ch * h_in * w_in..(ch + 1) * h_in * w_in];
                for (oy, &(y0, y1, wy)) in ys.iter().enumerate() {
                    let r0 = &plane[y0 * w_in..(y0 + 1) * w_in];
                    let r1 = &plane[y1 * w_in..(y1 + 1) * w_in];
                    let out_row = &mut out[(ch * h + oy) * w..(ch * h + oy + 1) * w];
                    for (ox, &(x0, x1, wx)) in xs.iter().enumerate() {
                        let top = r0[x0].add(wx.mul(r0[x1].sub(r0[x0])));
                        let bot = r1[x0].add(wx.mul(r1[x1].sub(r1[x0])));
                        out_row[ox] = top.add(wy.mul(bot.sub(top)));
                    }
                }
            }
        }

        let in_numel = self.numel();
        Ok(Tensor::from_op(
            out,
            vec![c, h, w],
            vec![self.clone()],
            Box::new(move |grad, _| {
                let mut g = vec![T::ZERO; in_numel];
                for ch in 0..c {
                    let plane = &mut g[ch * h_in * w_in..(ch + 1) * h_in * w_in];
                    for (oy, &(y0, y1, wy)) in ys.iter().enumerate() {
                        for (ox, &(x0, x1, wx)) in xs.iter().enumerate() {
                            let go = grad[(ch * h + oy) * w + ox];
                            let one = T::ONE;
                            let w00 = one.sub(wy).mul(one.sub(wx));
                            let w01 = one.sub(wy).mul(wx);
                            let w10 = wy.mul(one.sub(wx));
                            let w11 = wy.mul(wx);
                            plane[y0 * w_in + x0] = plane[y0 * w_in + x0].add(go.mul(w00));
                            plane[y0 * w_in + x1] = plane[y0 * w_in + x1].add(go.mul(w01));
                            plane[y1 * w_in + x0] = plane[y1 * w_in + x0].add(go.mul(w10));
                            plane[y1 * w_in + x1] = plane[y1 * w_in + x1].add(go.mul(w11));
                        }
                    }
                }
                vec![Some(g)]
            }),
        ))
    }
}
