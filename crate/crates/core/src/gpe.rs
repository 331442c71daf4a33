//! Gaussian Position Encoding: a click-centered spatial prior with a
//! learnable spread, injected into the query features.

use crate::error::TensorError;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Click location in the coordinate frame of whatever grid is being encoded
/// (image pixels or feature cells); `row` indexes height, `col` width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClickPoint {
    pub row: f64,
    pub col: f64,
}

impl ClickPoint {
    /// Rescale from image pixels to a feature grid by the exact extent
    /// ratio; the Gaussian center may land between cells.
    pub fn to_grid(self, image_hw: (usize, usize), grid_hw: (usize, usize)) -> ClickPoint {
        ClickPoint {
            row: self.row * grid_hw.0 as f64 / image_hw.0 as f64,
            col: self.col * grid_hw.1 as f64 / image_hw.1 as f64,
        }
    }
}

/// Spread floor applied under the softplus mapping, in grid cells.
pub const SIGMA_FLOOR: f64 = 0.5;

/// Default initial effective spread for an HxW grid.
pub fn default_sigma_init(h: usize, w: usize) -> f64 {
    h.max(w) as f64 / 8.0
}

/// Raw parameter value whose effective sigma equals `sigma_init`
/// (inverse of `floor + softplus(raw)`).
pub fn raw_for_sigma(sigma_init: f64, floor: f64) -> Result<f64> {
    let gap = sigma_init - floor;
    if !(gap > 0.0) {
        return Err(Error::Config(format!(
            "sigma_init {sigma_init} must exceed the floor {floor}"
        )));
    }
    // ln(e^y - 1), switching to the asymptote once e^y overflows precision.
    Ok(if gap > 20.0 {
        gap
    } else {
        (gap.exp() - 1.0).ln()
    })
}

/// `floor + softplus(raw)`: strictly positive, smooth in the raw parameter.
pub fn effective_sigma<T: Scalar>(raw: &Tensor<T>, floor: f64) -> Tensor<T> {
    raw.softplus().add_scalar(floor)
}

/// The encoding map `P(i,j) = exp(-dist((i,j), click)^2 / (2 sigma_eff^2))`
/// over an HxW grid, differentiable in the raw sigma parameter.
pub fn gpe_map<T: Scalar>(
    h: usize,
    w: usize,
    click: ClickPoint,
    raw_sigma: &Tensor<T>,
    floor: f64,
) -> Result<Tensor<T>> {
    if !(click.row.is_finite() && click.col.is_finite())
        || click.row < 0.0
        || click.col < 0.0
        || click.row >= h as f64
        || click.col >= w as f64
    {
        return Err(Error::ClickOutsideGrid {
            row: click.row,
            col: click.col,
            height: h,
            width: w,
        });
    }
    let mut d2 = Vec::with_capacity(h * w);
    for i in 0..h {
        let dy = i as f64 - click.row;
        for j in 0..w {
            let dx = j as f64 - click.col;
            d2.push(T::from_f64(dy * dy + dx * dx));
        }
    }
    let d2 = Tensor::leaf(d2, &[h, w], false)?;
    let sigma = effective_sigma(raw_sigma, floor);
    let two_sigma_sq = sigma.mul(&sigma)?.mul_scalar(2.0);
    Ok(d2.div(&two_sigma_sq)?.neg().exp())
}

/// Concatenate the encoding map onto the query features as an extra channel
/// and project back to C channels with a 1x1 convolution.
pub fn inject_gpe<T: Scalar>(
    f_q: &Tensor<T>,
    p_map: &Tensor<T>,
    proj: &Tensor<T>,
) -> Result<Tensor<T>> {
    if f_q.rank() != 3 {
        return Err(TensorError::RankMismatch {
            expected: 3,
            shape: f_q.shape().to_vec(),
        }
        .into());
    }
    let c = f_q.shape()[0];
    if p_map.shape() != &f_q.shape()[1..] {
        return Err(TensorError::ShapeMismatch {
            op: "inject_gpe",
            lhs: f_q.shape().to_vec(),
            rhs: p_map.shape().to_vec(),
        }
        .into());
    }
    if proj.shape() != [c, c + 1, 1, 1] {
        return Err(TensorError::ShapeMismatch {
            op: "inject_gpe projection",
            lhs: vec![c, c + 1, 1, 1],
            rhs: proj.shape().to_vec(),
        }
        .into());
    }
    let map3 = p_map.reshape(&[1, p_map.shape()[0], p_map.shape()[1]])?;
    let stacked = Tensor::concat(&[f_q, &map3], 0)?;
    Ok(stacked.conv2d(proj, None, 1, 0)?)
}
