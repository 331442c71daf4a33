//! Focal targetness loss, centerness BCE, GIoU box regression, and their
//! weighted combination.
//!
//! Everything is computed in log-space forms that stay finite for extreme
//! logits, both as differentiable tensor maps (training) and as plain f64
//! scalar references (oracles for the maps).

use crate::error::{Error, Result};
use crate::head::{AssignmentTargets, HeadOutput};
use crate::tensor::{softplus, Scalar, Tensor};

const GIOU_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_cls: f64,
    pub lambda_cn: f64,
    pub lambda_reg: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_cls: 1.0,
            lambda_cn: 1.0,
            lambda_reg: 1.0,
            focal_alpha: 0.25,
            focal_gamma: 2.0,
        }
    }
}

/// One sample's loss decomposition; `total` stays a graph node for backward.
pub struct LossBreakdown<T: Scalar> {
    pub total: Tensor<T>,
    pub cls_term: f64,
    pub cn_term: f64,
    pub reg_term: f64,
    pub n_pos_used: usize,
}

/// Scalar focal loss reference: `-alpha_t (1-p_t)^gamma ln(p_t)` with
/// `p = logistic(logit)`.
pub fn focal_loss(logit: f64, target: f64, alpha: f64, gamma: f64) -> f64 {
    let ce = target * softplus(-logit) + (1.0 - target) * softplus(logit);
    let log_one_minus_pt = -(target * softplus(logit) + (1.0 - target) * softplus(-logit));
    let alpha_t = alpha * target + (1.0 - alpha) * (1.0 - target);
    alpha_t * (gamma * log_one_minus_pt).exp() * ce
}

/// Scalar binary cross-entropy reference (continuous targets allowed).
pub fn bce_loss(logit: f64, target: f64) -> f64 {
    target * softplus(-logit) + (1.0 - target) * softplus(logit)
}

fn binary_complement<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    t.neg().add_scalar(1.0)
}

/// Elementwise focal loss map over logits and {0,1} targets.
pub fn focal_map<T: Scalar>(
    logits: &Tensor<T>,
    targets: &Tensor<T>,
    alpha: f64,
    gamma: f64,
) -> Result<Tensor<T>> {
    let sp_pos = logits.neg().softplus(); // softplus(-z) = -ln p
    let sp_neg = logits.softplus(); // softplus(z) = -ln(1-p)
    let t = targets;
    let not_t = binary_complement(t);
    let ce = t.mul(&sp_pos)?.add(&not_t.mul(&sp_neg)?)?;
    let log_one_minus_pt = t.mul(&sp_neg)?.add(&not_t.mul(&sp_pos)?)?.neg();
    let modulator = log_one_minus_pt.mul_scalar(gamma).exp();
    let alpha_t = t.mul_scalar(alpha).add(&not_t.mul_scalar(1.0 - alpha))?;
    Ok(alpha_t.mul(&modulator)?.mul(&ce)?)
}

/// Elementwise BCE map over logits and [0,1] targets.
pub fn bce_map<T: Scalar>(logits: &Tensor<T>, targets: &Tensor<T>) -> Result<Tensor<T>> {
    let sp_pos = logits.neg().softplus();
    let sp_neg = logits.softplus();
    let not_t = binary_complement(targets);
    Ok(targets.mul(&sp_pos)?.add(&not_t.mul(&sp_neg)?)?)
}

/// Per-cell GIoU loss map (1 - GIoU) from predicted and target side
/// distances, both `[4,H,W]` (l,t,r,b planes). Both boxes contain the cell's
/// anchor point, so intersection and enclosure reduce to per-side min/max.
pub fn giou_loss_map<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    let side = |t: &Tensor<T>, i: usize| t.index_axis0(i);
    let (pl, pt, pr, pb) = (
        side(pred, 0)?,
        side(pred, 1)?,
        side(pred, 2)?,
        side(pred, 3)?,
    );
    let (tl, tt, tr, tb) = (
        side(target, 0)?,
        side(target, 1)?,
        side(target, 2)?,
        side(target, 3)?,
    );

    let inter_w = pl.minimum(&tl)?.add(&pr.minimum(&tr)?)?;
    let inter_h = pt.minimum(&tt)?.add(&pb.minimum(&tb)?)?;
    let inter = inter_w.mul(&inter_h)?;

    let area_p = pl.add(&pr)?.mul(&pt.add(&pb)?)?;
    let area_t = tl.add(&tr)?.mul(&tt.add(&tb)?)?;
    let union = area_p.add(&area_t)?.sub(&inter)?;

    let enclose_w = pl.maximum(&tl)?.add(&pr.maximum(&tr)?)?;
    let enclose_h = pt.maximum(&tt)?.add(&pb.maximum(&tb)?)?;
    let enclose = enclose_w.mul(&enclose_h)?;

    let iou = inter.div(&union.add_scalar(GIOU_EPS))?;
    let excess = enclose.sub(&union)?.div(&enclose.add_scalar(GIOU_EPS))?;
    let giou = iou.sub(&excess)?;
    Ok(giou.neg().add_scalar(1.0))
}

/// The combined objective for one sample: focal over every cell, BCE and
/// GIoU over positive cells only, each normalized by max(N_pos, 1), then
/// lambda-weighted. Multi-level outputs share a single N_pos.
pub fn total_loss<T: Scalar>(
    outputs: &[HeadOutput<T>],
    targets: &AssignmentTargets,
    weights: &LossWeights,
) -> Result<LossBreakdown<T>> {
    if outputs.len() != targets.levels.len() {
        return Err(Error::Config(format!(
            "{} head levels vs {} target levels",
            outputs.len(),
            targets.levels.len()
        )));
    }
    let mut cls_sum: Option<Tensor<T>> = None;
    let mut cn_sum: Option<Tensor<T>> = None;
    let mut reg_sum: Option<Tensor<T>> = None;
    let add_into = |slot: &mut Option<Tensor<T>>, value: Tensor<T>| -> Result<()> {
        *slot = Some(match slot.take() {
            None => value,
            Some(acc) => acc.add(&value)?,
        });
        Ok(())
    };

    for (out, level) in outputs.iter().zip(&targets.levels) {
        let expected = [level.h, level.w];
        if out.cls_logits.shape() != expected || out.stride != level.stride {
            return Err(Error::Config(format!(
                "head output grid {:?} (stride {}) does not match targets {:?} (stride {})",
                out.cls_logits.shape(),
                out.stride,
                expected,
                level.stride
            )));
        }
        let mask = level.mask_tensor::<T>();
        let cls = focal_map(
            &out.cls_logits,
            &level.cls_tensor(),
            weights.focal_alpha,
            weights.focal_gamma,
        )?
        .sum_all()?;
        let cn = bce_map(&out.ctr_logits, &level.ctr_tensor())?
            .mul(&mask)?
            .sum_all()?;
        let reg = giou_loss_map(&out.offsets, &level.box_tensor())?
            .mul(&mask)?
            .sum_all()?;
        add_into(&mut cls_sum, cls)?;
        add_into(&mut cn_sum, cn)?;
        add_into(&mut reg_sum, reg)?;
    }

    let n_pos_used = targets.n_pos.max(1);
    let norm = 1.0 / n_pos_used as f64;
    let cls = cls_sum.expect("at least one level").mul_scalar(norm);
    let cn = cn_sum.expect("at least one level").mul_scalar(norm);
    let reg = reg_sum.expect("at least one level").mul_scalar(norm);
    let total = cls
        .mul_scalar(weights.lambda_cls)
        .add(&cn.mul_scalar(weights.lambda_cn))?
        .add(&reg.mul_scalar(weights.lambda_reg))?;
    Ok(LossBreakdown {
        cls_term: cls.scalar_value()?.to_f64(),
        cn_term: cn.scalar_value()?.to_f64(),
        reg_term: reg.scalar_value()?.to_f64(),
        n_pos_used,
        total,
    })
}
