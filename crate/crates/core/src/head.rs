//! Anchor-free localization head: per-cell targetness, centerness, and
//! 4-direction offsets, with training-time label assignment and top-1
//! decoding.

use serde::{Deserialize, Serialize};

use crate::boxes::{DecodedBox, GtBox};
use crate::error::TensorError;
use crate::error::{Error, Result};
use crate::tensor::{logistic, Scalar, Tensor};

/// Feature-level layout. Level `i` runs at `strides[i]` pixels per cell and
/// handles objects whose largest side offset falls in
/// `(scale_breaks[i-1], scale_breaks[i]]`, with 0 and infinity at the ends;
/// the breaks therefore partition (0, inf) contiguously.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub strides: Vec<usize>,
    pub scale_breaks: Vec<f64>,
    pub radius_rho: f64,
}

/// Disk radius in stride multiples when the config gives none.
pub const DEFAULT_RHO: f64 = 1.5;

impl HeadConfig {
    pub fn single_level(stride: usize) -> Self {
        Self {
            strides: vec![stride],
            scale_breaks: Vec::new(),
            radius_rho: DEFAULT_RHO,
        }
    }

    pub fn three_level() -> Self {
        Self {
            strides: vec![8, 16, 32],
            scale_breaks: vec![64.0, 128.0],
            radius_rho: DEFAULT_RHO,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.strides.is_empty() || self.strides.iter().any(|&s| s == 0) {
            return Err(Error::Config(format!(
                "head strides must be non-empty and positive, got {:?}",
                self.strides
            )));
        }
        if self.scale_breaks.len() + 1 != self.strides.len() {
            return Err(Error::Config(format!(
                "{} strides need {} scale breaks, got {}",
                self.strides.len(),
                self.strides.len() - 1,
                self.scale_breaks.len()
            )));
        }
        let mut prev = 0.0;
        for &b in &self.scale_breaks {
            if !(b > prev) {
                return Err(Error::Config(format!(
                    "scale breaks must be strictly increasing and positive, got {:?}",
                    self.scale_breaks
                )));
            }
            prev = b;
        }
        if !(self.radius_rho > 0.0) {
            return Err(Error::Config(format!(
                "radius_rho must be positive, got {}",
                self.radius_rho
            )));
        }
        Ok(())
    }

    pub fn num_levels(&self) -> usize {
        self.strides.len()
    }

    /// Half-open scale interval `(lo, hi]` handled by `level`.
    pub fn scale_range(&self, level: usize) -> (f64, f64) {
        let lo = if level == 0 {
            0.0
        } else {
            self.scale_breaks[level - 1]
        };
        let hi = self
            .scale_breaks
            .get(level)
            .copied()
            .unwrap_or(f64::INFINITY);
        (lo, hi)
    }
}

/// One level of raw head predictions. `offsets` holds the four side
/// distances (l,t,r,b) as planes, already mapped to non-negative pixels.
#[derive(Debug, Clone)]
pub struct HeadOutput<T: Scalar> {
    pub cls_logits: Tensor<T>,
    pub ctr_logits: Tensor<T>,
    pub offsets: Tensor<T>,
    pub stride: usize,
}

/// Positive side distances from raw predictions: `stride * exp(raw)`.
pub fn offsets_from_raw<T: Scalar>(raw: &Tensor<T>, stride: usize) -> Tensor<T> {
    raw.exp().mul_scalar(stride as f64)
}

/// The image point a grid cell represents (cell centers, not corners).
pub fn cell_point(x: usize, y: usize, stride: usize) -> (f64, f64) {
    (
        (x as f64 + 0.5) * stride as f64,
        (y as f64 + 0.5) * stride as f64,
    )
}

/// Per-level training targets, row-major over the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelTargets {
    pub h: usize,
    pub w: usize,
    pub stride: usize,
    /// Targetness c* in {0,1}.
    pub cls: Vec<f64>,
    /// Centerness s* in [0,1], zero at negatives.
    pub ctr: Vec<f64>,
    /// Side distances (l*,t*,r*,b*) as four planes, zero at negatives.
    pub boxes: Vec<f64>,
    pub positive: Vec<bool>,
}

impl LevelTargets {
    pub fn cls_tensor<T: Scalar>(&self) -> Tensor<T> {
        constant(&self.cls, &[self.h, self.w])
    }

    pub fn ctr_tensor<T: Scalar>(&self) -> Tensor<T> {
        constant(&self.ctr, &[self.h, self.w])
    }

    pub fn box_tensor<T: Scalar>(&self) -> Tensor<T> {
        constant(&self.boxes, &[4, self.h, self.w])
    }

    pub fn mask_tensor<T: Scalar>(&self) -> Tensor<T> {
        let mask: Vec<f64> = self
            .positive
            .iter()
            .map(|&p| if p { 1.0 } else { 0.0 })
            .collect();
        constant(&mask, &[self.h, self.w])
    }
}

fn constant<T: Scalar>(data: &[f64], shape: &[usize]) -> Tensor<T> {
    let v = data.iter().map(|&x| T::from_f64(x)).collect();
    Tensor::leaf(v, shape, false).expect("target buffers always match their shape")
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentTargets {
    pub levels: Vec<LevelTargets>,
    pub n_pos: usize,
}

/// Assign ground-truth boxes to grid cells. A cell is positive for a box
/// when (1) its image point lies strictly inside the box, (2) the point is
/// within `rho * stride` of the box center, and (3) the largest side
/// distance falls in the level's scale range. Multiple qualifying boxes
/// resolve to the smallest area (first listed on exact area ties).
pub fn assign_targets(
    grids: &[(usize, usize)],
    gt_boxes: &[GtBox],
    cfg: &HeadConfig,
) -> Result<AssignmentTargets> {
    cfg.validate()?;
    if grids.len() != cfg.strides.len() {
        return Err(Error::Config(format!(
            "{} grids supplied for {} head levels",
            grids.len(),
            cfg.strides.len()
        )));
    }
    let mut levels = Vec::with_capacity(grids.len());
    let mut n_pos = 0;
    for (level, &(h, w)) in grids.iter().enumerate() {
        let stride = cfg.strides[level];
        let (scale_lo, scale_hi) = cfg.scale_range(level);
        let radius = cfg.radius_rho * stride as f64;
        let radius_sq = radius * radius;

        let mut out = LevelTargets {
            h,
            w,
            stride,
            cls: vec![0.0; h * w],
            ctr: vec![0.0; h * w],
            boxes: vec![0.0; 4 * h * w],
            positive: vec![false; h * w],
        };
        for y in 0..h {
            for x in 0..w {
                let (px, py) = cell_point(x, y, stride);
                let mut winner: Option<(f64, usize)> = None; // (area, box index)
                for (idx, gt) in gt_boxes.iter().enumerate() {
                    if !gt.contains(px, py) {
                        continue;
                    }
                    let (cx, cy) = gt.center();
                    let d2 = (px - cx) * (px - cx) + (py - cy) * (py - cy);
                    if d2 > radius_sq {
                        continue;
                    }
                    let l = px - gt.x_min;
                    let t = py - gt.y_min;
                    let r = gt.x_max - px;
                    let b = gt.y_max - py;
                    let max_side = l.max(t).max(r).max(b);
                    if !(max_side > scale_lo && max_side <= scale_hi) {
                        continue;
                    }
                    let area = gt.area();
                    if winner.map_or(true, |(best, _)| area < best) {
                        winner = Some((area, idx));
                    }
                }
                if let Some((_, idx)) = winner {
                    let gt = &gt_boxes[idx];
                    let l = px - gt.x_min;
                    let t = py - gt.y_min;
                    let r = gt.x_max - px;
                    let b = gt.y_max - py;
                    let cell = y * w + x;
                    out.cls[cell] = 1.0;
                    out.ctr[cell] = ((l.min(r) / l.max(r)) * (t.min(b) / t.max(b))).sqrt();
                    out.boxes[cell] = l;
                    out.boxes[h * w + cell] = t;
                    out.boxes[2 * h * w + cell] = r;
                    out.boxes[3 * h * w + cell] = b;
                    out.positive[cell] = true;
                    n_pos += 1;
                }
            }
        }
        levels.push(out);
    }
    Ok(AssignmentTargets { levels, n_pos })
}

/// Global argmax over per-level score maps with deterministic tie-breaking:
/// equal scores resolve to the smallest row, then column, then level.
/// NaN scores are skipped; an all-NaN input is an error.
pub fn argmax_tied(score_maps: &[(usize, usize, Vec<f64>)]) -> Result<(usize, usize, usize)> {
    let mut best: Option<(f64, usize, usize, usize)> = None; // score, y, x, level
    for (level, (h, w, scores)) in score_maps.iter().enumerate() {
        for y in 0..*h {
            for x in 0..*w {
                let s = scores[y * w + x];
                if s.is_nan() {
                    continue;
                }
                let candidate = (s, y, x, level);
                let better = match best {
                    None => true,
                    Some((bs, by, bx, bl)) => s > bs || (s == bs && (y, x, level) < (by, bx, bl)),
                };
                if better {
                    best = Some(candidate);
                }
            }
        }
    }
    best.map(|(_, y, x, level)| (level, y, x))
        .ok_or_else(|| TensorError::AllNan.into())
}

/// Combined per-cell confidence `logistic(cls) * logistic(ctr)` for one level.
pub fn score_map<T: Scalar>(out: &HeadOutput<T>) -> (usize, usize, Vec<f64>) {
    let h = out.cls_logits.shape()[0];
    let w = out.cls_logits.shape()[1];
    let cls = out.cls_logits.data();
    let ctr = out.ctr_logits.data();
    let scores = cls
        .iter()
        .zip(ctr.iter())
        .map(|(&c, &s)| logistic(c.to_f64()) * logistic(s.to_f64()))
        .collect();
    (h, w, scores)
}

/// Top-1 decode across levels: pick the highest combined confidence and
/// invert the offset parameterization at that cell.
pub fn decode<T: Scalar>(outputs: &[HeadOutput<T>]) -> Result<DecodedBox> {
    let maps: Vec<(usize, usize, Vec<f64>)> = outputs.iter().map(score_map).collect();
    let (level, y, x) = argmax_tied(&maps)?;
    let out = &outputs[level];
    let (h, w) = (maps[level].0, maps[level].1);
    let cell = y * w + x;
    let offsets = out.offsets.data();
    let l = offsets[cell].to_f64();
    let t = offsets[h * w + cell].to_f64();
    let r = offsets[2 * h * w + cell].to_f64();
    let b = offsets[3 * h * w + cell].to_f64();
    let (px, py) = cell_point(x, y, out.stride);
    Ok(DecodedBox {
        bbox: GtBox::new(px - l, py - t, px + r, py + b)?,
        confidence: maps[level].2[cell],
        level,
        y,
        x,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(stride: usize) -> HeadConfig {
        HeadConfig::single_level(stride)
    }

    fn gt(x0: f64, y0: f64, x1: f64, y1: f64) -> GtBox {
        GtBox::new(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn config_validation_catches_bad_layouts() {
        assert!(single(8).validate().is_ok());
        assert!(HeadConfig::three_level().validate().is_ok());
        let mut bad = HeadConfig::three_level();
        bad.scale_breaks = vec![128.0, 64.0];
        assert!(bad.validate().is_err());
        bad.scale_breaks = vec![64.0];
        assert!(bad.validate().is_err());
        let mut no_rho = single(8);
        no_rho.radius_rho = 0.0;
        assert!(no_rho.validate().is_err());
    }

    #[test]
    fn scale_ranges_partition_the_positive_axis() {
        let cfg = HeadConfig::three_level();
        assert_eq!(cfg.scale_range(0), (0.0, 64.0));
        assert_eq!(cfg.scale_range(1), (64.0, 128.0));
        assert_eq!(cfg.scale_range(2), (128.0, f64::INFINITY));
    }

    #[test]
    fn box_center_cell_is_positive_with_unit_centerness() {
        // 3x3 grid at stride 2; box covering the whole 6x6 image. Cell (1,1)
        // sits at the exact box center (3,3).
        let targets = assign_targets(&[(3, 3)], &[gt(0.0, 0.0, 6.0, 6.0)], &single(2)).unwrap();
        let level = &targets.levels[0];
        assert!(level.positive[4]);
        assert_eq!(level.cls[4], 1.0);
        assert!((level.ctr[4] - 1.0).abs() < 1e-12);
        assert_eq!(
            [
                level.boxes[4],
                level.boxes[9 + 4],
                level.boxes[18 + 4],
                level.boxes[27 + 4]
            ],
            [3.0, 3.0, 3.0, 3.0]
        );
    }

    #[test]
    fn cells_outside_every_box_are_negative() {
        let targets = assign_targets(&[(4, 4)], &[gt(0.0, 0.0, 2.0, 2.0)], &single(2)).unwrap();
        let level = &targets.levels[0];
        // Only cell (0,0) at point (1,1) lies inside the 2x2 box.
        assert_eq!(targets.n_pos, 1);
        assert!(level.positive[0]);
        for cell in 1..16 {
            assert!(!level.positive[cell]);
            assert_eq!(level.cls[cell], 0.0);
            assert_eq!(level.ctr[cell], 0.0);
        }
    }

    #[test]
    fn centerness_formula_spot_value() {
        // Cell (1,1) at stride 2 is the point (3,3); this box puts the side
        // distances at (l,t,r,b) = (1,2,4,2).
        let targets = assign_targets(&[(5, 5)], &[gt(2.0, 1.0, 7.0, 5.0)], &single(2)).unwrap();
        let level = &targets.levels[0];
        let cell = 1 * 5 + 1;
        assert!(level.positive[cell]);
        assert!((level.ctr[cell] - 0.5).abs() < 1e-12);
        assert_eq!(
            [
                level.boxes[cell],
                level.boxes[25 + cell],
                level.boxes[50 + cell],
                level.boxes[75 + cell]
            ],
            [1.0, 2.0, 4.0, 2.0]
        );
    }

    #[test]
    fn disk_radius_limits_positives() {
        // Wide box spanning the grid; with rho=1.5, stride 2 only cells
        // within 3px of the center qualify.
        let cfg = single(2);
        let targets = assign_targets(&[(1, 8)], &[gt(0.0, 0.0, 16.0, 2.0)], &cfg).unwrap();
        let level = &targets.levels[0];
        // Center x=8; cell points at 1,3,5,...,15. |px-8|<=3 keeps px in
        // {5,7,9,11}, i.e. cells 2..=5 (the radius test is inclusive).
        let positives: Vec<usize> = (0..8).filter(|&x| level.positive[x]).collect();
        assert_eq!(positives, vec![2, 3, 4, 5]);
        for &x in &positives {
            let (px, _) = cell_point(x, 0, 2);
            assert!((px - 8.0).abs() <= 3.0 + 1e-12);
        }
    }

    #[test]
    fn nested_boxes_resolve_to_the_smaller_area() {
        let outer = gt(0.0, 0.0, 12.0, 12.0);
        let inner = gt(4.0, 4.0, 8.0, 8.0);
        let targets = assign_targets(&[(6, 6)], &[outer, inner], &single(2)).unwrap();
        let level = &targets.levels[0];
        // Cell (2,2) -> point (5,5): inside both, within both disks
        // (outer center (6,6) dist sqrt(2) <= 3; inner center (6,6) same).
        let cell = 2 * 6 + 2;
        assert!(level.positive[cell]);
        // Inner box wins: l* = 5-4 = 1, not 5.
        assert_eq!(level.boxes[cell], 1.0);
    }

    #[test]
    fn scale_ranges_route_objects_to_levels() {
        let cfg = HeadConfig {
            strides: vec![2, 4],
            scale_breaks: vec![6.0],
            radius_rho: 10.0,
        };
        // Box 16x16: max side distance from near-center cells is ~8 > 6, so
        // only level 1 may take it.
        let targets = assign_targets(&[(8, 8), (4, 4)], &[gt(0.0, 0.0, 16.0, 16.0)], &cfg).unwrap();
        assert!(targets.levels[0].positive.iter().all(|&p| !p));
        assert!(targets.levels[1].positive.iter().any(|&p| p));
        // A small 4x4 box maxes out at side distance <= 4 <= 6: level 0 only.
        let targets = assign_targets(&[(8, 8), (4, 4)], &[gt(6.0, 6.0, 10.0, 10.0)], &cfg).unwrap();
        assert!(targets.levels[0].positive.iter().any(|&p| p));
        assert!(targets.levels[1].positive.iter().all(|&p| !p));
    }

    #[test]
    fn empty_gt_list_yields_all_negative() {
        let targets = assign_targets(&[(4, 4)], &[], &single(8)).unwrap();
        assert_eq!(targets.n_pos, 0);
        assert!(targets.levels[0].positive.iter().all(|&p| !p));
    }

    #[test]
    fn tie_breaking_is_row_major_then_level() {
        // Uniform scores -> (0,0).
        let uniform = vec![(2usize, 2usize, vec![0.5; 4])];
        assert_eq!(argmax_tied(&uniform).unwrap(), (0, 0, 0));
        // Two-way tie at (0,3) and (2,1) -> (0,3).
        let mut scores = vec![0.1; 16];
        scores[3] = 0.9;
        scores[2 * 4 + 1] = 0.9;
        assert_eq!(argmax_tied(&[(4, 4, scores)]).unwrap(), (0, 0, 3));
        // Cross-level tie at the same cell -> lower level.
        let a = vec![0.3, 0.7, 0.1, 0.1];
        let b = vec![0.3, 0.7, 0.1, 0.1];
        assert_eq!(argmax_tied(&[(2, 2, a), (2, 2, b)]).unwrap(), (0, 0, 1));
        // NaNs are skipped; all-NaN errors.
        let with_nan = vec![(1usize, 2usize, vec![f64::NAN, 0.2])];
        assert_eq!(argmax_tied(&with_nan).unwrap(), (0, 0, 1));
        assert!(argmax_tied(&[(1, 1, vec![f64::NAN])]).is_err());
    }

    #[test]
    fn decode_inverts_the_offset_parameterization() {
        // Stride 4, cell (2,2) -> point (10,10); offsets (2,3,4,5).
        let h = 4;
        let w = 4;
        let mut cls = vec![-5.0; h * w];
        cls[2 * w + 2] = 3.0;
        let mut offsets = vec![1.0; 4 * h * w];
        let cell = 2 * w + 2;
        offsets[cell] = 2.0;
        offsets[h * w + cell] = 3.0;
        offsets[2 * h * w + cell] = 4.0;
        offsets[3 * h * w + cell] = 5.0;
        let out = HeadOutput::<f64> {
            cls_logits: Tensor::leaf(cls, &[h, w], false).unwrap(),
            ctr_logits: Tensor::leaf(vec![0.0; h * w], &[h, w], false).unwrap(),
            offsets: Tensor::leaf(offsets, &[4, h, w], false).unwrap(),
            stride: 4,
        };
        let decoded = decode(&[out]).unwrap();
        assert_eq!((decoded.level, decoded.y, decoded.x), (0, 2, 2));
        assert_eq!(decoded.bbox, gt(8.0, 7.0, 14.0, 15.0));
        assert!(decoded.confidence > 0.0 && decoded.confidence < 1.0);
    }

    #[test]
    fn decoding_ground_truth_offsets_recovers_the_box() {
        let cfg = single(2);
        let boxes = [gt(3.0, 2.0, 11.5, 9.0)];
        let targets = assign_targets(&[(8, 8)], &boxes, &cfg).unwrap();
        let level = &targets.levels[0];
        assert!(targets.n_pos > 0);
        for y in 0..8 {
            for x in 0..8 {
                let cell = y * 8 + x;
                if !level.positive[cell] {
                    continue;
                }
                let (px, py) = cell_point(x, y, 2);
                let l = level.boxes[cell];
                let t = level.boxes[64 + cell];
                let r = level.boxes[128 + cell];
                let b = level.boxes[192 + cell];
                assert!((px - l - 3.0).abs() < 1e-9);
                assert!((py - t - 2.0).abs() < 1e-9);
                assert!((px + r - 11.5).abs() < 1e-9);
                assert!((py + b - 9.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn offsets_from_raw_are_positive_and_stride_scaled() {
        let raw = Tensor::<f64>::leaf(vec![0.0, 1.0, -20.0, 3.0], &[4, 1, 1], false).unwrap();
        let mapped = offsets_from_raw(&raw, 8);
        let v = mapped.to_vec();
        assert_eq!(v[0], 8.0);
        assert!((v[1] - 8.0 * 1.0f64.exp()).abs() < 1e-9);
        assert!(v.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn monotone_score_composition_keeps_the_argmax() {
        let mut cls = vec![0.0; 9];
        cls[4] = 2.0;
        let ctr = vec![0.5; 9];
        let build = |cls: Vec<f64>, ctr: Vec<f64>| HeadOutput::<f64> {
            cls_logits: Tensor::leaf(cls, &[3, 3], false).unwrap(),
            ctr_logits: Tensor::leaf(ctr, &[3, 3], false).unwrap(),
            offsets: Tensor::leaf(vec![1.0; 36], &[4, 3, 3], false).unwrap(),
            stride: 2,
        };
        let first = decode(&[build(cls.clone(), ctr.clone())]).unwrap();
        assert_eq!((first.y, first.x), (1, 1));
        cls[4] += 1.5;
        let second = decode(&[build(cls, ctr)]).unwrap();
        assert_eq!((second.y, second.x), (1, 1));
        assert!(second.confidence > first.confidence);
    }
}
