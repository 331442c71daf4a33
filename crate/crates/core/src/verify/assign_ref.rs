//! Brute-force label-assignment reference. Same predicates and arithmetic
//! as the production assigner, but structured as enumerate-everything lists
//! with no early exits, so structural bugs in either implementation show up
//! as tensor mismatches.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::boxes::GtBox;
use crate::error::Result;
use crate::head::{cell_point, AssignmentTargets, HeadConfig, LevelTargets};

/// Every (cell, box) verdict for one level, fully materialized.
struct Candidate {
    cell: usize,
    box_index: usize,
    area: f64,
}

/// Reference assigner: enumerate all (cell, box) pairs, record qualifying
/// candidates, then resolve winners by scanning for the smallest area
/// (earliest listed on ties).
pub fn assign_targets_reference(
    grids: &[(usize, usize)],
    gt_boxes: &[GtBox],
    cfg: &HeadConfig,
) -> Result<AssignmentTargets> {
    cfg.validate()?;
    assert_eq!(grids.len(), cfg.strides.len(), "grid/stride arity");
    let mut levels = Vec::new();
    let mut n_pos = 0;
    for (level, &(h, w)) in grids.iter().enumerate() {
        let stride = cfg.strides[level];
        let (scale_lo, scale_hi) = cfg.scale_range(level);
        let radius = cfg.radius_rho * stride as f64;
        let radius_sq = radius * radius;

        let mut candidates: Vec<Candidate> = Vec::new();
        for cell in 0..h * w {
            let (x, y) = (cell % w, cell / w);
            let (px, py) = cell_point(x, y, stride);
            for (box_index, gt) in gt_boxes.iter().enumerate() {
                let inside = gt.contains(px, py);
                let (cx, cy) = gt.center();
                let d2 = (px - cx) * (px - cx) + (py - cy) * (py - cy);
                let near_center = d2 <= radius_sq;
                let l = px - gt.x_min;
                let t = py - gt.y_min;
                let r = gt.x_max - px;
                let b = gt.y_max - py;
                let max_side = l.max(t).max(r).max(b);
                let in_range = max_side > scale_lo && max_side <= scale_hi;
                if inside && near_center && in_range {
                    candidates.push(Candidate {
                        cell,
                        box_index,
                        area: gt.area(),
                    });
                }
            }
        }

        let mut out = LevelTargets {
            h,
            w,
            stride,
            cls: vec![0.0; h * w],
            ctr: vec![0.0; h * w],
            boxes: vec![0.0; 4 * h * w],
            positive: vec![false; h * w],
        };
        for cell in 0..h * w {
            let mut winner: Option<&Candidate> = None;
            for candidate in candidates.iter().filter(|c| c.cell == cell) {
                let better = match winner {
                    None => true,
                    Some(best) => candidate.area < best.area,
                };
                if better {
                    winner = Some(candidate);
                }
            }
            if let Some(candidate) = winner {
                let gt = &gt_boxes[candidate.box_index];
                let (x, y) = (cell % w, cell / w);
                let (px, py) = cell_point(x, y, stride);
                let l = px - gt.x_min;
                let t = py - gt.y_min;
                let r = gt.x_max - px;
                let b = gt.y_max - py;
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
        levels.push(out);
    }
    Ok(AssignmentTargets { levels, n_pos })
}

/// A random assignment scenario: grids, boxes, and head config drawn wide
/// enough to hit empty levels, overlaps, ties, and borderline radii.
pub fn random_case(rng: &mut ChaCha8Rng) -> (Vec<(usize, usize)>, Vec<GtBox>, HeadConfig) {
    let levels = rng.random_range(1..=3);
    let base_stride = [2usize, 4, 8][rng.random_range(0..3)];
    let strides: Vec<usize> = (0..levels).map(|l| base_stride << l).collect();
    let breaks: Vec<f64> = match levels {
        1 => vec![],
        2 => vec![rng.random_range(8.0..32.0)],
        _ => {
            let first = rng.random_range(8.0..24.0);
            vec![first, first + rng.random_range(4.0..24.0)]
        }
    };
    let cfg = HeadConfig {
        strides: strides.clone(),
        scale_breaks: breaks,
        radius_rho: rng.random_range(0.5..3.0),
    };
    let grids: Vec<(usize, usize)> = {
        let h0 = rng.random_range(6..=18);
        let w0 = rng.random_range(6..=18);
        (0..levels)
            .map(|l| ((h0 >> l).max(1), (w0 >> l).max(1)))
            .collect()
    };
    let extent_x = (grids[0].1 * strides[0]) as f64;
    let extent_y = (grids[0].0 * strides[0]) as f64;
    let n_boxes = rng.random_range(0..=4);
    let mut boxes = Vec::new();
    for _ in 0..n_boxes {
        let w = rng.random_range(1.0..extent_x * 0.9);
        let h = rng.random_range(1.0..extent_y * 0.9);
        let x0 = rng.random_range(-2.0..extent_x - w + 2.0);
        let y0 = rng.random_range(-2.0..extent_y - h + 2.0);
        boxes.push(GtBox::new(x0, y0, x0 + w, y0 + h).unwrap());
    }
    // Occasionally duplicate a box to force exact area ties.
    if !boxes.is_empty() && rng.random_bool(0.2) {
        boxes.push(boxes[0]);
    }
    (grids, boxes, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::head::assign_targets;
    use rand::SeedableRng;

    #[test]
    fn reference_agrees_on_handpicked_cases() {
        let cfg = HeadConfig::single_level(4);
        let grids = [(8, 8)];
        let boxes = [
            GtBox::new(4.0, 4.0, 20.0, 20.0).unwrap(),
            GtBox::new(10.0, 10.0, 14.0, 14.0).unwrap(),
        ];
        let fast = assign_targets(&grids, &boxes, &cfg).unwrap();
        let slow = assign_targets_reference(&grids, &boxes, &cfg).unwrap();
        assert_eq!(fast, slow);
        assert!(fast.n_pos > 0);
    }

    #[test]
    fn reference_agrees_on_random_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut total_pos = 0;
        for _ in 0..200 {
            let (grids, boxes, cfg) = random_case(&mut rng);
            let fast = assign_targets(&grids, &boxes, &cfg).unwrap();
            let slow = assign_targets_reference(&grids, &boxes, &cfg).unwrap();
            assert_eq!(fast, slow);
            total_pos += fast.n_pos;
        }
        assert!(
            total_pos > 100,
            "cases too degenerate: {total_pos} positives"
        );
    }
}
