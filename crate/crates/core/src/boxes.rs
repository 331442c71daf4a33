//! Axis-aligned boxes in reference-image pixel coordinates.

use crate::error::{Error, Result};

/// Ground-truth (or decoded) box; `x` grows rightward, `y` downward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl GtBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = Self {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        if !(x_min < x_max && y_min < y_max)
            || !(x_min.is_finite() && y_min.is_finite() && x_max.is_finite() && y_max.is_finite())
        {
            return Err(Error::InvalidBox {
                x_min,
                y_min,
                x_max,
                y_max,
            });
        }
        Ok(b)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    /// Strict interior test: points on the boundary do not count, so every
    /// contained point has four strictly positive side distances.
    pub fn contains(&self, px: f64, py: f64) -> bool {
        px > self.x_min && px < self.x_max && py > self.y_min && py < self.y_max
    }
}

fn intersection_area(a: &GtBox, b: &GtBox) -> f64 {
    let w = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let h = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    w * h
}

/// Intersection over union, in [0,1].
pub fn iou(a: &GtBox, b: &GtBox) -> f64 {
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Generalized IoU: IoU minus the enclosing box's excess area fraction,
/// in (-1, 1].
pub fn giou(a: &GtBox, b: &GtBox) -> f64 {
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    let enclose_w = a.x_max.max(b.x_max) - a.x_min.min(b.x_min);
    let enclose_h = a.y_max.max(b.y_max) - a.y_min.min(b.y_min);
    let enclose = enclose_w * enclose_h;
    if union <= 0.0 || enclose <= 0.0 {
        return -1.0;
    }
    inter / union - (enclose - union) / enclose
}

/// Top-1 decode result: the box, its combined confidence, and the winning
/// cell (per the row-major tie rule).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodedBox {
    pub bbox: GtBox,
    pub confidence: f64,
    pub level: usize,
    pub y: usize,
    pub x: usize,
}
