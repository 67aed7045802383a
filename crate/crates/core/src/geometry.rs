//! Axis-aligned box geometry and intersection-over-union.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid box ({x}, {y}, {w}, {h}): width and height must be positive and all coordinates finite")]
    InvalidBox { x: f64, y: f64, w: f64, h: f64 },
    #[error("score {0} outside [0, 1]")]
    InvalidScore(f64),
}

/// Axis-aligned rectangle in pixel units: `(x, y)` is the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        let b = BoundingBox { x, y, w, h };
        if b.is_valid() {
            Ok(b)
        } else {
            Err(GeometryError::InvalidBox { x, y, w, h })
        }
    }

    /// Builds a box from its corner coordinates.
    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self, GeometryError> {
        Self::new(x0, y0, x1 - x0, y1 - y0)
    }

    pub fn is_valid(&self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self.w.is_finite()
            && self.h.is_finite()
            && self.w > 0.0
            && self.h > 0.0
    }

    #[inline]
    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    #[inline]
    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        box_area(self)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BoundingBox {
        BoundingBox {
            x: self.x + dx,
            y: self.y + dy,
            ..*self
        }
    }

    /// Multiplies every coordinate by `factor` (about the origin).
    pub fn scale(&self, factor: f64) -> BoundingBox {
        BoundingBox {
            x: self.x * factor,
            y: self.y * factor,
            w: self.w * factor,
            h: self.h * factor,
        }
    }

    /// Clips the box to `[0, width] x [0, height]`, returning `None` when nothing remains.
    pub fn clip(&self, width: f64, height: f64) -> Option<BoundingBox> {
        let frame = BoundingBox {
            x: 0.0,
            y: 0.0,
            w: width,
            h: height,
        };
        box_intersection(self, &frame)
    }
}

pub fn box_area(b: &BoundingBox) -> f64 {
    b.w * b.h
}

/// Overlap rectangle of two boxes. Boxes that only share an edge or a corner
/// have no interior in common and yield `None`.
pub fn box_intersection(a: &BoundingBox, b: &BoundingBox) -> Option<BoundingBox> {
    let x0 = a.x.max(b.x);
    let y0 = a.y.max(b.y);
    let x1 = a.right().min(b.right());
    let y1 = a.bottom().min(b.bottom());
    if x1 > x0 && y1 > y0 {
        Some(BoundingBox {
            x: x0,
            y: y0,
            w: x1 - x0,
            h: y1 - y0,
        })
    } else {
        None
    }
}

/// Intersection over union, in `[0, 1]`.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    if a == b {
        return 1.0;
    }
    match box_intersection(a, b) {
        None => 0.0,
        Some(inter) => {
            let i = inter.area();
            let union = a.area() + b.area() - i;
            (i / union).clamp(0.0, 1.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Drone,
    NonDrone,
}

/// A scored, labelled box produced by the detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub score: f64,
    pub label: Label,
}

impl Detection {
    pub fn new(bbox: BoundingBox, score: f64, label: Label) -> Result<Self, GeometryError> {
        if !bbox.is_valid() {
            return Err(GeometryError::InvalidBox {
                x: bbox.x,
                y: bbox.y,
                w: bbox.w,
                h: bbox.h,
            });
        }
        if !(0.0..=1.0).contains(&score) {
            return Err(GeometryError::InvalidScore(score));
        }
        Ok(Detection { bbox, score, label })
    }

    pub fn drone(bbox: BoundingBox, score: f64) -> Self {
        Detection {
            bbox,
            score,
            label: Label::Drone,
        }
    }
}
