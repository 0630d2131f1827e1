//! Box geometry, spatial relation masks and head-to-human association.

mod assignment;
mod mask;

pub use assignment::{associate_heads, solve_assignment, Assignment, AssociationWeights, FORBIDDEN};
pub use mask::{spatial_mask, SpatialMask, MASK_SIZE};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in continuous image coordinates.
///
/// Construction rejects degenerate boxes, so every value of this type has
/// `x1 < x2`, `y1 < y2` and a strictly positive area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let finite = [x1, y1, x2, y2].iter().all(|v| v.is_finite());
        if !finite || x1 >= x2 || y1 >= y2 {
            return Err(Error::InvalidBox(x1, y1, x2, y2));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }

    pub fn y1(&self) -> f64 {
        self.y1
    }

    pub fn x2(&self) -> f64 {
        self.x2
    }

    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) * 0.5, (self.y1 + self.y2) * 0.5)
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// Smallest box enclosing both.
    pub fn union_box(&self, other: &BoundingBox) -> BoundingBox {
        BoundingBox {
            x1: self.x1.min(other.x1),
            y1: self.y1.min(other.y1),
            x2: self.x2.max(other.x2),
            y2: self.y2.max(other.y2),
        }
    }

    /// Mirror about the vertical axis of a frame `frame_width` wide.
    pub fn flip_horizontal(&self, frame_width: f64) -> BoundingBox {
        BoundingBox {
            x1: frame_width - self.x2,
            y1: self.y1,
            x2: frame_width - self.x1,
            y2: self.y2,
        }
    }

    pub fn contains(&self, other: &BoundingBox) -> bool {
        self.x1 <= other.x1 && self.y1 <= other.y1 && other.x2 <= self.x2 && other.y2 <= self.y2
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = Error;

    fn try_from(c: [f64; 4]) -> Result<Self> {
        BoundingBox::new(c[0], c[1], c[2], c[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        b.coords()
    }
}

/// Intersection over union; symmetric, 0 for disjoint boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// Intersection over head: the fraction of the head box covered by the
/// human box. Not symmetric.
pub fn ioh(human: &BoundingBox, head: &BoundingBox) -> f64 {
    head.intersection_area(human) / head.area()
}
