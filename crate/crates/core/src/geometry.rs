//! Axis-aligned pixel boxes and overlap measures.

use std::cmp::Ordering;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::ModelError;

/// Corner-pair box `(x1, y1, x2, y2)` in pixels, origin top-left.
///
/// A valid box has `0 <= x1 < x2` and `0 <= y1 < y2`. Serialized as a
/// four-element array.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    /// Builds a box, rejecting degenerate, negative or non-finite corners.
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, ModelError> {
        // `+ 0.0` folds -0.0 into 0.0 so equal boxes serialize identically.
        let b = BBox {
            x1: x1 + 0.0,
            y1: y1 + 0.0,
            x2: x2 + 0.0,
            y2: y2 + 0.0,
        };
        b.check()?;
        Ok(b)
    }

    pub(crate) fn check(&self) -> Result<(), ModelError> {
        let coords = [self.x1, self.y1, self.x2, self.y2];
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(ModelError::InvalidBox {
                path: String::new(),
                detail: format!("non-finite coordinate in {:?}", coords),
            });
        }
        if coords.iter().any(|&c| c < 0.0) {
            return Err(ModelError::InvalidBox {
                path: String::new(),
                detail: format!("negative coordinate in {:?}", coords),
            });
        }
        if self.x2 <= self.x1 || self.y2 <= self.y1 {
            return Err(ModelError::DegenerateBox {
                path: String::new(),
                bbox: coords,
            });
        }
        Ok(())
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
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn diagonal(&self) -> f64 {
        self.width().hypot(self.height())
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    /// Area of the overlap of the two interiors (0 when they only touch).
    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// True when the interiors overlap; shared edges do not count.
    pub fn intersects(&self, other: &BBox) -> bool {
        self.intersection_area(other) > 0.0
    }

    pub fn contains(&self, other: &BBox) -> bool {
        other.x1 >= self.x1 && other.y1 >= self.y1 && other.x2 <= self.x2 && other.y2 <= self.y2
    }

    pub fn within(&self, width: f64, height: f64) -> bool {
        self.x2 <= width && self.y2 <= height && self.x1 >= 0.0 && self.y1 >= 0.0
    }

    /// Lexicographic total order on the corner tuple.
    pub fn total_cmp(&self, other: &BBox) -> Ordering {
        self.to_array()
            .iter()
            .zip(other.to_array().iter())
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    }
}

/// Intersection over union of two valid boxes, in `[0, 1]`.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

impl Serialize for BBox {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_array().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BBox {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let [x1, y1, x2, y2] = <[f64; 4]>::deserialize(deserializer)?;
        BBox::new(x1, y1, x2, y2).map_err(serde::de::Error::custom)
    }
}
