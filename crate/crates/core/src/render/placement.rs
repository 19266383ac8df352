//! Candidate search for label rectangles: fixed priority slots around the
//! target box, then a square spiral with shrinking font.

use image::GrayImage;
use serde::Serialize;

use super::font::text_size;
use super::{FontSpec, RenderError};
use crate::geometry::BBox;

/// Integral image of "ink" pixels, i.e. pixels darker than the background
/// level by at least `contrast`.
#[derive(Debug, Clone)]
pub struct InkMap {
    width: u32,
    height: u32,
    background: u8,
    integral: Vec<u32>,
}

/// Most frequent gray level; ties go to the brighter level.
pub fn background_level(gray: &GrayImage) -> u8 {
    let mut hist = [0u64; 256];
    for p in gray.pixels() {
        hist[p.0[0] as usize] += 1;
    }
    let mut best = 255usize;
    for level in (0..256).rev() {
        if hist[level] > hist[best] {
            best = level;
        }
    }
    best as u8
}

/// Background used for ink checks: the mode, but never darker than
/// `255 - contrast`. Diagrams are drawn on a light background, and without the floor a
/// mostly dark raster would have no ink at all.
pub fn ink_background(gray: &GrayImage, contrast: u8) -> u8 {
    background_level(gray).max(255 - contrast.max(1))
}

pub fn is_ink(level: u8, background: u8, contrast: u8) -> bool {
    i32::from(background) - i32::from(level) >= i32::from(contrast.max(1))
}

impl InkMap {
    pub fn new(gray: &GrayImage, contrast: u8) -> Self {
        let (w, h) = gray.dimensions();
        let background = ink_background(gray, contrast);
        let stride = w as usize + 1;
        let mut integral = vec![0u32; stride * (h as usize + 1)];
        for y in 0..h as usize {
            let mut row = 0u32;
            for x in 0..w as usize {
                row += u32::from(is_ink(gray.get_pixel(x as u32, y as u32).0[0], background, contrast));
                integral[(y + 1) * stride + x + 1] = integral[y * stride + x + 1] + row;
            }
        }
        InkMap {
            width: w,
            height: h,
            background,
            integral,
        }
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn background(&self) -> u8 {
        self.background
    }

    /// Ink pixels inside an in-bounds rect.
    pub fn count(&self, r: &PixRect) -> u32 {
        let stride = self.width as usize + 1;
        let (x0, y0) = (r.x as usize, r.y as usize);
        let (x1, y1) = (x0 + r.w as usize, y0 + r.h as usize);
        let at = |x: usize, y: usize| self.integral[y * stride + x];
        at(x1, y1) + at(x0, y0) - at(x1, y0) - at(x0, y1)
    }

    pub fn fraction(&self, r: &PixRect) -> f64 {
        self.count(r) as f64 / r.area() as f64
    }
}

/// Integer pixel rectangle; may lie partly off-image while being searched.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixRect {
    pub x: i64,
    pub y: i64,
    pub w: u32,
    pub h: u32,
}

impl PixRect {
    pub fn area(&self) -> u64 {
        u64::from(self.w) * u64::from(self.h)
    }

    pub fn in_bounds(&self, width: u32, height: u32) -> bool {
        self.x >= 0
            && self.y >= 0
            && self.x + i64::from(self.w) <= i64::from(width)
            && self.y + i64::from(self.h) <= i64::from(height)
    }

    pub fn to_bbox(&self) -> BBox {
        BBox {
            x1: self.x as f64,
            y1: self.y as f64,
            x2: (self.x + i64::from(self.w)) as f64,
            y2: (self.y + i64::from(self.h)) as f64,
        }
    }

    fn at(x: f64, y: f64, w: u32, h: u32) -> PixRect {
        PixRect {
            x: x.round() as i64,
            y: y.round() as i64,
            w,
            h,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    BelowCenter,
    AboveCenter,
    RightMiddle,
    LeftMiddle,
    BottomRight,
    BottomLeft,
    TopRight,
    TopLeft,
}

impl Slot {
    pub const ORDER: [Slot; 8] = [
        Slot::BelowCenter,
        Slot::AboveCenter,
        Slot::RightMiddle,
        Slot::LeftMiddle,
        Slot::BottomRight,
        Slot::BottomLeft,
        Slot::TopRight,
        Slot::TopLeft,
    ];

    /// Text rect of size `w`×`h` for this slot, `pad` pixels off the target.
    pub fn rect(self, target: &BBox, w: u32, h: u32, pad: f64) -> PixRect {
        let (cx, cy) = target.center();
        let (wf, hf) = (f64::from(w), f64::from(h));
        let below = target.y2 + pad;
        let above = target.y1 - pad - hf;
        let right = target.x2 + pad;
        let left = target.x1 - pad - wf;
        let (x, y) = match self {
            Slot::BelowCenter => (cx - wf / 2.0, below),
            Slot::AboveCenter => (cx - wf / 2.0, above),
            Slot::RightMiddle => (right, cy - hf / 2.0),
            Slot::LeftMiddle => (left, cy - hf / 2.0),
            Slot::BottomRight => (right, below),
            Slot::BottomLeft => (left, below),
            Slot::TopRight => (right, above),
            Slot::TopLeft => (left, above),
        };
        PixRect::at(x, y, w, h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    PrioritySlot,
    SpiralFallback,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Placement {
    pub mol_index: i64,
    pub text: String,
    pub anchor: BBox,
    pub method: Method,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slot: Option<Slot>,
    pub glyph_height: u32,
    pub ink_fraction_under: f64,
}

/// Square spiral of offsets: the origin, then rings of Chebyshev radius
/// `step`, `2*step`, … up to `max_radius`. Each ring starts at its top-left
/// corner and runs clockwise.
pub fn spiral_offsets(max_radius: i64, step: i64) -> impl Iterator<Item = (i64, i64)> {
    let step = step.max(1);
    std::iter::once((0, 0)).chain((1..).map(move |k| k * step).take_while(move |&r| r <= max_radius).flat_map(
        move |r| {
            let n = 2 * r / step;
            let top = (0..n).map(move |i| (-r + i * step, -r));
            let right = (0..n).map(move |i| (r, -r + i * step));
            let bottom = (0..n).map(move |i| (r - i * step, r));
            let left = (0..n).map(move |i| (-r, r - i * step));
            top.chain(right).chain(bottom).chain(left)
        },
    ))
}

/// Glyph heights tried by the fallback: 0.85 steps from `start` down to
/// `min`, always ending with `min`.
pub fn fallback_heights(start: u32, min: u32) -> Vec<u32> {
    let mut out = Vec::new();
    let mut k = 0;
    loop {
        let h = (f64::from(start) * 0.85f64.powi(k)).round() as u32;
        if h < min {
            break;
        }
        if out.last() != Some(&h) {
            out.push(h);
        }
        k += 1;
    }
    if out.last() != Some(&min) && start >= min {
        out.push(min);
    }
    if out.is_empty() {
        out.push(start);
    }
    out
}

pub const SPIRAL_STEP: i64 = 2;

/// Everything a placement search needs besides the candidate itself.
#[derive(Debug, Clone)]
pub struct Canvas {
    pub ink: InkMap,
    pub molecules: Vec<BBox>,
    pub ink_threshold: f64,
    pub min_glyph: u32,
}

impl Canvas {
    /// Ink fraction under `r` if it is in-bounds, clear of every molecule
    /// and occupied rect, and under the ink threshold.
    pub fn accepts(&self, r: &PixRect, occupied: &[BBox]) -> Option<f64> {
        let (w, h) = self.ink.dimensions();
        if r.w == 0 || r.h == 0 || !r.in_bounds(w, h) {
            return None;
        }
        let b = r.to_bbox();
        if self.molecules.iter().chain(occupied).any(|o| o.intersects(&b)) {
            return None;
        }
        let count = self.ink.count(r);
        if count as f64 > self.ink_threshold * r.area() as f64 {
            return None;
        }
        Some(count as f64 / r.area() as f64)
    }

    pub fn priority_slot(
        &self,
        mol_index: i64,
        target: &BBox,
        text: &str,
        spec: &FontSpec,
        occupied: &[BBox],
    ) -> Option<Placement> {
        let (w, h) = text_size(text, spec.glyph_height, spec.bold);
        Slot::ORDER.iter().find_map(|&slot| {
            let r = slot.rect(target, w, h, f64::from(spec.glyph_height));
            self.accepts(&r, occupied).map(|ink| Placement {
                mol_index,
                text: text.to_string(),
                anchor: r.to_bbox(),
                method: Method::PrioritySlot,
                slot: Some(slot),
                glyph_height: spec.glyph_height,
                ink_fraction_under: ink,
            })
        })
    }

    pub fn spiral_fallback(
        &self,
        mol_index: i64,
        target: &BBox,
        text: &str,
        spec: &FontSpec,
        occupied: &[BBox],
    ) -> Result<Placement, RenderError> {
        let (cx, cy) = target.center();
        let max_radius = (3.0 * target.diagonal()).floor() as i64;
        for gh in fallback_heights(spec.glyph_height, self.min_glyph) {
            let (w, h) = text_size(text, gh, spec.bold);
            let (x0, y0) = (cx - f64::from(w) / 2.0, cy - f64::from(h) / 2.0);
            for (dx, dy) in spiral_offsets(max_radius, SPIRAL_STEP) {
                let r = PixRect::at(x0 + dx as f64, y0 + dy as f64, w, h);
                if let Some(ink) = self.accepts(&r, occupied) {
                    return Ok(Placement {
                        mol_index,
                        text: text.to_string(),
                        anchor: r.to_bbox(),
                        method: Method::SpiralFallback,
                        slot: None,
                        glyph_height: gh,
                        ink_fraction_under: ink,
                    });
                }
            }
        }
        Err(RenderError::PlacementImpossible {
            mol_index,
            text: text.to_string(),
        })
    }

    /// Priority slots first, then the spiral.
    pub fn place_identifier(
        &self,
        mol_index: i64,
        target: &BBox,
        text: &str,
        spec: &FontSpec,
        occupied: &[BBox],
    ) -> Result<Placement, RenderError> {
        match self.priority_slot(mol_index, target, text, spec, occupied) {
            Some(p) => Ok(p),
            None => self.spiral_fallback(mol_index, target, text, spec, occupied),
        }
    }
}
