//! Stamping identifier labels onto diagram rasters next to their molecules
//! without covering existing ink.
//!
//! Ink is judged on the grayscale version of the input: the background is
//! the most common gray level (floored at `255 - contrast`) and a pixel
//! counts as ink when it is darker than that by `contrast` levels. A label rect is acceptable when it lies
//! inside the image, overlaps no molecule box and no other label, and at most
//! `ink_threshold` of its pixels are ink.

pub mod font;
pub mod placement;

use std::io::Cursor;

use image::{DynamicImage, ImageFormat, Luma, LumaA, Rgb, Rgba};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BBox;
pub use placement::{Canvas, InkMap, Method, PixRect, Placement, Slot};

pub const DEFAULT_INK_THRESHOLD: f64 = 0.01;
pub const DEFAULT_CONTRAST: u8 = 64;
pub const DEFAULT_MIN_GLYPH: u32 = 8;
pub const MAX_DEFAULT_GLYPH: u32 = 48;

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum RenderError {
    #[error("no viable placement for {text:?} (mol_index {mol_index})")]
    PlacementImpossible { mol_index: i64, text: String },
    #[error("mol_index {mol_index} is not in the molecule list")]
    UnknownMolecule { mol_index: i64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FontSpec {
    pub glyph_height: u32,
    pub bold: bool,
    /// Gray level of the stamped text.
    pub color: u8,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderConfig {
    pub ink_threshold: f64,
    pub contrast: u8,
    pub min_glyph: u32,
    /// Fixed glyph height; inferred from the labels when `None`.
    pub glyph_height: Option<u32>,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            ink_threshold: DEFAULT_INK_THRESHOLD,
            contrast: DEFAULT_CONTRAST,
            min_glyph: DEFAULT_MIN_GLYPH,
            glyph_height: None,
        }
    }
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

/// Median height of the existing labels, or 12% of the median molecule
/// height (clamped to `[min_glyph, 48]`) when there are none.
pub fn infer_label_style(existing_labels: &[BBox], molecules: &[BBox], min_glyph: u32) -> FontSpec {
    let from_labels = median(existing_labels.iter().map(BBox::height).collect());
    let glyph_height = match from_labels {
        Some(h) => (h.round() as u32).max(min_glyph),
        None => {
            let mol = median(molecules.iter().map(BBox::height).collect()).unwrap_or(100.0);
            ((0.12 * mol).round() as u32).clamp(min_glyph, MAX_DEFAULT_GLYPH.max(min_glyph))
        }
    };
    FontSpec {
        glyph_height,
        bold: true,
        color: 0,
    }
}

/// One image's worth of work.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderJob {
    pub image_id: String,
    pub molecules: Vec<JobMolecule>,
    #[serde(default)]
    pub existing_labels: Vec<BBox>,
    pub draw: Vec<DrawRequest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobMolecule {
    pub mol_index: i64,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawRequest {
    pub mol_index: i64,
    pub text: String,
}

#[derive(Debug, Clone)]
pub struct RenderOutcome {
    pub image: DynamicImage,
    pub font: FontSpec,
    pub placements: Vec<Placement>,
    pub errors: Vec<RenderError>,
}

fn stamp(img: &mut DynamicImage, p: &Placement, spec: &FontSpec) {
    let mask = font::rasterize(&p.text, p.glyph_height, spec.bold);
    let (x0, y0) = (p.anchor.x1 as u32, p.anchor.y1 as u32);
    let c = spec.color;
    for y in 0..mask.height {
        for x in 0..mask.width {
            if !mask.get(x, y) {
                continue;
            }
            let (px, py) = (x0 + x, y0 + y);
            match img {
                DynamicImage::ImageLuma8(b) => b.put_pixel(px, py, Luma([c])),
                DynamicImage::ImageLumaA8(b) => b.put_pixel(px, py, LumaA([c, 255])),
                DynamicImage::ImageRgb8(b) => b.put_pixel(px, py, Rgb([c, c, c])),
                DynamicImage::ImageRgba8(b) => b.put_pixel(px, py, Rgba([c, c, c, 255])),
                _ => unreachable!("image normalized before stamping"),
            }
        }
    }
}

/// Places and stamps every requested label, in request order. Each
/// placement is added to the occupied set before the next is searched.
/// A label that cannot be placed is reported and the rest continue.
pub fn render_all(image: &DynamicImage, job: &RenderJob, cfg: &RenderConfig) -> RenderOutcome {
    let boxes: Vec<BBox> = job.molecules.iter().map(|m| m.bbox).collect();
    let mut font = infer_label_style(&job.existing_labels, &boxes, cfg.min_glyph);
    if let Some(h) = cfg.glyph_height {
        font.glyph_height = h.max(cfg.min_glyph);
    }
    let canvas = Canvas {
        ink: InkMap::new(&image.to_luma8(), cfg.contrast),
        molecules: boxes,
        ink_threshold: cfg.ink_threshold,
        min_glyph: cfg.min_glyph,
    };
    let mut out = match image {
        DynamicImage::ImageLuma8(_)
        | DynamicImage::ImageLumaA8(_)
        | DynamicImage::ImageRgb8(_)
        | DynamicImage::ImageRgba8(_) => image.clone(),
        other => DynamicImage::ImageRgba8(other.to_rgba8()),
    };
    let mut occupied = job.existing_labels.clone();
    let mut placements = Vec::new();
    let mut errors = Vec::new();
    for req in &job.draw {
        let Some(target) = job.molecules.iter().find(|m| m.mol_index == req.mol_index) else {
            errors.push(RenderError::UnknownMolecule {
                mol_index: req.mol_index,
            });
            continue;
        };
        match canvas.place_identifier(req.mol_index, &target.bbox, &req.text, &font, &occupied) {
            Ok(p) => {
                stamp(&mut out, &p, &font);
                occupied.push(p.anchor);
                placements.push(p);
            }
            Err(e) => errors.push(e),
        }
    }
    RenderOutcome {
        image: out,
        font,
        placements,
        errors,
    }
}

/// PNG bytes of an image.
pub fn encode_png(img: &DynamicImage) -> Result<Vec<u8>, image::ImageError> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}
