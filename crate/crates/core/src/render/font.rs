//! Fixed 8x8 bitmap font scaled by nearest neighbour.
//!
//! Each character occupies a square cell of `height` pixels. Bold adds one
//! pixel of horizontal stroke, so a bold string is one pixel wider.

use font8x8::{UnicodeFonts, BASIC_FONTS, GREEK_FONTS, LATIN_FONTS};

fn glyph(c: char) -> [u8; 8] {
    BASIC_FONTS
        .get(c)
        .or_else(|| LATIN_FONTS.get(c))
        .or_else(|| GREEK_FONTS.get(c))
        .or_else(|| BASIC_FONTS.get('?'))
        .unwrap_or([0; 8])
}

/// Pixel size of `text` at the given cell height.
pub fn text_size(text: &str, height: u32, bold: bool) -> (u32, u32) {
    let n = text.chars().count() as u32;
    (n * height + u32::from(bold), height)
}

/// A rasterized string, row-major, `true` where ink is laid down.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextMask {
    pub width: u32,
    pub height: u32,
    pub bits: Vec<bool>,
}

impl TextMask {
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[(y * self.width + x) as usize]
    }

    /// Topmost and bottommost inked rows, if any.
    pub fn ink_rows(&self) -> Option<(u32, u32)> {
        let rows: Vec<u32> = (0..self.height)
            .filter(|&y| (0..self.width).any(|x| self.get(x, y)))
            .collect();
        Some((*rows.first()?, *rows.last()?))
    }
}

pub fn rasterize(text: &str, height: u32, bold: bool) -> TextMask {
    let (width, _) = text_size(text, height, bold);
    let mut bits = vec![false; (width * height) as usize];
    for (i, c) in text.chars().enumerate() {
        let rows = glyph(c);
        let x0 = i as u32 * height;
        for y in 0..height {
            let row = rows[(y * 8 / height) as usize];
            for x in 0..height {
                if row >> (x * 8 / height) & 1 == 1 {
                    let px = x0 + x;
                    bits[(y * width + px) as usize] = true;
                    if bold {
                        bits[(y * width + px + 1) as usize] = true;
                    }
                }
            }
        }
    }
    TextMask { width, height, bits }
}
