//! Side-by-side PNG strips for visual inspection of denoising results.
//!
//! Values are clipped to [0,1] for display only; the tensors being
//! inspected are never modified. Labels are drawn with a built-in 5x7
//! bitmap font, uppercased.

use std::path::Path;

use crate::io::save_png;
use crate::tensor::ImageTensor;
use crate::{Error, Result};

/// Black columns between adjacent panels.
pub const SEPARATOR_PX: usize = 2;
/// Height of the white label band above the panels.
pub const LABEL_BAND_PX: usize = 18;

const GLYPH_SCALE: usize = 2;
const GLYPH_W: usize = 5;
const GLYPH_H: usize = 7;

/// Writes a horizontal strip of equally sized panels, each under its label,
/// with [`SEPARATOR_PX`] black columns between panels.
pub fn figure_grid(panels: &[(String, ImageTensor)], path: &Path) -> Result<()> {
    if panels.is_empty() {
        return Err(Error::invalid("figure needs at least one panel"));
    }
    let (h, w, c) = panels[0].1.shape();
    for (label, img) in panels {
        if img.shape() != (h, w, c) {
            return Err(Error::shape(format!(
                "panel '{label}' is {:?}, expected {:?}",
                img.shape(),
                (h, w, c)
            )));
        }
    }
    let total_w = panels.len() * w + (panels.len() - 1) * SEPARATOR_PX;
    let total_h = LABEL_BAND_PX + h;
    let mut strip = ImageTensor::zeros(total_h, total_w, c);

    {
        let data = strip.data_mut();
        // White label band across the full width.
        for v in &mut data[..LABEL_BAND_PX * total_w * c] {
            *v = 1.0;
        }
        for (i, (label, img)) in panels.iter().enumerate() {
            let x0 = i * (w + SEPARATOR_PX);
            let clipped = img.clip01();
            for y in 0..h {
                let dst = ((LABEL_BAND_PX + y) * total_w + x0) * c;
                let src = (y * w) * c;
                data[dst..dst + w * c].copy_from_slice(&clipped.data()[src..src + w * c]);
            }
            draw_label(data, total_w, c, x0 + 2, 2, label, w);
        }
    }
    save_png(path, &strip)
}

/// Draws black text into the white band, truncated to the panel width.
fn draw_label(data: &mut [f64], total_w: usize, c: usize, x0: usize, y0: usize, text: &str, max_w: usize) {
    let cell = (GLYPH_W + 1) * GLYPH_SCALE;
    for (idx, ch) in text.to_ascii_uppercase().chars().enumerate() {
        let gx = x0 + idx * cell;
        if gx + GLYPH_W * GLYPH_SCALE > x0 + max_w.saturating_sub(2) {
            break;
        }
        let rows = glyph(ch);
        for (ry, bits) in rows.iter().enumerate() {
            for rx in 0..GLYPH_W {
                if bits & (1 << (GLYPH_W - 1 - rx)) == 0 {
                    continue;
                }
                for sy in 0..GLYPH_SCALE {
                    for sx in 0..GLYPH_SCALE {
                        let y = y0 + ry * GLYPH_SCALE + sy;
                        let x = gx + rx * GLYPH_SCALE + sx;
                        let base = (y * total_w + x) * c;
                        for ch_i in 0..c {
                            data[base + ch_i] = 0.0;
                        }
                    }
                }
            }
        }
    }
}

/// 5x7 glyph rows, most significant bit on the left. Unknown characters
/// render blank.
fn glyph(ch: char) -> [u8; GLYPH_H] {
    match ch {
        'A' => [0b01110, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001],
        'B' => [0b11110, 0b10001, 0b10001, 0b11110, 0b10001, 0b10001, 0b11110],
        'C' => [0b01110, 0b10001, 0b10000, 0b10000, 0b10000, 0b10001, 0b01110],
        'D' => [0b11110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b11110],
        'E' => [0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b11111],
        'F' => [0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b10000],
        'G' => [0b01110, 0b10001, 0b10000, 0b10011, 0b10001, 0b10001, 0b01111],
        'H' => [0b10001, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001],
        'I' => [0b01110, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110],
        'J' => [0b00111, 0b00010, 0b00010, 0b00010, 0b00010, 0b10010, 0b01100],
        'K' => [0b10001, 0b10010, 0b10100, 0b11000, 0b10100, 0b10010, 0b10001],
        'L' => [0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b11111],
        'M' => [0b10001, 0b11011, 0b10101, 0b10101, 0b10001, 0b10001, 0b10001],
        'N' => [0b10001, 0b10001, 0b11001, 0b10101, 0b10011, 0b10001, 0b10001],
        'O' => [0b01110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110],
        'P' => [0b11110, 0b10001, 0b10001, 0b11110, 0b10000, 0b10000, 0b10000],
        'Q' => [0b01110, 0b10001, 0b10001, 0b10001, 0b10101, 0b10010, 0b01101],
        'R' => [0b11110, 0b10001, 0b10001, 0b11110, 0b10100, 0b10010, 0b10001],
        'S' => [0b01111, 0b10000, 0b10000, 0b01110, 0b00001, 0b00001, 0b11110],
        'T' => [0b11111, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100],
        'U' => [0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110],
        'V' => [0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01010, 0b00100],
        'W' => [0b10001, 0b10001, 0b10001, 0b10101, 0b10101, 0b10101, 0b01010],
        'X' => [0b10001, 0b10001, 0b01010, 0b00100, 0b01010, 0b10001, 0b10001],
        'Y' => [0b10001, 0b10001, 0b01010, 0b00100, 0b00100, 0b00100, 0b00100],
        'Z' => [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b10000, 0b11111],
        '0' => [0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110],
        '1' => [0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110],
        '2' => [0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111],
        '3' => [0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110],
        '4' => [0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010],
        '5' => [0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110],
        '6' => [0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110],
        '7' => [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000],
        '8' => [0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110],
        '9' => [0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100],
        '.' => [0, 0, 0, 0, 0, 0b00100, 0b00100],
        ',' => [0, 0, 0, 0, 0, 0b00100, 0b01000],
        '-' => [0, 0, 0, 0b11111, 0, 0, 0],
        '=' => [0, 0, 0b11111, 0, 0b11111, 0, 0],
        '/' => [0b00001, 0b00010, 0b00010, 0b00100, 0b01000, 0b01000, 0b10000],
        ':' => [0, 0b00100, 0b00100, 0, 0b00100, 0b00100, 0],
        '_' => [0, 0, 0, 0, 0, 0, 0b11111],
        _ => [0; GLYPH_H],
    }
}
