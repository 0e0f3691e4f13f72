use rand::Rng;

use crate::error::{Error, Result};

const FONT_ROWS: usize = 7;
const FONT_COLS: usize = 5;

const FONT: [[&str; FONT_ROWS]; 10] = [
    ["01110", "10001", "10011", "10101", "11001", "10001", "01110"],
    ["00100", "01100", "00100", "00100", "00100", "00100", "01110"],
    ["01110", "10001", "00001", "00010", "00100", "01000", "11111"],
    ["11111", "00010", "00100", "00010", "00001", "10001", "01110"],
    ["00010", "00110", "01010", "10010", "11111", "00010", "00010"],
    ["11111", "10000", "11110", "00001", "00001", "10001", "01110"],
    ["00110", "01000", "10000", "11110", "10001", "10001", "01110"],
    ["11111", "00001", "00010", "00100", "01000", "01000", "01000"],
    ["01110", "10001", "10001", "01110", "10001", "10001", "01110"],
    ["01110", "10001", "10001", "01111", "00001", "00010", "01100"],
];

/// Source bitmap of one glyph with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Glyph {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<f32>,
}

impl Glyph {
    fn at(&self, r: isize, c: isize) -> f32 {
        if r < 0 || c < 0 || r >= self.rows as isize || c >= self.cols as isize {
            0.0
        } else {
            self.pixels[r as usize * self.cols + c as usize]
        }
    }

    fn bilinear(&self, r: f32, c: f32) -> f32 {
        let (r0, c0) = (r.floor(), c.floor());
        let (fr, fc) = (r - r0, c - c0);
        let (r0, c0) = (r0 as isize, c0 as isize);
        let top = self.at(r0, c0) * (1.0 - fc) + self.at(r0, c0 + 1) * fc;
        let bottom = self.at(r0 + 1, c0) * (1.0 - fc) + self.at(r0 + 1, c0 + 1) * fc;
        top * (1.0 - fr) + bottom * fr
    }
}

/// One glyph per digit class.
#[derive(Debug, Clone, PartialEq)]
pub struct GlyphSet {
    glyphs: Vec<Vec<Glyph>>,
}

impl GlyphSet {
    /// The built-in 5x7 bitmap digits.
    pub fn builtin() -> Self {
        let glyphs = FONT
            .iter()
            .map(|rows| {
                let pixels = rows
                    .iter()
                    .flat_map(|r| r.bytes().map(|b| if b == b'1' { 1.0 } else { 0.0 }))
                    .collect();
                vec![Glyph {
                    rows: FONT_ROWS,
                    cols: FONT_COLS,
                    pixels,
                }]
            })
            .collect();
        GlyphSet { glyphs }
    }

    /// Glyphs taken from a labeled single-digit dataset; every class needs
    /// at least one example.
    pub fn from_dataset(data: &super::Dataset) -> Result<Self> {
        let mut glyphs = vec![Vec::new(); 10];
        for i in 0..data.len() {
            let label = &data.labels[i];
            if label.len() != 1 || label[0] > 9 {
                return Err(Error::Malformed(format!("glyph {i} has label {label:?}")));
            }
            glyphs[label[0] as usize].push(Glyph {
                rows: data.height,
                cols: data.width,
                pixels: data.image(i).iter().map(|&p| p as f32 / 255.0).collect(),
            });
        }
        if let Some(d) = glyphs.iter().position(|g| g.is_empty()) {
            return Err(Error::Malformed(format!("no glyph for digit {d}")));
        }
        Ok(GlyphSet { glyphs })
    }

    /// Renders `digit` into an `h x w` box with random rotation, shear,
    /// scale, stroke weight and brightness.
    pub fn render(&self, digit: u8, h: usize, w: usize, rng: &mut impl Rng) -> Vec<f32> {
        let choices = &self.glyphs[digit as usize];
        let g = &choices[rng.gen_range(0..choices.len())];
        let angle: f32 = rng.gen_range(-0.15..0.15);
        let shear: f32 = rng.gen_range(-0.2..0.2);
        let scale: f32 = rng.gen_range(0.85..1.0);
        let threshold: f32 = rng.gen_range(0.15..0.35);
        let bright: f32 = rng.gen_range(0.75..1.0);
        let (sin, cos) = angle.sin_cos();
        let mut out = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let ny = (y as f32 + 0.5) / h as f32 - 0.5;
                let nx = (x as f32 + 0.5) / w as f32 - 0.5 - shear * ny;
                let fx = (cos * nx + sin * ny) / scale;
                let fy = (-sin * nx + cos * ny) / scale;
                let r = (fy + 0.5) * g.rows as f32 - 0.5;
                let c = (fx + 0.5) * g.cols as f32 - 0.5;
                let v = g.bilinear(r, c);
                out[y * w + x] = (((v - threshold) * 2.5).clamp(0.0, 1.0)) * bright;
            }
        }
        out
    }
}
