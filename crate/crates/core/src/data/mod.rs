//! Synthetic datasets: cluttered single digits and multi-digit canvases,
//! the `DCNDATA1` container and PGM export.

mod container;
mod glyphs;
mod pgm;

pub use container::{read_container, write_container, Dataset, DATASET_MAGIC};
pub use glyphs::{Glyph, GlyphSet};
pub use pgm::{normalize_to_u8, pgm_bytes, write_pgm};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::seq::MAX_DIGITS;
use crate::tensor::{Real, Tensor};

/// Width of a rendered digit relative to its height.
pub const DIGIT_ASPECT: f64 = 0.6;

/// Where the digits of a canvas go.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    /// Anywhere on the canvas (the digit string at its nominal size).
    Random,
    /// Centred, shifted by up to `margin` pixels on each axis; digits are
    /// narrowed if the string would not fit inside the margin.
    Centred,
}

/// Parameters of a synthetic canvas family.
#[derive(Debug, Clone, PartialEq)]
pub struct CanvasSpec {
    pub height: usize,
    pub width: usize,
    /// Inclusive range of the number of digits per canvas.
    pub digits: (usize, usize),
    /// Digit height in pixels.
    pub glyph_height: usize,
    pub clutter: usize,
    /// Side of the square clutter fragments.
    pub fragment: usize,
    /// Largest shift of centred digits; also the border they keep clear.
    pub margin: usize,
    pub placement: Placement,
    /// Amplitude of uniform background noise in `[0, 1]`.
    pub noise: f32,
    pub seed: u64,
}

impl CanvasSpec {
    /// Single digits on a cluttered `size x size` canvas.
    pub fn cluttered(size: usize, seed: u64) -> Self {
        CanvasSpec {
            height: size,
            width: size,
            digits: (1, 1),
            glyph_height: (size * 11 / 20).clamp(7, 28),
            clutter: (size * size / 400).max(1),
            fragment: 8,
            margin: 0,
            placement: Placement::Random,
            noise: 0.0,
            seed,
        }
    }

    /// Digit strings of 1 to 5 digits, `7/20` of the canvas height, near the
    /// centre, with one clutter fragment and faint noise.
    pub fn centred(height: usize, width: usize, seed: u64) -> Self {
        let glyph_height = (height * 7 / 20).max(1);
        CanvasSpec {
            height,
            width,
            digits: (1, MAX_DIGITS),
            glyph_height,
            clutter: 1,
            fragment: (glyph_height / 2).max(1),
            margin: (height - glyph_height) / 2,
            placement: Placement::Centred,
            noise: 0.05,
            seed,
        }
    }

    /// Digit strings anywhere on a larger, cluttered and noisy canvas.
    pub fn wild(height: usize, width: usize, glyph_height: usize, seed: u64) -> Self {
        CanvasSpec {
            height,
            width,
            digits: (1, MAX_DIGITS),
            glyph_height,
            clutter: (height * width / 1000).max(1),
            fragment: (glyph_height / 2).max(1),
            margin: 0,
            placement: Placement::Random,
            noise: 0.05,
            seed,
        }
    }

    /// Digit box `(height, width)` for a string of `n` digits.
    fn digit_box(&self, n: usize) -> (usize, usize) {
        match self.placement {
            Placement::Random => {
                let h = self.glyph_height;
                (h, ((h as f64 * DIGIT_ASPECT).round() as usize).max(1))
            }
            Placement::Centred => {
                let h = self.glyph_height;
                let avail = self.width.saturating_sub(2 * self.margin) / n.max(1);
                (h, ((h as f64 * DIGIT_ASPECT).round() as usize).max(1).min(avail))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.digits;
        if lo == 0 || lo > hi || hi > MAX_DIGITS {
            return Err(Error::Geometry(format!("digit count range {lo}..={hi} outside 1..=5")));
        }
        let (h, w) = self.digit_box(hi);
        let border = match self.placement {
            Placement::Centred => 2 * self.margin,
            Placement::Random => 0,
        };
        if h == 0 || w == 0 || h + border > self.height || w * hi + border > self.width {
            return Err(Error::Geometry(format!(
                "{hi} digits of {h}x{w} do not fit a {}x{} canvas",
                self.height, self.width
            )));
        }
        if self.clutter > 0 && (self.fragment == 0 || self.fragment > self.height || self.fragment > self.width) {
            return Err(Error::Geometry(format!("{} px clutter fragments", self.fragment)));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(Error::Geometry(format!("noise amplitude {}", self.noise)));
        }
        Ok(())
    }
}

fn blit(canvas: &mut [f32], width: usize, src: &[f32], top: usize, left: usize, w: usize) {
    for (r, row) in src.chunks(w).enumerate() {
        for (c, &v) in row.iter().enumerate() {
            let p = &mut canvas[(top + r) * width + left + c];
            *p = p.max(v);
        }
    }
}

/// One canvas and its label; `index` selects an independent random stream.
pub fn render_example(spec: &CanvasSpec, glyphs: &GlyphSet, index: u64) -> (Vec<u8>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index);
    let (hh, ww) = (spec.height, spec.width);
    let mut canvas: Vec<f32> = (0..hh * ww)
        .map(|_| if spec.noise > 0.0 { rng.gen_range(0.0..spec.noise) } else { 0.0 })
        .collect();

    for _ in 0..spec.clutter {
        let f = spec.fragment;
        let gh = spec.glyph_height.max(f);
        let gw = ((gh as f64 * DIGIT_ASPECT).round() as usize).max(f);
        let glyph = glyphs.render(rng.gen_range(0..10), gh, gw, &mut rng);
        // prefer a crop that carries ink
        let mut crop = vec![0.0; f * f];
        for _ in 0..8 {
            let (t, l) = (rng.gen_range(0..=gh - f), rng.gen_range(0..=gw - f));
            for r in 0..f {
                crop[r * f..(r + 1) * f].copy_from_slice(&glyph[(t + r) * gw + l..][..f]);
            }
            if crop.iter().sum::<f32>() > f as f32 {
                break;
            }
        }
        let (t, l) = (rng.gen_range(0..=hh - f), rng.gen_range(0..=ww - f));
        blit(&mut canvas, ww, &crop, t, l, f);
    }

    let n = rng.gen_range(spec.digits.0..=spec.digits.1);
    let label: Vec<u8> = (0..n).map(|_| rng.gen_range(0..10u8)).collect();
    let (dh, dw) = spec.digit_box(n);
    let total_w = dw * n;
    let (top, left) = match spec.placement {
        Placement::Random => (rng.gen_range(0..=hh - dh), rng.gen_range(0..=ww - total_w)),
        Placement::Centred => {
            let m = spec.margin as isize;
            let (dy, dx) = (rng.gen_range(-m..=m), rng.gen_range(-m..=m));
            let top = ((hh - dh) / 2) as isize + dy;
            let left = ((ww - total_w) / 2) as isize + dx;
            (
                top.clamp(0, (hh - dh) as isize) as usize,
                left.clamp(0, (ww - total_w) as isize) as usize,
            )
        }
    };
    for (i, &d) in label.iter().enumerate() {
        let glyph = glyphs.render(d, dh, dw, &mut rng);
        blit(&mut canvas, ww, &glyph, top, left + i * dw, dw);
    }
    debug_assert!(label.len() == n && label.iter().all(|&d| d < 10));
    let pixels = canvas.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    (pixels, label)
}

fn synth(spec: &CanvasSpec, glyphs: &GlyphSet, n: usize) -> Result<Dataset> {
    spec.validate()?;
    let mut data = Dataset::new(spec.height, spec.width, spec.digits.1);
    for i in 0..n {
        let (img, label) = render_example(spec, glyphs, i as u64);
        data.push(&img, label)?;
    }
    Ok(data)
}

/// `n` canvases with exactly one digit each among clutter fragments.
pub fn synth_cluttered(spec: &CanvasSpec, n: usize) -> Result<Dataset> {
    if spec.digits != (1, 1) {
        return Err(Error::Geometry("cluttered canvases hold exactly one digit".into()));
    }
    synth(spec, &GlyphSet::builtin(), n)
}

/// `n` canvases holding digit strings, labeled with the full sequence.
pub fn synth_multidigit(spec: &CanvasSpec, n: usize) -> Result<Dataset> {
    synth(spec, &GlyphSet::builtin(), n)
}

/// Same as the synthesizers above with a custom glyph source.
pub fn synth_with_glyphs(spec: &CanvasSpec, glyphs: &GlyphSet, n: usize) -> Result<Dataset> {
    synth(spec, glyphs, n)
}

/// Images at `indices` as a `[n, 1, h, w]` tensor scaled to `[0, 1]`.
pub fn to_tensor<T: Real>(data: &Dataset, indices: &[usize]) -> Result<Tensor<T>> {
    let mut values = Vec::with_capacity(indices.len() * data.height * data.width);
    for &i in indices {
        if i >= data.len() {
            return Err(Error::Invalid(format!("example {i} of {}", data.len())));
        }
        values.extend(data.image(i).iter().map(|&p| T::of(p as f64 / 255.0)));
    }
    Tensor::new(vec![indices.len(), 1, data.height, data.width], values)
}

#[cfg(test)]
mod tests;
