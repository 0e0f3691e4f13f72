use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::seq::MAX_DIGITS;

pub const DATASET_MAGIC: &[u8; 8] = b"DCNDATA1";
const HEADER_LEN: usize = 8 + 8 + 4 + 4 + 4;
const PAD_DIGIT: u8 = 10;

/// Labeled 8-bit grayscale images of one size. Each label is a digit
/// sequence of at most `arity` digits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub height: usize,
    pub width: usize,
    pub arity: usize,
    /// Row-major pixels, example after example.
    pub images: Vec<u8>,
    pub labels: Vec<Vec<u8>>,
}

impl Dataset {
    pub fn new(height: usize, width: usize, arity: usize) -> Self {
        Dataset {
            height,
            width,
            arity,
            images: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.height * self.width;
        &self.images[i * n..(i + 1) * n]
    }

    pub fn push(&mut self, image: &[u8], label: Vec<u8>) -> Result<()> {
        if image.len() != self.height * self.width {
            return Err(Error::Malformed(format!(
                "image of {} pixels in a {}x{} dataset",
                image.len(),
                self.height,
                self.width
            )));
        }
        if label.len() > self.arity || label.iter().any(|&d| d > 9) {
            return Err(Error::Malformed(format!("label {label:?} for arity {}", self.arity)));
        }
        self.images.extend_from_slice(image);
        self.labels.push(label);
        Ok(())
    }

    /// Examples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut out = Dataset::new(self.height, self.width, self.arity);
        for &i in indices {
            out.images.extend_from_slice(self.image(i));
            out.labels.push(self.labels[i].clone());
        }
        out
    }

    /// One uniformly placed `height x width` window per example, labels
    /// kept. Window `i` is drawn from stream `i` of `seed`.
    pub fn random_crops(&self, height: usize, width: usize, seed: u64) -> Result<Dataset> {
        if height > self.height || width > self.width || height == 0 || width == 0 {
            return Err(Error::Geometry(format!(
                "{height}x{width} crop of {}x{} images",
                self.height, self.width
            )));
        }
        let mut out = Dataset::new(height, width, self.arity);
        for i in 0..self.len() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let top = rng.gen_range(0..=self.height - height);
            let left = rng.gen_range(0..=self.width - width);
            let img = self.image(i);
            for r in top..top + height {
                out.images.extend_from_slice(&img[r * self.width + left..r * self.width + left + width]);
            }
            out.labels.push(self.labels[i].clone());
        }
        Ok(out)
    }

    /// `(train, held_out)`: the last `ceil(fraction * len)` examples are
    /// held out.
    pub fn split(&self, fraction: f64) -> (Dataset, Dataset) {
        let held = ((self.len() as f64 * fraction).ceil() as usize).min(self.len());
        let cut = self.len() - held;
        let train: Vec<usize> = (0..cut).collect();
        let rest: Vec<usize> = (cut..self.len()).collect();
        (self.subset(&train), self.subset(&rest))
    }

    /// First digit of every label.
    pub fn class_labels(&self) -> Result<Vec<usize>> {
        self.labels
            .iter()
            .map(|l| l.first().map(|&d| d as usize).ok_or(Error::Empty("label")))
            .collect()
    }

    pub fn encode(&self) -> Vec<u8> {
        let record = self.height * self.width + 1 + self.arity;
        let mut out = Vec::with_capacity(HEADER_LEN + self.len() * record);
        out.extend_from_slice(DATASET_MAGIC);
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.arity as u32).to_le_bytes());
        for i in 0..self.len() {
            out.extend_from_slice(self.image(i));
            let label = &self.labels[i];
            out.push(label.len() as u8);
            out.extend_from_slice(label);
            out.extend(std::iter::repeat(PAD_DIGIT).take(self.arity - label.len()));
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < DATASET_MAGIC.len() || &bytes[..8] != DATASET_MAGIC {
            let found = &bytes[..bytes.len().min(8)];
            return Err(Error::BadMagic {
                expected: String::from_utf8_lossy(DATASET_MAGIC).into_owned(),
                found: String::from_utf8_lossy(found).into_owned(),
            });
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::Truncated(format!("{} header bytes", bytes.len())));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
        let count = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let (height, width, arity) = (u32_at(16), u32_at(20), u32_at(24));
        if arity > MAX_DIGITS {
            return Err(Error::Malformed(format!("label arity {arity}")));
        }
        let record = (height * width + 1 + arity) as u64;
        let expected = count
            .checked_mul(record)
            .and_then(|b| b.checked_add(HEADER_LEN as u64))
            .ok_or_else(|| Error::Malformed("header sizes overflow".into()))?;
        if expected != bytes.len() as u64 {
            return Err(Error::LengthMismatch {
                expected,
                actual: bytes.len() as u64,
            });
        }
        let mut data = Dataset::new(height, width, arity);
        for rec in bytes[HEADER_LEN..].chunks(record as usize) {
            let pixels = height * width;
            let len = rec[pixels] as usize;
            if len > arity {
                return Err(Error::Malformed(format!("label length {len} exceeds arity {arity}")));
            }
            let label = rec[pixels + 1..pixels + 1 + len].to_vec();
            data.push(&rec[..pixels], label)?;
        }
        Ok(data)
    }
}

pub fn write_container(data: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, data.encode())?;
    Ok(())
}

pub fn read_container(path: &Path) -> Result<Dataset> {
    if !path.exists() {
        return Err(Error::MissingPath(path.to_path_buf()));
    }
    Dataset::decode(&fs::read(path)?)
}
