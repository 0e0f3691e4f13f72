use crate::attention::{entropy_unchecked, NORM_TOLERANCE};
use crate::error::{Error, Result};
use crate::nn::SEQ_CHANNELS;

/// Longest representable sequence.
pub const MAX_DIGITS: usize = 5;
/// Classes of one digit head: ten digits plus the absent marker.
pub const DIGIT_CLASSES: usize = 11;
/// Digit-head class meaning "no digit at this position".
pub const NULL_DIGIT: u8 = 10;
/// Floor applied to entropies before inversion.
pub const ENTROPY_FLOOR: f64 = 1e-8;

/// Joint prediction of a digit sequence: a distribution over lengths
/// `1..=5` and one distribution per digit position.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDist {
    pub length: [f64; MAX_DIGITS],
    pub digits: [[f64; DIGIT_CLASSES]; MAX_DIGITS],
}

impl SequenceDist {
    /// Reads the 60-channel head layout: 5 length entries, then the digit
    /// heads in order.
    pub fn from_channels(values: &[f64]) -> Result<Self> {
        if values.len() != SEQ_CHANNELS {
            return Err(Error::Shape {
                op: "sequence head",
                detail: format!("expected {SEQ_CHANNELS} channels, got {}", values.len()),
            });
        }
        let mut d = SequenceDist {
            length: [0.0; MAX_DIGITS],
            digits: [[0.0; DIGIT_CLASSES]; MAX_DIGITS],
        };
        d.length.copy_from_slice(&values[..MAX_DIGITS]);
        for (i, head) in d.digits.iter_mut().enumerate() {
            let start = MAX_DIGITS + i * DIGIT_CLASSES;
            head.copy_from_slice(&values[start..start + DIGIT_CLASSES]);
        }
        d.validate()?;
        Ok(d)
    }

    pub fn to_channels(&self) -> Vec<f64> {
        let mut out = self.length.to_vec();
        for head in &self.digits {
            out.extend_from_slice(head);
        }
        out
    }

    /// Head `i`: 0 is the length head, `1..=5` the digit heads.
    pub fn head(&self, i: usize) -> &[f64] {
        if i == 0 {
            &self.length
        } else {
            &self.digits[i - 1]
        }
    }

    pub fn head_mut(&mut self, i: usize) -> &mut [f64] {
        if i == 0 {
            &mut self.length
        } else {
            &mut self.digits[i - 1]
        }
    }

    /// Checks that all six heads are distributions.
    pub fn validate(&self) -> Result<()> {
        for i in 0..=MAX_DIGITS {
            let h = self.head(i);
            let sum: f64 = h.iter().sum();
            if h.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > NORM_TOLERANCE {
                return Err(Error::NotNormalized { sum });
            }
        }
        Ok(())
    }

    /// Product of the length probability and the probabilities of the
    /// given digits.
    pub fn sequence_probability(&self, seq: &[u8]) -> Result<f64> {
        let n = seq.len();
        if n == 0 || n > MAX_DIGITS {
            return Err(Error::SequenceLength(n));
        }
        let mut p = self.length[n - 1];
        for (head, &d) in self.digits.iter().zip(seq) {
            if d >= NULL_DIGIT {
                return Err(Error::LabelOutOfRange {
                    label: d as usize,
                    classes: NULL_DIGIT as usize,
                });
            }
            p *= head[d as usize];
        }
        Ok(p)
    }

    /// Most likely length, then the most likely digit (0-9) at each
    /// position. Ties go to the smaller value.
    pub fn decode(&self) -> Vec<u8> {
        let n = argmax(&self.length) + 1;
        self.digits[..n].iter().map(|h| argmax(&h[..10]) as u8).collect()
    }

    /// Sum of the entropies of the five digit heads.
    pub fn summed_entropy(&self) -> f64 {
        self.digits.iter().map(|h| entropy_unchecked(h)).sum()
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Grid of per-position sequence predictions, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<SequenceDist>,
}

impl ProbabilityMap {
    /// Reads a `[60, rows, cols]` channel-major block.
    pub fn from_planes(values: &[f64], rows: usize, cols: usize) -> Result<Self> {
        let plane = rows * cols;
        if values.len() != SEQ_CHANNELS * plane {
            return Err(Error::Shape {
                op: "probability map",
                detail: format!("{} values for {rows}x{cols} cells", values.len()),
            });
        }
        let cells = (0..plane)
            .map(|p| {
                let v: Vec<f64> = (0..SEQ_CHANNELS).map(|c| values[c * plane + p]).collect();
                SequenceDist::from_channels(&v)
            })
            .collect::<Result<_>>()?;
        Ok(ProbabilityMap { rows, cols, cells })
    }

    pub fn from_cells(cells: Vec<SequenceDist>) -> Self {
        ProbabilityMap {
            rows: 1,
            cols: cells.len(),
            cells,
        }
    }
}

/// Arithmetic mean of the cells, head by head.
pub fn average_pool_predictions(map: &ProbabilityMap) -> Result<SequenceDist> {
    weighted(map, |_| vec![1.0 / map.cells.len() as f64; map.cells.len()])
}

/// Normalized inverse entropy of head `head` (0 = length) at every cell:
/// `w = (1 / H) / sum(1 / H)` with `H` floored at [`ENTROPY_FLOOR`].
pub fn inverse_entropy_weights(map: &ProbabilityMap, head: usize) -> Vec<f64> {
    let h: Vec<f64> = map.cells.iter().map(|c| entropy_unchecked(c.head(head))).collect();
    normalized_inverse(&h)
}

/// `(1 / max(h, floor)) / sum(1 / max(h, floor))` for every entry.
pub fn normalized_inverse(entropies: &[f64]) -> Vec<f64> {
    let inv: Vec<f64> = entropies.iter().map(|&h| 1.0 / h.max(ENTROPY_FLOOR)).collect();
    let total: f64 = inv.iter().sum();
    inv.iter().map(|v| v / total).collect()
}

/// Per-head average of the cells weighted by [`inverse_entropy_weights`].
pub fn soft_attention_predict(map: &ProbabilityMap) -> Result<SequenceDist> {
    weighted(map, |head| inverse_entropy_weights(map, head))
}

fn weighted(map: &ProbabilityMap, weights: impl Fn(usize) -> Vec<f64>) -> Result<SequenceDist> {
    if map.cells.is_empty() {
        return Err(Error::Empty("probability map"));
    }
    let mut out = SequenceDist {
        length: [0.0; MAX_DIGITS],
        digits: [[0.0; DIGIT_CLASSES]; MAX_DIGITS],
    };
    for head in 0..=MAX_DIGITS {
        let w = weights(head);
        let dst = out.head_mut(head);
        for (cell, &wc) in map.cells.iter().zip(&w) {
            for (d, &p) in dst.iter_mut().zip(cell.head(head)) {
                *d += wc * p;
            }
        }
    }
    Ok(out)
}
