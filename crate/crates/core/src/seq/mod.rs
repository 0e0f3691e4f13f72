//! Multi-digit sequence head: distributions, aggregation of probability
//! maps and multi-scale inference.

mod dist;

pub use dist::{
    average_pool_predictions, inverse_entropy_weights, normalized_inverse, soft_attention_predict, ProbabilityMap, SequenceDist,
    DIGIT_CLASSES, ENTROPY_FLOOR, MAX_DIGITS, NULL_DIGIT,
};

use log::warn;

use crate::attention::{DcnModel, HeadKind, InferMode};
use crate::error::{Error, Result};
use crate::nn::Mode;
use crate::tape::Tape;
use crate::tensor::{Real, Tensor};

/// Scales used when none are given.
pub const DEFAULT_SCALES: [f64; 3] = [1.0, 0.75, 0.5];

/// How a sequence prediction is formed from one scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeqPlan {
    /// Mean of the coarse probability map.
    CoarseAverage,
    /// Inverse-entropy weighting of the coarse probability map.
    SoftAttention,
    /// Fine stack on the `k` most salient patches, inverse-entropy
    /// weighted.
    Dcn { k: usize },
}

/// Bilinear resize of `[n, c, h, w]` to `scale` times its extents (rounded).
pub fn rescale<T: Real>(images: &Tensor<T>, scale: f64) -> Result<Tensor<T>> {
    let [_, _, h, w] = images.dims4()?;
    let (oh, ow) = ((h as f64 * scale).round() as usize, (w as f64 * scale).round() as usize);
    if (oh, ow) == (h, w) {
        return Ok(images.clone());
    }
    let mut tape = Tape::new();
    let x = tape.constant(images.clone());
    let y = tape.resize_bilinear(x, oh, ow)?;
    Ok(tape.value(y).clone())
}

/// Coarse probability map of every example.
pub fn coarse_maps<T: Real>(model: &DcnModel<T>, images: &Tensor<T>) -> Result<Vec<ProbabilityMap>> {
    let mut tape = Tape::new();
    let x = tape.constant(images.clone());
    let out = model.coarse.forward(&mut tape, x, Mode::Infer)?;
    let v = tape.value(out.output);
    let [n, _, h, w] = v.dims4()?;
    let data: Vec<f64> = v.data().iter().map(|x| x.f64()).collect();
    let per = data.len() / n.max(1);
    data.chunks(per.max(1))
        .take(n)
        .map(|chunk| ProbabilityMap::from_planes(chunk, h, w))
        .collect()
}

/// Predictions for a batch under `plan`, averaged over `scales`. Scales at
/// which the image is smaller than the coarse receptive field are skipped.
/// With several scales `k` is capped at the grid size of each scale.
pub fn predict_sequences<T: Real>(
    model: &DcnModel<T>,
    images: &Tensor<T>,
    plan: SeqPlan,
    scales: &[f64],
) -> Result<Vec<SequenceDist>> {
    if model.head != HeadKind::Sequence {
        return Err(Error::Invalid("model does not have a sequence head".into()));
    }
    let [n, _, h, w] = images.dims4()?;
    let (fh, fw) = model.coarse.receptive_field()?.size();
    let mut per_scale: Vec<Vec<SequenceDist>> = Vec::new();
    for &s in scales {
        let (sh, sw) = ((h as f64 * s).round() as usize, (w as f64 * s).round() as usize);
        if sh < fh || sw < fw {
            warn!("scale {s} gives {sh}x{sw}, smaller than the {fh}x{fw} receptive field; skipped");
            continue;
        }
        let scaled = rescale(images, s)?;
        let preds = match plan {
            SeqPlan::CoarseAverage => coarse_maps(model, &scaled)?
                .iter()
                .map(average_pool_predictions)
                .collect::<Result<Vec<_>>>()?,
            SeqPlan::SoftAttention => coarse_maps(model, &scaled)?
                .iter()
                .map(soft_attention_predict)
                .collect::<Result<Vec<_>>>()?,
            SeqPlan::Dcn { k } => {
                let (gh, gw) = model.grid(sh, sw)?;
                let k = if scales.len() > 1 { k.min(gh * gw) } else { k };
                let out = model.infer(&scaled, k, InferMode::FineOnly)?;
                out.probs
                    .iter()
                    .map(|p| SequenceDist::from_channels(p))
                    .collect::<Result<Vec<_>>>()?
            }
        };
        per_scale.push(preds);
    }
    if per_scale.is_empty() {
        return Err(Error::Geometry(format!(
            "{h}x{w} input is smaller than the {fh}x{fw} receptive field at every scale"
        )));
    }
    (0..n)
        .map(|i| {
            let cells = per_scale.iter().map(|p| p[i].clone()).collect();
            average_pool_predictions(&ProbabilityMap::from_cells(cells))
        })
        .collect()
}

/// DCN sequence prediction of a batch: fine stack on the `k` most salient
/// patches per scale, predictions averaged over scales.
pub fn dcn_sequence_infer<T: Real>(
    model: &DcnModel<T>,
    images: &Tensor<T>,
    k: usize,
    scales: &[f64],
) -> Result<Vec<SequenceDist>> {
    predict_sequences(model, images, SeqPlan::Dcn { k }, scales)
}

/// Fraction of predictions whose decoded sequence differs from the label.
pub fn sequence_error(preds: &[SequenceDist], labels: &[Vec<u8>]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let wrong = preds.iter().zip(labels).filter(|(p, l)| &p.decode() != *l).count();
    Ok(wrong as f64 / preds.len() as f64)
}

/// `length d1 .. dN p` for the decoded sequence.
pub fn prediction_line(dist: &SequenceDist) -> String {
    let seq = dist.decode();
    let p = dist.sequence_probability(&seq).unwrap_or(0.0);
    let mut line = seq.len().to_string();
    for d in &seq {
        line.push(' ');
        line.push_str(&d.to_string());
    }
    line.push_str(&format!(" {p:.6}"));
    line
}
