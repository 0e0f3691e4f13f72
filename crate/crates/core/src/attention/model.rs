use rand::Rng;

use super::{
    assemble_refined, entropy_on_tape, extract_patches, saliency_map, select_topk, GradSource, PatchGeometry, PatchSet, SaliencyMap,
};
use crate::cost::OpCounter;
use crate::error::{Error, Result};
use crate::nn::{build_preset, ActShape, LayerStack, Mode, StackOutput, SEQ_CHANNELS};
use crate::seq::{soft_attention_predict, ProbabilityMap, DIGIT_CLASSES, MAX_DIGITS};
use crate::tape::{Site, Tape, Var};
use crate::tensor::{Real, Tensor};

/// What the top layers predict.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    /// One softmax over this many classes; saliency uses its entropy.
    Classes(usize),
    /// The 60-channel sequence layout; saliency uses the summed entropy of
    /// the five digit heads.
    Sequence,
}

/// How fine-stack results reach the prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InferMode {
    /// Fine vectors replace coarse ones and the top runs on the mixed map.
    SwapIn,
    /// The top runs on each fine output alone; the per-patch predictions
    /// are averaged (classes) or inverse-entropy weighted (sequences).
    FineOnly,
}

/// Positions chosen for every example of a batch, most salient first.
pub type Selection = Vec<Vec<(usize, usize)>>;

/// Coarse, fine and top stacks with the attention configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct DcnModel<T = f32> {
    pub coarse: LayerStack<T>,
    pub fine: LayerStack<T>,
    pub top: LayerStack<T>,
    /// Extra pixels around each coarse receptive field given to the fine
    /// stack (split between the two sides of each axis).
    pub context: usize,
    pub head: HeadKind,
    pub grad_source: GradSource,
}

/// Everything produced by one inference episode.
#[derive(Debug, Clone)]
pub struct DcnOutput<T> {
    /// Final distribution per example (`head` layout).
    pub probs: Vec<Vec<f64>>,
    /// Output of the plain coarse model per example.
    pub coarse_probs: Vec<Vec<f64>>,
    pub saliency: Vec<SaliencyMap>,
    pub patches: Vec<PatchSet<T>>,
    /// Multiplications by phase: coarse, top, saliency, fine, refined-top.
    pub counter: OpCounter,
}

pub(crate) fn rows<T: Real>(t: &Tensor<T>) -> Vec<Vec<f64>> {
    let n = t.shape()[0];
    let c = t.numel() / n.max(1);
    t.data().chunks(c.max(1)).map(|r| r.iter().map(|v| v.f64()).collect()).collect()
}

impl<T: Real> DcnModel<T> {
    pub fn new(
        coarse: LayerStack<T>,
        fine: LayerStack<T>,
        top: LayerStack<T>,
        context: usize,
        head: HeadKind,
        grad_source: GradSource,
    ) -> Result<Self> {
        let (dc, df) = (coarse.out_channels(), fine.out_channels());
        if dc != df || top.in_channels() != dc {
            return Err(Error::Geometry(format!(
                "coarse vectors have {dc} channels, fine {df}, top expects {}",
                top.in_channels()
            )));
        }
        if coarse.in_channels() != fine.in_channels() {
            return Err(Error::Geometry("coarse and fine stacks read different channel counts".into()));
        }
        let head_channels = match head {
            HeadKind::Classes(c) => c,
            HeadKind::Sequence => SEQ_CHANNELS,
        };
        if top.out_channels() != head_channels {
            return Err(Error::Geometry(format!(
                "top produces {} channels, head needs {head_channels}",
                top.out_channels()
            )));
        }
        coarse.receptive_field()?;
        Ok(DcnModel {
            coarse,
            fine,
            top,
            context,
            head,
            grad_source,
        })
    }

    /// Model families: `cmnist` (context 3), `svhn` (context 1, giving
    /// 54x110 patches), `toy` and `seq` (context 0).
    pub fn preset(family: &str, rng: &mut impl Rng) -> Result<Self> {
        let (context, head, source) = match family {
            "cmnist" | "toy" => (if family == "cmnist" { 3 } else { 0 }, HeadKind::Classes(10), GradSource::CoarseVectors),
            "svhn" => (1, HeadKind::Sequence, GradSource::LayerBelowOutput),
            "seq" => (0, HeadKind::Sequence, GradSource::LayerBelowOutput),
            other => return Err(Error::UnknownPreset(other.to_string())),
        };
        DcnModel::new(
            build_preset(&format!("{family}-coarse"), rng)?,
            build_preset(&format!("{family}-fine"), rng)?,
            build_preset(&format!("{family}-top"), rng)?,
            context,
            head,
            source,
        )
    }

    pub fn cast<U: Real>(&self) -> DcnModel<U> {
        DcnModel {
            coarse: self.coarse.cast(),
            fine: self.fine.cast(),
            top: self.top.cast(),
            context: self.context,
            head: self.head,
            grad_source: self.grad_source,
        }
    }

    /// Coarse grid for an `h x w` input.
    pub fn grid(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        match self.coarse.output_shape(h, w)? {
            ActShape::Map { h, w, .. } => Ok((h, w)),
            ActShape::Flat { .. } => Err(Error::Geometry("coarse stack is not spatial".into())),
        }
    }

    pub fn geometry(&self, h: usize, w: usize) -> Result<PatchGeometry> {
        PatchGeometry::new(self.coarse.receptive_field()?, self.context, (h, w))
    }

    /// All parameters and running statistics, prefixed by stack name.
    pub fn state(&self) -> Vec<(String, Tensor<T>)> {
        let mut s = self.coarse.state();
        s.extend(self.fine.state());
        s.extend(self.top.state());
        s
    }

    pub fn load_state(&mut self, records: &[(String, Tensor<T>)]) -> Result<()> {
        let mut next = self.clone();
        next.coarse.load_state(records)?;
        next.fine.load_state(records)?;
        next.top.load_state(records)?;
        *self = next;
        Ok(())
    }

    /// Coarse forward followed by the top layers, in phases `coarse` and
    /// `top`.
    pub fn coarse_forward(&self, tape: &mut Tape<T>, x: Var, mode: Mode) -> Result<(StackOutput<T>, StackOutput<T>)> {
        tape.set_phase("coarse");
        let c = self.coarse.forward(tape, x, mode)?;
        tape.set_phase("top");
        let t = self.top.forward(tape, c.output, mode)?;
        Ok((c, t))
    }

    /// Entropy of the top output summed over the batch.
    pub fn entropy(&self, tape: &mut Tape<T>, probs: Var) -> Result<Var> {
        match self.head {
            HeadKind::Classes(c) => entropy_on_tape(tape, probs, 0, c),
            HeadKind::Sequence => entropy_on_tape(tape, probs, MAX_DIGITS, MAX_DIGITS * DIGIT_CLASSES),
        }
    }

    /// One backward pass from the output entropy that stops at the saliency
    /// source, in phase `saliency`. Returns one map per example.
    pub fn saliency(&self, tape: &mut Tape<T>, coarse: &StackOutput<T>, top: &StackOutput<T>) -> Result<Vec<SaliencyMap>> {
        tape.set_phase("saliency");
        let source = match self.grad_source {
            GradSource::CoarseVectors => coarse.output,
            GradSource::LayerBelowOutput => coarse
                .logits
                .ok_or_else(|| Error::Geometry("coarse stack has no softmax head".into()))?,
        };
        let h = self.entropy(tape, top.output)?;
        saliency_map(tape, source, h, self.grad_source)
    }

    /// Saliency maps and top-`k` positions of every example, computed in
    /// inference mode on a private tape.
    pub fn select(&self, images: &Tensor<T>, k: usize) -> Result<(Selection, Vec<SaliencyMap>)> {
        let mut tape = Tape::new();
        let x = tape.constant(images.clone());
        let (c, t) = self.coarse_forward(&mut tape, x, Mode::Infer)?;
        let maps = self.saliency(&mut tape, &c, &t)?;
        let sel = maps.iter().map(|m| select_topk(m, k)).collect::<Result<_>>()?;
        Ok((sel, maps))
    }

    /// Crops of all selected positions as one batch, with their sites.
    pub fn patch_batch(&self, images: &Tensor<T>, selection: &Selection) -> Result<(Tensor<T>, Vec<Site>, Vec<PatchSet<T>>)> {
        let [_, c, h, w] = images.dims4()?;
        let geometry = self.geometry(h, w)?;
        let grid = self.grid(h, w)?;
        let (ph, pw) = geometry.patch_size();
        let mut sets = Vec::with_capacity(selection.len());
        let mut sites = Vec::new();
        let mut data = Vec::new();
        for (s, positions) in selection.iter().enumerate() {
            let set = extract_patches(images, s, positions, &geometry, grid)?;
            data.extend_from_slice(set.patches.data());
            sites.extend(positions.iter().map(|&(i, j)| Site::new(s, i, j)));
            sets.push(set);
        }
        let batch = Tensor::new(vec![sites.len(), c, ph, pw], data)?;
        Ok((batch, sites, sets))
    }

    /// Full inference: coarse, top, saliency, top-`k` selection, fine stack
    /// on the patches and the refined prediction. With `k = 0` the coarse
    /// prediction is returned and no refined top pass runs.
    pub fn infer(&self, images: &Tensor<T>, k: usize, mode: InferMode) -> Result<DcnOutput<T>> {
        let mut tape = Tape::new();
        let x = tape.constant(images.clone());
        let (c, t) = self.coarse_forward(&mut tape, x, Mode::Infer)?;
        let coarse_probs = rows(tape.value(t.output));
        let maps = self.saliency(&mut tape, &c, &t)?;
        let selection: Selection = maps.iter().map(|m| select_topk(m, k)).collect::<Result<_>>()?;
        let (batch, sites, patches) = self.patch_batch(images, &selection)?;
        if k == 0 {
            return Ok(DcnOutput {
                probs: coarse_probs.clone(),
                coarse_probs,
                saliency: maps,
                patches,
                counter: tape.take_counter(),
            });
        }
        tape.set_phase("fine");
        let px = tape.constant(batch);
        let f = self.fine.forward(&mut tape, px, Mode::Infer)?;
        tape.set_phase("refined-top");
        let probs = match mode {
            InferMode::SwapIn => {
                let refined = assemble_refined(&mut tape, c.output, f.output, &sites)?;
                let out = self.top.forward(&mut tape, refined.repr, Mode::Infer)?;
                rows(tape.value(out.output))
            }
            InferMode::FineOnly => {
                let out = self.top.forward(&mut tape, f.output, Mode::Infer)?;
                let per_patch = rows(tape.value(out.output));
                per_patch.chunks(k).map(|group| self.aggregate(group)).collect::<Result<_>>()?
            }
        };
        Ok(DcnOutput {
            probs,
            coarse_probs,
            saliency: maps,
            patches,
            counter: tape.take_counter(),
        })
    }

    /// Combines independent predictions of one example.
    pub fn aggregate(&self, preds: &[Vec<f64>]) -> Result<Vec<f64>> {
        if preds.is_empty() {
            return Err(Error::Empty("prediction set"));
        }
        match self.head {
            HeadKind::Classes(c) => {
                let mut out = vec![0.0; c];
                for p in preds {
                    for (o, v) in out.iter_mut().zip(p) {
                        *o += v / preds.len() as f64;
                    }
                }
                Ok(out)
            }
            HeadKind::Sequence => {
                let cells = preds
                    .iter()
                    .map(|p| crate::seq::SequenceDist::from_channels(p))
                    .collect::<Result<_>>()?;
                Ok(soft_attention_predict(&ProbabilityMap::from_cells(cells))?.to_channels())
            }
        }
    }

    /// Output of the plain coarse model.
    pub fn predict_coarse(&self, images: &Tensor<T>) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let x = tape.constant(images.clone());
        let (_, t) = self.coarse_forward(&mut tape, x, Mode::Infer)?;
        Ok(rows(tape.value(t.output)))
    }

    /// Fine stack over the whole image, padded by the patch context, as a
    /// `[n, D, rows, cols]` map (phase `fine`).
    pub fn fine_map(&self, tape: &mut Tape<T>, images: &Tensor<T>) -> Result<Var> {
        let [_, _, h, w] = images.dims4()?;
        let pads = self.geometry(h, w)?.padding();
        let x = tape.constant(images.clone());
        let x = if pads.iter().any(|&p| p > 0) { tape.pad(x, pads)? } else { x };
        tape.set_phase("fine");
        Ok(self.fine.forward(tape, x, Mode::Infer)?.output)
    }

    /// Output of the plain fine model: the fine map through the top layers.
    pub fn predict_fine(&self, images: &Tensor<T>) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let f = self.fine_map(&mut tape, images)?;
        tape.set_phase("top");
        let t = self.top.forward(&mut tape, f, Mode::Infer)?;
        Ok(rows(tape.value(t.output)))
    }
}
