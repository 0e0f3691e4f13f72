//! End-to-end training: cross-entropy on the refined model, hints on the
//! selected patches, and the epoch loop.

use std::fmt::Write as _;
use std::path::PathBuf;

use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{assemble_refined, DcnModel, HeadKind, InferMode, Selection};
use crate::data::{to_tensor, Dataset};
use crate::error::{Error, Result};
use crate::nn::{write_checkpoint, ActShape, LayerStack, Mode, Optimizer, StackOutput};
use crate::seq::{SequenceDist, DIGIT_CLASSES, MAX_DIGITS, NULL_DIGIT};
use crate::tape::{Site, Tape, Var};
use crate::tensor::{Real, Tensor};

/// Probabilities below this are clamped before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// `-ln pred[label]` with `pred[label]` clamped at [`PROB_FLOOR`].
pub fn cross_entropy_loss(pred: &[f64], label: usize) -> Result<f64> {
    let p = pred.get(label).ok_or(Error::LabelOutOfRange {
        label,
        classes: pred.len(),
    })?;
    Ok(-p.max(PROB_FLOOR).ln())
}

/// Sum over positions of the squared distance between coarse and fine
/// vectors.
pub fn hint_loss(coarse: &[Vec<f64>], fine: &[Vec<f64>]) -> Result<f64> {
    if coarse.len() != fine.len() {
        return Err(Error::Invalid(format!("{} coarse vs {} fine vectors", coarse.len(), fine.len())));
    }
    let mut total = 0.0;
    for (c, f) in coarse.iter().zip(fine) {
        if c.len() != f.len() {
            return Err(Error::Invalid(format!("vector sizes {} and {}", c.len(), f.len())));
        }
        total += c.iter().zip(f).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    Ok(total)
}

/// Hint term on the tape: `sum ||c - stop_gradient(f)||^2` for `[m, D]`
/// coarse vectors and fine vectors of `m * D` entries.
pub fn hint_on_tape<T: Real>(tape: &mut Tape<T>, coarse: Var, fine: Var) -> Result<Var> {
    let shape = tape.shape(coarse).to_vec();
    let fixed = tape.detach(fine);
    let fixed = tape.reshape(fixed, shape)?;
    let diff = tape.sub(coarse, fixed)?;
    let sq = tape.mul(diff, diff)?;
    Ok(tape.sum(sq))
}

/// Fraction of rows whose argmax differs from the label.
pub fn error_rate(preds: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let wrong = preds.iter().zip(labels).filter(|(p, &l)| argmax(p) != l).count();
    Ok(wrong as f64 / preds.len() as f64)
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

/// Which parameter groups receive updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Trainable {
    pub coarse: bool,
    pub fine: bool,
    pub top: bool,
}

impl Trainable {
    pub const ALL: Trainable = Trainable {
        coarse: true,
        fine: true,
        top: true,
    };
}

/// What a training run optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// The refined model with hints on the selected patches.
    Dcn,
    /// Coarse stack and top layers alone.
    Coarse,
    /// Fine stack over the padded image and top layers alone.
    Fine,
}

/// Optional periodic checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpointing {
    pub every: usize,
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Patches per example refined by the fine stack.
    pub k: usize,
    pub batch_size: usize,
    pub epochs: usize,
    /// Weight of the hint term: `(1 - lambda) * J + lambda * hint`.
    pub lambda: f64,
    pub coarse_opt: Optimizer,
    pub fine_opt: Optimizer,
    pub top_opt: Optimizer,
    pub trainable: Trainable,
    /// Share of the training set held out for the per-epoch error.
    pub validation: f64,
    pub checkpoint: Option<Checkpointing>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 4,
            batch_size: 32,
            epochs: 10,
            lambda: 0.5,
            coarse_opt: Optimizer::adam(),
            fine_opt: Optimizer::adam(),
            top_opt: Optimizer::adam(),
            trainable: Trainable::ALL,
            validation: 0.1,
            checkpoint: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, value: String, reason: &str| Error::InvalidValue {
            key: key.into(),
            value,
            reason: reason.into(),
        };
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(bad("lambda", self.lambda.to_string(), "must lie in [0, 1]"));
        }
        if self.batch_size == 0 {
            return Err(bad("batch", "0".into(), "must be positive"));
        }
        if !(0.0..1.0).contains(&self.validation) {
            return Err(bad("validation", self.validation.to_string(), "must lie in [0, 1)"));
        }
        if let Some(c) = &self.checkpoint {
            if c.every == 0 {
                return Err(bad("checkpoint_every", "0".into(), "must be positive"));
            }
        }
        Ok(())
    }
}

/// Per-example training targets.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes(Vec<usize>),
    /// Length class and five digit classes (null beyond the length).
    Sequences(Vec<[usize; 1 + MAX_DIGITS]>),
}

impl Targets {
    pub fn from_labels(head: HeadKind, labels: &[Vec<u8>]) -> Result<Self> {
        match head {
            HeadKind::Classes(c) => labels
                .iter()
                .map(|l| {
                    let d = *l.first().ok_or(Error::Empty("label"))? as usize;
                    if d >= c {
                        return Err(Error::LabelOutOfRange { label: d, classes: c });
                    }
                    Ok(d)
                })
                .collect::<Result<_>>()
                .map(Targets::Classes),
            HeadKind::Sequence => labels
                .iter()
                .map(|l| {
                    if l.is_empty() || l.len() > MAX_DIGITS {
                        return Err(Error::SequenceLength(l.len()));
                    }
                    let mut t = [NULL_DIGIT as usize; 1 + MAX_DIGITS];
                    t[0] = l.len() - 1;
                    for (slot, &d) in t[1..].iter_mut().zip(l) {
                        if d >= NULL_DIGIT {
                            return Err(Error::LabelOutOfRange {
                                label: d as usize,
                                classes: NULL_DIGIT as usize,
                            });
                        }
                        *slot = d as usize;
                    }
                    Ok(t)
                })
                .collect::<Result<_>>()
                .map(Targets::Sequences),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(v) => v.len(),
            Targets::Sequences(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Indicator of the target entries of every output row (`[n, channels]`).
    fn indicator<T: Real>(&self, channels: usize) -> Result<Tensor<T>> {
        let mut w = vec![T::zero(); self.len() * channels];
        match self {
            Targets::Classes(v) => {
                for (i, &c) in v.iter().enumerate() {
                    if c >= channels {
                        return Err(Error::LabelOutOfRange { label: c, classes: channels });
                    }
                    w[i * channels + c] = T::one();
                }
            }
            Targets::Sequences(v) => {
                if channels != MAX_DIGITS + MAX_DIGITS * DIGIT_CLASSES {
                    return Err(Error::Invalid(format!("sequence targets for {channels} channels")));
                }
                for (i, t) in v.iter().enumerate() {
                    w[i * channels + t[0]] = T::one();
                    for d in 0..MAX_DIGITS {
                        w[i * channels + MAX_DIGITS + d * DIGIT_CLASSES + t[1 + d]] = T::one();
                    }
                }
            }
        }
        Tensor::new(vec![self.len(), channels], w)
    }

    fn subset(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Classes(v) => Targets::Classes(idx.iter().map(|&i| v[i]).collect()),
            Targets::Sequences(v) => Targets::Sequences(idx.iter().map(|&i| v[i]).collect()),
        }
    }
}

/// Mean over the batch of `-sum(target * log p)` for `[n, C]` outputs.
pub fn cross_entropy_on_tape<T: Real>(tape: &mut Tape<T>, probs: Var, targets: &Targets) -> Result<Var> {
    let shape = tape.shape(probs).to_vec();
    let n = shape[0];
    if n != targets.len() {
        return Err(Error::Invalid(format!("{n} outputs for {} targets", targets.len())));
    }
    let channels = tape.value(probs).numel() / n.max(1);
    let flat = tape.reshape(probs, vec![n, channels])?;
    let logs = tape.log(flat);
    let w = tape.constant(targets.indicator(channels)?);
    let picked = tape.mul(logs, w)?;
    let total = tape.sum(picked);
    Ok(tape.scale(total, -1.0 / n as f64))
}

/// One DCN objective built on a tape.
pub struct DcnGraph<T> {
    pub tape: Tape<T>,
    pub loss: Var,
    pub cross_entropy: Var,
    pub hint: Var,
    pub coarse: StackOutput<T>,
    pub fine: Option<StackOutput<T>>,
    pub top: StackOutput<T>,
    pub sites: Vec<Site>,
}

/// Builds `(1 - lambda) * J + lambda * hint / n` for a batch with the
/// given selection. Hint vectors of the fine stack enter as constants.
pub fn dcn_objective<T: Real>(
    model: &DcnModel<T>,
    images: &Tensor<T>,
    targets: &Targets,
    selection: &Selection,
    lambda: f64,
    modes: [Mode; 3],
) -> Result<DcnGraph<T>> {
    let n = images.shape()[0];
    let mut tape = Tape::new();
    let x = tape.constant(images.clone());
    tape.set_phase("coarse");
    let coarse = model.coarse.forward(&mut tape, x, modes[0])?;
    let (batch, sites, _) = model.patch_batch(images, selection)?;
    let d = model.coarse.out_channels();
    let (repr, fine, hint) = if sites.is_empty() {
        let zero = tape.constant(Tensor::scalar(T::zero()));
        (coarse.output, None, zero)
    } else {
        tape.set_phase("fine");
        let px = tape.constant(batch);
        let fine = model.fine.forward(&mut tape, px, modes[1])?;
        let refined = assemble_refined(&mut tape, coarse.output, fine.output, &sites)?;
        let picked = tape.gather(coarse.output, &sites)?;
        let hint = hint_on_tape(&mut tape, picked, fine.output)?;
        let hint = tape.scale(hint, 1.0 / n as f64);
        debug_assert_eq!(tape.shape(picked)[1], d);
        (refined.repr, Some(fine), hint)
    };
    tape.set_phase("top");
    let top = model.top.forward(&mut tape, repr, modes[2])?;
    let ce = cross_entropy_on_tape(&mut tape, top.output, targets)?;
    let loss = tape.lin_comb(&[(ce, 1.0 - lambda), (hint, lambda)])?;
    Ok(DcnGraph {
        tape,
        loss,
        cross_entropy: ce,
        hint,
        coarse,
        fine,
        top,
        sites,
    })
}

/// Losses of one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub loss: f64,
    pub cross_entropy: f64,
    /// Summed squared hint distance per example.
    pub hint: f64,
}

/// Optimizer state of the three parameter groups.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizers {
    pub coarse: Optimizer,
    pub fine: Optimizer,
    pub top: Optimizer,
}

impl Optimizers {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        Optimizers {
            coarse: cfg.coarse_opt.clone(),
            fine: cfg.fine_opt.clone(),
            top: cfg.top_opt.clone(),
        }
    }
}

fn grads_of<'a, T: Real>(tape: &'a Tape<T>, out: &StackOutput<T>) -> Vec<Option<&'a [T]>> {
    out.params.iter().map(|&p| tape.grad(p)).collect()
}

fn check_grads<T: Real>(stack: &LayerStack<T>, grads: &[Option<&[T]>]) -> Result<()> {
    for (p, g) in stack.params().iter().zip(grads) {
        let g = g.ok_or_else(|| Error::MissingGrad(format!("{}.{}", stack.name(), p.name)))?;
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{}.{}", stack.name(), p.name)));
        }
    }
    Ok(())
}

/// Validates every gradient of the groups to update, then steps them and
/// commits the batch-norm statistics. Nothing changes on error.
fn apply_updates<T: Real>(
    model: &mut DcnModel<T>,
    opts: &mut Optimizers,
    tape: &Tape<T>,
    outputs: [Option<&StackOutput<T>>; 3],
    trainable: Trainable,
) -> Result<()> {
    let [c, f, t] = outputs;
    let plan = [
        (c, trainable.coarse, &model.coarse),
        (f, trainable.fine, &model.fine),
        (t, trainable.top, &model.top),
    ];
    let mut grads: Vec<Option<Vec<Option<Vec<T>>>>> = Vec::new();
    for (out, on, stack) in plan {
        match (out, on) {
            (Some(o), true) => {
                let g = grads_of(tape, o);
                check_grads(stack, &g)?;
                grads.push(Some(g.iter().map(|g| g.map(|s| s.to_vec())).collect()));
            }
            _ => grads.push(None),
        }
    }
    let mut next = model.clone();
    let mut next_opts = opts.clone();
    let groups: [(&mut LayerStack<T>, &mut Optimizer); 3] = [
        (&mut next.coarse, &mut next_opts.coarse),
        (&mut next.fine, &mut next_opts.fine),
        (&mut next.top, &mut next_opts.top),
    ];
    for ((stack, opt), (g, out)) in groups.into_iter().zip(grads.iter().zip(outputs)) {
        if let Some(g) = g {
            let refs: Vec<Option<&[T]>> = g.iter().map(|v| v.as_deref()).collect();
            opt.step(stack.params_mut(), &refs)?;
        }
        if let Some(o) = out {
            stack.commit_stats(&o.stats);
        }
    }
    *model = next;
    *opts = next_opts;
    Ok(())
}

fn step_modes(seed: u64) -> [Mode; 3] {
    [
        Mode::Train { seed },
        Mode::Train {
            seed: seed.wrapping_add(1),
        },
        Mode::Train {
            seed: seed.wrapping_add(2),
        },
    ]
}

/// One DCN update: selection in inference mode, then the train-mode
/// refined forward, the combined loss and the three group updates.
pub fn train_step<T: Real>(
    model: &mut DcnModel<T>,
    opts: &mut Optimizers,
    images: &Tensor<T>,
    targets: &Targets,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<StepReport> {
    let (selection, _) = model.select(images, cfg.k)?;
    let mut g = dcn_objective(model, images, targets, &selection, cfg.lambda, step_modes(seed))?;
    g.tape.backward(g.loss, &[])?;
    let report = StepReport {
        loss: g.tape.value(g.loss).item().f64(),
        cross_entropy: g.tape.value(g.cross_entropy).item().f64(),
        hint: g.tape.value(g.hint).item().f64(),
    };
    if !report.loss.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    apply_updates(model, opts, &g.tape, [Some(&g.coarse), g.fine.as_ref(), Some(&g.top)], cfg.trainable)?;
    Ok(report)
}

/// One update of the coarse or fine model alone (cross-entropy only).
pub fn plain_step<T: Real>(
    model: &mut DcnModel<T>,
    opts: &mut Optimizers,
    images: &Tensor<T>,
    targets: &Targets,
    objective: Objective,
    trainable: Trainable,
    seed: u64,
) -> Result<StepReport> {
    let modes = step_modes(seed);
    let mut tape = Tape::new();
    let (bottom, top) = match objective {
        Objective::Coarse => {
            let x = tape.constant(images.clone());
            model.coarse_forward(&mut tape, x, modes[0])?
        }
        Objective::Fine => {
            let [_, _, h, w] = images.dims4()?;
            let pads = model.geometry(h, w)?.padding();
            let x = tape.constant(images.clone());
            let x = if pads.iter().any(|&p| p > 0) { tape.pad(x, pads)? } else { x };
            let f = model.fine.forward(&mut tape, x, modes[1])?;
            let t = model.top.forward(&mut tape, f.output, modes[2])?;
            (f, t)
        }
        Objective::Dcn => return Err(Error::Invalid("plain_step trains the coarse or fine model".into())),
    };
    let ce = cross_entropy_on_tape(&mut tape, top.output, targets)?;
    tape.backward(ce, &[])?;
    let loss = tape.value(ce).item().f64();
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    let outputs = match objective {
        Objective::Coarse => [Some(&bottom), None, Some(&top)],
        _ => [None, Some(&bottom), Some(&top)],
    };
    apply_updates(model, opts, &tape, outputs, trainable)?;
    Ok(StepReport {
        loss,
        cross_entropy: loss,
        hint: 0.0,
    })
}

/// Predictions of a whole dataset in batches of `batch`.
pub fn predict<T: Real>(
    model: &DcnModel<T>,
    data: &Dataset,
    objective: Objective,
    k: usize,
    mode: InferMode,
    batch: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(data.len());
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch.max(1)) {
        let x = to_tensor::<T>(data, chunk)?;
        let preds = match objective {
            Objective::Dcn => model.infer(&x, k, mode)?.probs,
            Objective::Coarse => model.predict_coarse(&x)?,
            Objective::Fine => model.predict_fine(&x)?,
        };
        out.extend(preds);
    }
    Ok(out)
}

/// Error rate of `model` on `data`: class argmax for class heads, exact
/// sequence match for sequence heads.
pub fn evaluate<T: Real>(
    model: &DcnModel<T>,
    data: &Dataset,
    objective: Objective,
    k: usize,
    mode: InferMode,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let preds = predict(model, data, objective, k, mode, 64)?;
    match model.head {
        HeadKind::Classes(_) => error_rate(&preds, &data.class_labels()?),
        HeadKind::Sequence => {
            let dists = preds.iter().map(|p| SequenceDist::from_channels(p)).collect::<Result<Vec<_>>>()?;
            crate::seq::sequence_error(&dists, &data.labels)
        }
    }
}

/// Whether the fine stack maps a patch of `data` to a single vector, so
/// coarse and fine representations can be compared.
pub fn hints_defined<T: Real>(model: &DcnModel<T>, data: &Dataset) -> Result<bool> {
    let (ph, pw) = model.geometry(data.height, data.width)?.patch_size();
    Ok(matches!(model.fine.output_shape(ph, pw)?, ActShape::Map { h: 1, w: 1, .. }))
}

/// Mean squared coarse-fine distance over the `k` selected patches of
/// every example, with inference-mode stacks. `k` is capped at the coarse
/// grid size.
pub fn mean_hint_distance<T: Real>(model: &DcnModel<T>, data: &Dataset, k: usize) -> Result<f64> {
    if k == 0 || data.is_empty() {
        return Ok(0.0);
    }
    let (rows, cols) = model.grid(data.height, data.width)?;
    let k = k.min(rows * cols);
    let idx: Vec<usize> = (0..data.len()).collect();
    let (mut total, mut count) = (0.0, 0usize);
    for chunk in idx.chunks(64) {
        let x = to_tensor::<T>(data, chunk)?;
        let (selection, _) = model.select(&x, k)?;
        let (batch, sites, _) = model.patch_batch(&x, &selection)?;
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let c = model.coarse.forward(&mut tape, xv, Mode::Infer)?;
        let picked = tape.gather(c.output, &sites)?;
        let pv = tape.constant(batch);
        let f = model.fine.forward(&mut tape, pv, Mode::Infer)?;
        let h = hint_on_tape(&mut tape, picked, f.output)?;
        total += tape.value(h).item().f64();
        count += sites.len();
    }
    Ok(total / count.max(1) as f64)
}

/// Metrics of one completed epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_error: f64,
    pub hint_distance: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

pub const TRAIN_LOG_HEADER: &str = "epoch,train_loss,test_error,hint_distance";

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{TRAIN_LOG_HEADER}\n");
        for r in &self.records {
            let _ = writeln!(out, "{},{:.9},{:.6},{:.9}", r.epoch, r.train_loss, r.test_error, r.hint_distance);
        }
        out
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

/// Trains `model` for `cfg.epochs` epochs. The per-epoch error uses `test`
/// when given and otherwise the held-out tail of `data`.
pub fn fit<T: Real>(
    model: &mut DcnModel<T>,
    data: &Dataset,
    test: Option<&Dataset>,
    objective: Objective,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    cfg.validate()?;
    let (train, held) = data.split(cfg.validation);
    let test = test.unwrap_or(&held);
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let targets = Targets::from_labels(model.head, &train.labels)?;
    let mut opts = Optimizers::from_config(cfg);
    let mut log = TrainLog::default();
    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let x = to_tensor::<T>(&train, chunk)?;
            let t = targets.subset(chunk);
            let seed: u64 = rng.gen();
            let report = match objective {
                Objective::Dcn => train_step(model, &mut opts, &x, &t, cfg, seed)?,
                _ => plain_step(model, &mut opts, &x, &t, objective, cfg.trainable, seed)?,
            };
            loss_sum += report.loss;
            batches += 1;
        }
        let test_error = if test.is_empty() {
            f64::NAN
        } else {
            evaluate(model, test, objective, cfg.k, InferMode::SwapIn)?
        };
        let hint_distance = match test.is_empty() || !hints_defined(model, test)? {
            true => f64::NAN,
            false => mean_hint_distance(model, test, cfg.k)?,
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            test_error,
            hint_distance,
        };
        info!(
            "epoch {epoch}: loss {:.4} error {:.4} hint {:.4}",
            record.train_loss, record.test_error, record.hint_distance
        );
        log.records.push(record);
        if let Some(c) = &cfg.checkpoint {
            if epoch % c.every == 0 {
                std::fs::create_dir_all(&c.dir)?;
                write_checkpoint(&c.dir.join(format!("epoch-{epoch}.ckpt")), &model.state())?;
            }
        }
    }
    Ok(log)
}

#[cfg(test)]
mod tests;
