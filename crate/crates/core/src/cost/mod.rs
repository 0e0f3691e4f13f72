//! Multiplication-count accounting.
//!
//! Only multiplications of convolutions and linear layers are counted.
//! A backward pass through such a layer costs its forward count once for
//! the input gradient and once for the weight gradient.

mod counter;

pub use counter::{CounterKey, OpCounter, Pass};

use std::fmt::Write as _;

use crate::attention::{DcnModel, InferMode};
use crate::error::{Error, Result};
use crate::nn::{ActShape, LayerStack};
use crate::tensor::Real;

/// Multiplications of one convolution over a single sample:
/// `out_h * out_w * out_c * in_c * kh * kw`.
pub fn conv_mults(in_c: usize, out_c: usize, kernel: (usize, usize), out: (usize, usize)) -> u64 {
    (out.0 * out.1 * out_c * in_c * kernel.0 * kernel.1) as u64
}

/// Execution plans whose cost can be predicted.
#[derive(Debug, Clone, PartialEq)]
pub enum Plan {
    /// Coarse stack everywhere, then the top layers.
    Coarse,
    /// Fine stack everywhere (input padded by the patch context), then the
    /// top layers.
    Fine,
    /// Coarse stack everywhere with position-weighted aggregation.
    SoftAttention,
    /// Coarse and top, the saliency backward, the fine stack on `k`
    /// patches and the refined top, at every scale.
    Dcn {
        k: usize,
        scales: Vec<f64>,
        mode: InferMode,
    },
}

impl Plan {
    pub fn name(&self) -> &'static str {
        match self {
            Plan::Coarse => "coarse",
            Plan::Fine => "fine",
            Plan::SoftAttention => "soft-attention",
            Plan::Dcn { .. } => "dcn",
        }
    }
}

/// Multiplications of one layer within a plan.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerRecord {
    /// Plan part: `coarse`, `top`, `saliency`, `fine` or `refined-top`.
    pub part: String,
    pub layer: String,
    pub scale: f64,
    /// Output extents of one evaluation, when known.
    pub output: Option<ActShape>,
    /// Evaluations of the layer (patches for the fine part).
    pub repeats: u64,
    pub mults: u64,
}

/// Per-layer and per-part multiplication counts of a plan.
#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub plan: String,
    pub input: (usize, usize),
    pub k: usize,
    pub records: Vec<LayerRecord>,
}

/// Plan parts in execution order.
pub const PARTS: [&str; 5] = ["coarse", "top", "saliency", "fine", "refined-top"];

impl CostReport {
    pub fn total(&self) -> u64 {
        self.records.iter().map(|r| r.mults).sum()
    }

    pub fn part_total(&self, part: &str) -> u64 {
        self.records.iter().filter(|r| r.part == part).map(|r| r.mults).sum()
    }

    /// Report of a counted execution, one record per phase and layer.
    pub fn from_counter(plan: &str, input: (usize, usize), k: usize, counter: &OpCounter) -> Self {
        let mut records: Vec<LayerRecord> = Vec::new();
        for (key, mults) in counter.entries() {
            match records.iter_mut().find(|r| r.part == key.phase && r.layer == key.layer) {
                Some(r) => r.mults += mults,
                None => records.push(LayerRecord {
                    part: key.phase.clone(),
                    layer: key.layer.clone(),
                    scale: 1.0,
                    output: None,
                    repeats: 1,
                    mults,
                }),
            }
        }
        CostReport {
            plan: plan.to_string(),
            input,
            k,
            records,
        }
    }

    /// `plan,input_h,input_w,k,total_mults` without a header.
    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{}", self.plan, self.input.0, self.input.1, self.k, self.total())
    }

    /// Human-readable per-layer table.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<12} {:>6} {:<28} {:>16} {:>8} {:>14}", "part", "scale", "layer", "output", "repeats", "mults");
        for r in &self.records {
            let shape = match r.output {
                Some(ActShape::Map { c, h, w }) => format!("{c}x{h}x{w}"),
                Some(ActShape::Flat { c }) => format!("{c}"),
                None => "-".into(),
            };
            let _ = writeln!(
                out,
                "{:<12} {:>6.2} {:<28} {:>16} {:>8} {:>14}",
                r.part, r.scale, r.layer, shape, r.repeats, r.mults
            );
        }
        let _ = writeln!(out, "{:<12} {:>6} {:<28} {:>16} {:>8} {:>14}", "total", "", "", "", "", self.total());
        out
    }
}

fn push_stack<T: Real>(
    records: &mut Vec<LayerRecord>,
    part: &str,
    scale: f64,
    stack: &LayerStack<T>,
    input: (usize, usize),
    repeats: u64,
    factor: u64,
) -> Result<()> {
    for c in stack.layer_costs(input.0, input.1)? {
        records.push(LayerRecord {
            part: part.to_string(),
            layer: c.layer,
            scale,
            output: Some(c.output),
            repeats,
            mults: c.mults * repeats * factor,
        });
    }
    Ok(())
}

fn spatial(shape: ActShape, what: &str) -> Result<(usize, usize)> {
    match shape {
        ActShape::Map { h, w, .. } => Ok((h, w)),
        ActShape::Flat { .. } => Err(Error::Geometry(format!("{what} output is not a map"))),
    }
}

/// Predicted multiplications of `plan` on one `h x w` input, derived from
/// the layer shapes of `model`.
pub fn plan_cost<T: Real>(model: &DcnModel<T>, plan: &Plan, input: (usize, usize)) -> Result<CostReport> {
    let mut records = Vec::new();
    let mut k_out = 0;
    match plan {
        Plan::Coarse | Plan::SoftAttention => {
            push_stack(&mut records, "coarse", 1.0, &model.coarse, input, 1, 1)?;
            let grid = model.grid(input.0, input.1)?;
            push_stack(&mut records, "top", 1.0, &model.top, grid, 1, 1)?;
        }
        Plan::Fine => {
            let pads = model.geometry(input.0, input.1)?.padding();
            let padded = (input.0 + pads[0] + pads[1], input.1 + pads[2] + pads[3]);
            push_stack(&mut records, "fine", 1.0, &model.fine, padded, 1, 1)?;
            let map = spatial(model.fine.output_shape(padded.0, padded.1)?, "fine stack")?;
            push_stack(&mut records, "top", 1.0, &model.top, map, 1, 1)?;
        }
        Plan::Dcn { k, scales, mode } => {
            k_out = *k;
            if scales.is_empty() {
                return Err(Error::Invalid("no scales".into()));
            }
            for &s in scales {
                let scaled = ((input.0 as f64 * s).round() as usize, (input.1 as f64 * s).round() as usize);
                let grid = model.grid(scaled.0, scaled.1)?;
                let cells = grid.0 * grid.1;
                let k = if scales.len() > 1 { (*k).min(cells) } else { *k };
                if k > cells {
                    return Err(Error::KOutOfRange { k, max: cells });
                }
                push_stack(&mut records, "coarse", s, &model.coarse, scaled, 1, 1)?;
                push_stack(&mut records, "top", s, &model.top, grid, 1, 1)?;
                push_stack(&mut records, "saliency", s, &model.top, grid, 1, 2)?;
                if k == 0 {
                    continue;
                }
                let patch = model.geometry(scaled.0, scaled.1)?.patch_size();
                push_stack(&mut records, "fine", s, &model.fine, patch, k as u64, 1)?;
                match mode {
                    InferMode::SwapIn => push_stack(&mut records, "refined-top", s, &model.top, grid, 1, 1)?,
                    InferMode::FineOnly => {
                        let out = spatial(model.fine.output_shape(patch.0, patch.1)?, "fine stack")?;
                        push_stack(&mut records, "refined-top", s, &model.top, out, k as u64, 1)?
                    }
                }
            }
        }
    }
    Ok(CostReport {
        plan: plan.name().to_string(),
        input,
        k: k_out,
        records,
    })
}

/// DCN cost for every `k` in `ks` and the coarse and fine plans, for each
/// square input size in `sizes`.
pub fn size_sweep<T: Real>(model: &DcnModel<T>, sizes: &[usize], ks: &[usize], mode: InferMode) -> Result<Vec<CostReport>> {
    let mut out = Vec::new();
    for &s in sizes {
        out.push(plan_cost(model, &Plan::Coarse, (s, s))?);
        out.push(plan_cost(model, &Plan::Fine, (s, s))?);
        for &k in ks {
            out.push(plan_cost(
                model,
                &Plan::Dcn {
                    k,
                    scales: vec![1.0],
                    mode,
                },
                (s, s),
            )?);
        }
    }
    Ok(out)
}

pub const CSV_HEADER: &str = "plan,input_h,input_w,k,total_mults";

#[cfg(test)]
mod tests;
