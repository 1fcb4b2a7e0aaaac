//! Searchable sensor-signal pre-processing, sampled in the same trial as
//! the architecture.
//!
//! Stage operations and their parameters:
//!
//! | op                 | parameters                                     |
//! |--------------------|------------------------------------------------|
//! | `filter`           | `length` (required), `kind` = `moving_average` |
//! | `downsample`       | `factor` (required)                            |
//! | `window_sequential`| `size` (required), `stride` (defaults to size) |
//! | `window_event`     | `threshold`, `size` (both required)            |
//! | `normalize`        | `method` ∈ {`zscore`, `minmax`}, default zscore |
//! | `identity`         | none                                           |
//!
//! Signals are `[channels, length]`. After a windowing stage every later
//! stage runs on each window separately.

use serde::{Deserialize, Serialize};

use crate::dsl::{BlockSpec, CandidateKind};
use crate::registry::ParamSpec;
use crate::runtime::Tensor;
use crate::shape::TensorShape;
use crate::value::{Params, Scalar, ScalarKind};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PreprocError {
    #[error("pre-processing geometry: {0}")]
    Geometry(String),
    #[error("unknown pre-processing op `{0}`")]
    UnknownOp(String),
    #[error("invalid parameters for `{op}`: {message}")]
    BadParams { op: String, message: String },
}

/// The `preprocessing:` section: ordered stage slots in block syntax.
#[derive(Clone, Debug, PartialEq)]
pub struct PreprocSpaceSpec {
    pub stages: Vec<BlockSpec>,
}

pub const PREPROC_OPS: &[&str] = &[
    "filter",
    "downsample",
    "window_sequential",
    "window_event",
    "normalize",
    "identity",
];

pub fn op_params(op: &str) -> Option<Vec<ParamSpec>> {
    Some(match op {
        "filter" => vec![
            ParamSpec::optional("kind", "moving_average"),
            ParamSpec::required("length", ScalarKind::Int),
        ],
        "downsample" => vec![ParamSpec::required("factor", ScalarKind::Int)],
        "window_sequential" => vec![
            ParamSpec::required("size", ScalarKind::Int),
            ParamSpec::derived("stride", ScalarKind::Int),
        ],
        "window_event" => vec![
            ParamSpec::required("threshold", ScalarKind::Float),
            ParamSpec::required("size", ScalarKind::Int),
        ],
        "normalize" => vec![ParamSpec::optional("method", "zscore")],
        "identity" => vec![],
        _ => return None,
    })
}

pub fn is_window_op(op: &str) -> bool {
    matches!(op, "window_sequential" | "window_event")
}

/// Checks every value in a stage's domains is a legal parameter.
pub(crate) fn validate_stage(stage: &BlockSpec) -> Result<(), String> {
    for cand in &stage.candidates {
        let CandidateKind::Layer { params } = &cand.kind else {
            continue;
        };
        for p in params {
            for v in p.domain.values() {
                check_param(&cand.name, &p.name, v)
                    .map_err(|m| format!("{}.{}: {m}", cand.name, p.name))?;
            }
        }
    }
    Ok(())
}

fn check_param(op: &str, name: &str, v: &Scalar) -> Result<(), String> {
    match (op, name) {
        ("filter", "kind") if v.as_str() != Some("moving_average") => {
            Err(format!("unsupported filter kind {v} (only moving_average)"))
        }
        ("normalize", "method") if !matches!(v.as_str(), Some("zscore" | "minmax")) => {
            Err(format!("unknown method {v} (zscore or minmax)"))
        }
        ("window_event", "threshold") if v.as_float().is_none_or(|t| t < 0.0) => {
            Err(format!("threshold must be >= 0, got {v}"))
        }
        (_, "length" | "factor" | "size" | "stride") if v.as_int().is_none_or(|n| n < 1) => {
            Err(format!("must be an integer >= 1, got {v}"))
        }
        _ => Ok(()),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizeMethod {
    Zscore,
    Minmax,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum PreprocOp {
    /// Centered moving average of `length` samples.
    Filter {
        length: usize,
    },
    Downsample {
        factor: usize,
    },
    WindowSequential {
        size: usize,
        stride: usize,
    },
    WindowEvent {
        threshold: f64,
        size: usize,
    },
    Normalize {
        method: NormalizeMethod,
    },
    Identity,
}

impl PreprocOp {
    pub fn from_params(op: &str, params: &Params) -> Result<Self, PreprocError> {
        let bad = |m: &str| PreprocError::BadParams {
            op: op.into(),
            message: m.into(),
        };
        for (name, v) in params.iter() {
            check_param(op, name, v).map_err(|m| bad(&m))?;
        }
        let int = |name: &str| {
            params
                .int(name)
                .map(|v| v as usize)
                .ok_or_else(|| bad(&format!("missing `{name}`")))
        };
        Ok(match op {
            "filter" => PreprocOp::Filter {
                length: int("length")?,
            },
            "downsample" => PreprocOp::Downsample {
                factor: int("factor")?,
            },
            "window_sequential" => {
                let size = int("size")?;
                PreprocOp::WindowSequential {
                    size,
                    stride: params.int("stride").map_or(size, |s| s as usize),
                }
            }
            "window_event" => PreprocOp::WindowEvent {
                threshold: params
                    .float("threshold")
                    .ok_or_else(|| bad("missing `threshold`"))?,
                size: int("size")?,
            },
            "normalize" => PreprocOp::Normalize {
                method: match params.str("method").unwrap_or("zscore") {
                    "minmax" => NormalizeMethod::Minmax,
                    _ => NormalizeMethod::Zscore,
                },
            },
            "identity" => PreprocOp::Identity,
            other => return Err(PreprocError::UnknownOp(other.into())),
        })
    }

    pub fn is_window(&self) -> bool {
        matches!(
            self,
            PreprocOp::WindowSequential { .. } | PreprocOp::WindowEvent { .. }
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocStage {
    pub slot: String,
    #[serde(flatten)]
    pub op: PreprocOp,
}

/// A sampled pipeline with all parameters fixed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResolvedPreproc {
    pub stages: Vec<PreprocStage>,
}

impl ResolvedPreproc {
    pub fn new(stages: Vec<PreprocStage>) -> Self {
        Self { stages }
    }
}

fn geometry(msg: String) -> PreprocError {
    PreprocError::Geometry(msg)
}

/// Per-window model input shape produced by `rp` from raw `input`.
pub fn preproc_output_shape(
    rp: &ResolvedPreproc,
    input: &TensorShape,
) -> Result<TensorShape, PreprocError> {
    let (channels, mut length) = input
        .channels_length()
        .ok_or_else(|| geometry(format!("signals must be [channels, length], got {input}")))?;
    for stage in &rp.stages {
        length = match stage.op {
            PreprocOp::Filter { length: n } => {
                if n > length {
                    return Err(geometry(format!(
                        "filter length {n} exceeds signal length {length}"
                    )));
                }
                length
            }
            PreprocOp::Downsample { factor } => {
                let out = length / factor;
                if out == 0 {
                    return Err(geometry(format!(
                        "downsample by {factor} empties length {length}"
                    )));
                }
                out
            }
            PreprocOp::WindowSequential { size, .. } | PreprocOp::WindowEvent { size, .. } => {
                if size > length {
                    return Err(geometry(format!(
                        "window size {size} exceeds signal length {length}"
                    )));
                }
                size
            }
            PreprocOp::Normalize { .. } | PreprocOp::Identity => length,
        };
    }
    Ok(TensorShape::sequence(channels, length).expect("extents checked above"))
}

/// Runs the pipeline on one raw signal and returns the model inputs: one
/// tensor without windowing, otherwise one per emitted window.
pub fn apply_preproc(rp: &ResolvedPreproc, signal: &Tensor) -> Result<Vec<Tensor>, PreprocError> {
    let shape = TensorShape::new(signal.shape.clone()).map_err(|e| geometry(e.to_string()))?;
    preproc_output_shape(rp, &shape)?;
    let mut current = vec![signal.clone()];
    for stage in &rp.stages {
        let mut next = Vec::with_capacity(current.len());
        for t in &current {
            match stage.op {
                PreprocOp::Filter { length } => next.push(moving_average(t, length)),
                PreprocOp::Downsample { factor } => next.push(downsample(t, factor)),
                PreprocOp::WindowSequential { size, stride } => {
                    next.extend(sequential_windows(t, size, stride))
                }
                PreprocOp::WindowEvent { threshold, size } => {
                    next.extend(event_windows(t, threshold, size))
                }
                PreprocOp::Normalize { method } => next.push(normalize(t, method)),
                PreprocOp::Identity => next.push(t.clone()),
            }
        }
        current = next;
    }
    Ok(current)
}

fn dims(t: &Tensor) -> (usize, usize) {
    (t.shape[0], t.shape[1])
}

fn moving_average(t: &Tensor, len: usize) -> Tensor {
    let (c, l) = dims(t);
    let valid = l - len + 1;
    let offset = (len - 1) / 2;
    let mut out = vec![0.0f32; c * l];
    for ch in 0..c {
        let row = &t.data[ch * l..(ch + 1) * l];
        let avg: Vec<f32> = (0..valid)
            .map(|i| (row[i..i + len].iter().map(|&v| v as f64).sum::<f64>() / len as f64) as f32)
            .collect();
        for j in 0..l {
            let idx = j.saturating_sub(offset).min(valid - 1);
            out[ch * l + j] = avg[idx];
        }
    }
    Tensor::new(vec![c, l], out)
}

fn downsample(t: &Tensor, factor: usize) -> Tensor {
    let (c, l) = dims(t);
    let n = l / factor;
    let mut out = Vec::with_capacity(c * n);
    for ch in 0..c {
        out.extend((0..n).map(|i| t.data[ch * l + i * factor]));
    }
    Tensor::new(vec![c, n], out)
}

fn window(t: &Tensor, start: usize, size: usize) -> Tensor {
    let (c, l) = dims(t);
    let mut out = Vec::with_capacity(c * size);
    for ch in 0..c {
        out.extend_from_slice(&t.data[ch * l + start..ch * l + start + size]);
    }
    Tensor::new(vec![c, size], out)
}

fn sequential_windows(t: &Tensor, size: usize, stride: usize) -> Vec<Tensor> {
    let (_, l) = dims(t);
    if size > l {
        return Vec::new();
    }
    (0..=(l - size) / stride)
        .map(|k| window(t, k * stride, size))
        .collect()
}

/// One window at every onset: a sample where some channel reaches
/// `threshold` in magnitude while the preceding sample was quiet on all
/// channels. Onsets too close to the end for a full window are dropped.
fn event_windows(t: &Tensor, threshold: f64, size: usize) -> Vec<Tensor> {
    let (c, l) = dims(t);
    let active = |i: usize| (0..c).any(|ch| (t.data[ch * l + i] as f64).abs() >= threshold);
    let mut out = Vec::new();
    let mut prev_active = false;
    for i in 0..l {
        let a = active(i);
        if a && !prev_active && i + size <= l {
            out.push(window(t, i, size));
        }
        prev_active = a;
    }
    out
}

fn normalize(t: &Tensor, method: NormalizeMethod) -> Tensor {
    let (c, l) = dims(t);
    let mut out = vec![0.0f32; c * l];
    for ch in 0..c {
        let row = &t.data[ch * l..(ch + 1) * l];
        let dst = &mut out[ch * l..(ch + 1) * l];
        match method {
            NormalizeMethod::Zscore => {
                let mean = row.iter().map(|&v| v as f64).sum::<f64>() / l as f64;
                let var = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / l as f64;
                let std = var.sqrt();
                if std > 0.0 {
                    for (d, &v) in dst.iter_mut().zip(row) {
                        *d = ((v as f64 - mean) / std) as f32;
                    }
                }
            }
            NormalizeMethod::Minmax => {
                let lo = row.iter().copied().fold(f32::INFINITY, f32::min) as f64;
                let hi = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
                if hi > lo {
                    for (d, &v) in dst.iter_mut().zip(row) {
                        *d = ((v as f64 - lo) / (hi - lo)) as f32;
                    }
                }
            }
        }
    }
    Tensor::new(vec![c, l], out)
}
