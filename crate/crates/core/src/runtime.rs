//! Reference forward-pass interpreter.
//!
//! Plain row-major `f32` loops with a fixed accumulation order (bias first,
//! then input channel, then kernel tap). The C generator emits the same
//! order, so the two agree bit-for-bit on the same platform.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::builder::ModelGraph;
use crate::registry::LayerConfig;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RuntimeError {
    #[error("input shape {got:?} does not match the graph input {expected:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("no reference kernel for op `{0}`")]
    UnsupportedOp(String),
    #[error("layer {layer}: missing parameter tensor `{name}`")]
    MissingTensor { layer: usize, name: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "value count must match shape"
        );
        Self { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Uniform values in `[-1, 1)` from a seeded stream.
    pub fn random(shape: Vec<usize>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Self {
            shape,
            data: (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
        }
    }
}

/// Parameter tensors per layer index, named as in the layer's declarations.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    pub layers: BTreeMap<usize, Vec<(String, Tensor)>>,
}

impl ParamStore {
    pub fn get(&self, layer: usize, name: &str) -> Option<&Tensor> {
        self.layers
            .get(&layer)?
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn insert(&mut self, layer: usize, name: &str, tensor: Tensor) {
        let entry = self.layers.entry(layer).or_default();
        match entry.iter_mut().find(|(n, _)| n == name) {
            Some(slot) => slot.1 = tensor,
            None => entry.push((name.to_string(), tensor)),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.layers.values().flatten().map(|(_, t)| t.numel()).sum()
    }
}

/// Deterministic initialization: every tensor of a layer is uniform in
/// `±1/√fan_in`, where `fan_in` is the product of the weight's trailing
/// dimensions.
pub fn init_params(graph: &ModelGraph, seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::default();
    for (i, layer) in graph.layers.iter().enumerate() {
        let Some(first) = layer.tensors.first() else {
            continue;
        };
        let fan_in: usize = first.shape.iter().skip(1).product::<usize>().max(1);
        let bound = 1.0 / (fan_in as f32).sqrt();
        for decl in &layer.tensors {
            let data = (0..decl.numel())
                .map(|_| rng.gen_range(-bound..=bound))
                .collect();
            store.insert(i, &decl.name, Tensor::new(decl.shape.clone(), data));
        }
    }
    store
}

/// Exact work counters collected by [`forward_counted`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ForwardStats {
    pub macs: u64,
    /// Largest `4 × (input + output)` footprint of any single layer.
    pub peak_activation_bytes: u64,
}

pub fn forward(
    graph: &ModelGraph,
    params: &ParamStore,
    input: &Tensor,
) -> Result<Tensor, RuntimeError> {
    forward_counted(graph, params, input).map(|(t, _)| t)
}

pub fn forward_counted(
    graph: &ModelGraph,
    params: &ParamStore,
    input: &Tensor,
) -> Result<(Tensor, ForwardStats), RuntimeError> {
    if input.shape != graph.input.dims() {
        return Err(RuntimeError::ShapeMismatch {
            expected: graph.input.dims().to_vec(),
            got: input.shape.clone(),
        });
    }
    let mut stats = ForwardStats::default();
    let mut x = input.clone();
    for (i, layer) in graph.layers.iter().enumerate() {
        let y = run_layer(i, layer, params, &x, &mut stats.macs)?;
        stats.peak_activation_bytes = stats
            .peak_activation_bytes
            .max(4 * (x.numel() + y.numel()) as u64);
        x = y;
    }
    Ok((x, stats))
}

fn tensor<'a>(
    params: &'a ParamStore,
    layer: usize,
    name: &str,
) -> Result<&'a Tensor, RuntimeError> {
    params
        .get(layer, name)
        .ok_or_else(|| RuntimeError::MissingTensor {
            layer,
            name: name.to_string(),
        })
}

fn param(layer: &LayerConfig, name: &str) -> usize {
    layer.params.int(name).unwrap_or(0) as usize
}

fn run_layer(
    index: usize,
    layer: &LayerConfig,
    params: &ParamStore,
    x: &Tensor,
    macs: &mut u64,
) -> Result<Tensor, RuntimeError> {
    let out_shape = layer.output.dims().to_vec();
    match layer.op.as_str() {
        "identity" => Ok(x.clone()),
        "flatten" => Ok(Tensor::new(out_shape, x.data.clone())),
        "relu" => Ok(Tensor::new(
            out_shape,
            x.data
                .iter()
                .map(|&v| if v > 0.0 { v } else { 0.0 })
                .collect(),
        )),
        "linear" => {
            let w = tensor(params, index, "weight")?;
            let b = tensor(params, index, "bias")?;
            let (out, inp) = (w.shape[0], w.shape[1]);
            let mut y = vec![0.0f32; out];
            for (o, yo) in y.iter_mut().enumerate() {
                let mut acc = b.data[o];
                let row = &w.data[o * inp..(o + 1) * inp];
                for (wi, xi) in row.iter().zip(&x.data) {
                    acc += wi * xi;
                    *macs += 1;
                }
                *yo = acc;
            }
            Ok(Tensor::new(out_shape, y))
        }
        "conv1d" => {
            let w = tensor(params, index, "weight")?;
            let b = tensor(params, index, "bias")?;
            let (oc, ic, k) = (w.shape[0], w.shape[1], w.shape[2]);
            let (len, out_len) = (x.shape[1], out_shape[1]);
            let (stride, pad) = (param(layer, "stride").max(1), param(layer, "padding"));
            let mut y = vec![0.0f32; oc * out_len];
            for o in 0..oc {
                for t in 0..out_len {
                    let mut acc = b.data[o];
                    for c in 0..ic {
                        for j in 0..k {
                            // padded taps multiply an implicit zero
                            *macs += 1;
                            let pos = (t * stride + j) as isize - pad as isize;
                            if pos < 0 || pos as usize >= len {
                                continue;
                            }
                            acc += w.data[(o * ic + c) * k + j] * x.data[c * len + pos as usize];
                        }
                    }
                    y[o * out_len + t] = acc;
                }
            }
            Ok(Tensor::new(out_shape, y))
        }
        "maxpool" => {
            let (c, len) = (x.shape[0], x.shape[1]);
            let out_len = out_shape[1];
            let (k, s) = (param(layer, "kernel_size"), param(layer, "stride"));
            let mut y = vec![0.0f32; c * out_len];
            for ch in 0..c {
                for t in 0..out_len {
                    let base = ch * len + t * s;
                    let mut m = x.data[base];
                    for j in 1..k {
                        let v = x.data[base + j];
                        if v > m {
                            m = v;
                        }
                    }
                    y[ch * out_len + t] = m;
                }
            }
            Ok(Tensor::new(out_shape, y))
        }
        other => Err(RuntimeError::UnsupportedOp(other.to_string())),
    }
}
