//! Cost and performance estimators, plus the staged criteria evaluation.

mod criteria;
mod proxy;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::backend::{benchmark, DeviceModel};
use crate::builder::ModelGraph;
use crate::registry::LayerConfig;
use crate::runtime::Tensor;
use crate::sampler::ArchitectureIR;

pub use criteria::{
    evaluate_trial, scalarize, Aggregator, CriteriaSet, Criterion, CriterionKind, EvalError,
    Normalizer, ScoreTerm, TermRole, TrialOutcome, WeightedSum,
};
pub use proxy::SyntheticProxy;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Minimize,
    Maximize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub name: String,
    pub value: f64,
    pub direction: Direction,
    pub unit: String,
}

impl MetricValue {
    pub fn new(name: &str, value: f64, direction: Direction, unit: &str) -> Self {
        Self {
            name: name.into(),
            value,
            direction,
            unit: unit.into(),
        }
    }
}

pub fn layer_params(layer: &LayerConfig) -> u64 {
    layer.param_count() as u64
}

/// Two FLOPs per multiply-accumulate; pooling, activations and adapters
/// count zero.
pub fn layer_flops(layer: &LayerConfig) -> u64 {
    2 * layer.macs
}

/// Scalar weights and biases.
pub fn estimate_params(graph: &ModelGraph) -> MetricValue {
    let n: u64 = graph.layers.iter().map(layer_params).sum();
    MetricValue::new("params", n as f64, Direction::Minimize, "count")
}

pub fn estimate_flops(graph: &ModelGraph) -> MetricValue {
    let n: u64 = graph.layers.iter().map(layer_flops).sum();
    MetricValue::new("flops", n as f64, Direction::Minimize, "flop")
}

/// `4 × (parameters + peak activations)` bytes, where a layer executing
/// holds exactly its input and its output buffer.
pub fn estimate_memory(graph: &ModelGraph) -> MetricValue {
    let peak = graph
        .layers
        .iter()
        .map(|l| l.input.numel() + l.output.numel())
        .max()
        .unwrap_or_else(|| 2 * graph.input.numel());
    let params: u64 = graph.layers.iter().map(layer_params).sum();
    MetricValue::new(
        "memory",
        4.0 * (params + peak as u64) as f64,
        Direction::Minimize,
        "byte",
    )
}

/// `Σ_layers (FLOPs / throughput + per-layer overhead)` seconds.
pub fn estimate_latency(graph: &ModelGraph, device: &DeviceModel) -> MetricValue {
    let s: f64 = graph
        .layers
        .iter()
        .map(|l| layer_flops(l) as f64 / device.throughput + device.layer_overhead)
        .sum();
    MetricValue::new("latency", s, Direction::Minimize, "s")
}

/// Everything an estimator may look at for one trial.
#[derive(Clone, Copy)]
pub struct EvalContext<'a> {
    pub graph: &'a ModelGraph,
    pub ir: &'a ArchitectureIR,
    pub device: Option<&'a DeviceModel>,
    /// Per-trial seed (benchmark jitter, proxy noise).
    pub seed: u64,
    /// Pre-processed model inputs, when the study feeds a signal through
    /// the sampled pipeline.
    pub inputs: &'a [Tensor],
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("estimator `{estimator}` failed: {message}")]
pub struct EstimatorFailure {
    pub estimator: String,
    pub message: String,
}

/// A pluggable metric source.
pub trait Estimator: Send + Sync {
    fn name(&self) -> &str;
    fn direction(&self) -> Direction;
    fn unit(&self) -> &str {
        ""
    }
    fn estimate(&self, ctx: &EvalContext<'_>) -> Result<f64, EstimatorFailure>;
}

pub struct ParamCount;
pub struct Flops;
pub struct Memory;

impl Estimator for ParamCount {
    fn name(&self) -> &str {
        "params"
    }
    fn direction(&self) -> Direction {
        Direction::Minimize
    }
    fn unit(&self) -> &str {
        "count"
    }
    fn estimate(&self, ctx: &EvalContext<'_>) -> Result<f64, EstimatorFailure> {
        Ok(estimate_params(ctx.graph).value)
    }
}

impl Estimator for Flops {
    fn name(&self) -> &str {
        "flops"
    }
    fn direction(&self) -> Direction {
        Direction::Minimize
    }
    fn unit(&self) -> &str {
        "flop"
    }
    fn estimate(&self, ctx: &EvalContext<'_>) -> Result<f64, EstimatorFailure> {
        Ok(estimate_flops(ctx.graph).value)
    }
}

impl Estimator for Memory {
    fn name(&self) -> &str {
        "memory"
    }
    fn direction(&self) -> Direction {
        Direction::Minimize
    }
    fn unit(&self) -> &str {
        "byte"
    }
    fn estimate(&self, ctx: &EvalContext<'_>) -> Result<f64, EstimatorFailure> {
        Ok(estimate_memory(ctx.graph).value)
    }
}

/// Where latency numbers come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatencySource {
    Analytic,
    /// Measured on the simulated device (hardware in the loop).
    Benchmark,
}

pub struct Latency {
    pub source: LatencySource,
}

impl Estimator for Latency {
    fn name(&self) -> &str {
        "latency"
    }
    fn direction(&self) -> Direction {
        Direction::Minimize
    }
    fn unit(&self) -> &str {
        "s"
    }
    fn estimate(&self, ctx: &EvalContext<'_>) -> Result<f64, EstimatorFailure> {
        let fail = |m: String| EstimatorFailure {
            estimator: "latency".into(),
            message: m,
        };
        let device = ctx
            .device
            .ok_or_else(|| fail("no device model configured".into()))?;
        match self.source {
            LatencySource::Analytic => Ok(estimate_latency(ctx.graph, device).value),
            LatencySource::Benchmark => benchmark(ctx.graph, device, ctx.seed)
                .map(|m| m.latency_s)
                .map_err(|e| fail(e.to_string())),
        }
    }
}

/// Wraps an estimator and counts how often it runs.
pub struct CountingEstimator {
    inner: Arc<dyn Estimator>,
    calls: AtomicUsize,
}

impl CountingEstimator {
    pub fn new(inner: Arc<dyn Estimator>) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Estimator for CountingEstimator {
    fn name(&self) -> &str {
        self.inner.name()
    }
    fn direction(&self) -> Direction {
        self.inner.direction()
    }
    fn unit(&self) -> &str {
        self.inner.unit()
    }
    fn estimate(&self, ctx: &EvalContext<'_>) -> Result<f64, EstimatorFailure> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.estimate(ctx)
    }
}
