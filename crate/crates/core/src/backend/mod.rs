//! Generator backends: capability reflection, artifact generation and a
//! simulated device for hardware-in-the-loop measurements.

mod c;
mod json;
mod pipeline;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::builder::ModelGraph;
use crate::dsl::{DslError, SearchSpaceSpec};
use crate::estimators::{estimate_latency, estimate_memory};
use crate::runtime::ParamStore;
use crate::value::{Params, Scalar};

pub use c::{CGenerator, LayerTemplate};
pub use json::{
    export_json, import_json, GraphDocument, JsonGenerator, LayerEntry, FORMAT_VERSION,
};
pub use pipeline::{
    Deployment, GeneratorPipeline, HardwareManager, HostInterface, PipelineError, PipelineOutput,
    SimulatedHardware, SimulatedHost,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("capability error: `{op}` {message}")]
    Capability { op: String, message: String },
    #[error("capacity error: model needs {required} bytes but the device has {capacity}")]
    Capacity { required: u64, capacity: u64 },
    #[error("unsupported graph format version {0}")]
    Version(u64),
    #[error("malformed graph document: {0}")]
    Format(String),
    #[error("invalid backend configuration: {0}")]
    Config(String),
}

/// What a backend can deploy: op names and optional per-op parameter
/// maxima.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapabilitySet {
    ops: BTreeSet<String>,
    #[serde(default)]
    limits: BTreeMap<String, BTreeMap<String, i64>>,
}

impl CapabilitySet {
    pub fn new<I, S>(ops: I) -> Result<Self, BackendError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let ops: BTreeSet<String> = ops.into_iter().map(Into::into).collect();
        if ops.is_empty() {
            return Err(BackendError::Config("capability set is empty".into()));
        }
        Ok(Self {
            ops,
            limits: BTreeMap::new(),
        })
    }

    pub fn with_limit(mut self, op: &str, param: &str, max: i64) -> Self {
        self.limits
            .entry(op.into())
            .or_default()
            .insert(param.into(), max);
        self
    }

    pub fn without(mut self, op: &str) -> Result<Self, BackendError> {
        self.ops.remove(op);
        self.limits.remove(op);
        if self.ops.is_empty() {
            return Err(BackendError::Config("capability set is empty".into()));
        }
        Ok(self)
    }

    pub fn supports(&self, op: &str) -> bool {
        self.ops.contains(op)
    }

    pub fn ops(&self) -> impl Iterator<Item = &str> {
        self.ops.iter().map(String::as_str)
    }

    pub fn allows_value(&self, op: &str, param: &str, value: &Scalar) -> bool {
        match (
            self.limits.get(op).and_then(|l| l.get(param)),
            value.as_int(),
        ) {
            (Some(max), Some(v)) => v <= *max,
            _ => true,
        }
    }

    pub fn check(&self, op: &str, params: &Params) -> Result<(), String> {
        if !self.supports(op) {
            return Err("is not among the supported ops".into());
        }
        for (name, value) in params.iter() {
            if !self.allows_value(op, name, value) {
                return Err(format!("{name}={value} exceeds the backend limit"));
            }
        }
        Ok(())
    }

    /// The part of `spec` this backend can deploy.
    pub fn restrict(&self, spec: &SearchSpaceSpec) -> Result<SearchSpaceSpec, DslError> {
        spec.restrict(&|op| self.supports(op), &|op, param, v| {
            self.allows_value(op, param, v)
        })
    }
}

/// A generated source bundle: relative file names and their contents.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Artifact {
    pub files: Vec<(String, String)>,
}

impl Artifact {
    pub fn file(&self, name: &str) -> Option<&str> {
        self.files
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, c)| c.as_str())
    }

    pub fn write_to(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        for (name, contents) in &self.files {
            fs::write(dir.join(name), contents)?;
        }
        Ok(())
    }
}

/// Translates a graph into deployable files.
pub trait Generator: Send + Sync {
    fn name(&self) -> &str;
    fn reflect(&self) -> CapabilitySet;
    fn generate(&self, graph: &ModelGraph, params: &ParamStore) -> Result<Artifact, BackendError>;

    /// Every layer of `graph` must be covered by [`Generator::reflect`].
    fn check_graph(&self, graph: &ModelGraph) -> Result<(), BackendError> {
        let caps = self.reflect();
        for layer in &graph.layers {
            caps.check(&layer.op, &layer.params)
                .map_err(|message| BackendError::Capability {
                    op: layer.op.clone(),
                    message,
                })?;
        }
        Ok(())
    }
}

/// Analytic stand-in for a target board.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceModel {
    /// FLOP/s.
    pub throughput: f64,
    /// Seconds per layer invocation.
    pub layer_overhead: f64,
    /// Bytes.
    pub memory_capacity: u64,
    /// Multiplicative measurement jitter bound ε.
    #[serde(default)]
    pub jitter: f64,
}

impl Default for DeviceModel {
    fn default() -> Self {
        Self {
            throughput: 1e9,
            layer_overhead: 1e-5,
            memory_capacity: 1 << 20,
            jitter: 0.0,
        }
    }
}

impl DeviceModel {
    pub fn validate(&self) -> Result<(), BackendError> {
        if !(self.throughput.is_finite() && self.throughput > 0.0) {
            return Err(BackendError::Config(format!(
                "throughput {} must be positive",
                self.throughput
            )));
        }
        if !(self.layer_overhead.is_finite() && self.layer_overhead >= 0.0) {
            return Err(BackendError::Config(format!(
                "layer overhead {} must be >= 0",
                self.layer_overhead
            )));
        }
        if !(0.0..=0.1).contains(&self.jitter) {
            return Err(BackendError::Config(format!(
                "jitter {} must lie in [0, 0.1]",
                self.jitter
            )));
        }
        Ok(())
    }

    pub fn check_capacity(&self, graph: &ModelGraph) -> Result<u64, BackendError> {
        let required = estimate_memory(graph).value as u64;
        if required > self.memory_capacity {
            return Err(BackendError::Capacity {
                required,
                capacity: self.memory_capacity,
            });
        }
        Ok(required)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub latency_s: f64,
    pub peak_memory_bytes: u64,
}

/// Measures `graph` on the simulated device: the analytic latency scaled by
/// `1 + ε·u` with `u ∈ [0, 1)` drawn from `seed` alone.
pub fn benchmark(
    graph: &ModelGraph,
    device: &DeviceModel,
    seed: u64,
) -> Result<Measurement, BackendError> {
    let peak_memory_bytes = device.check_capacity(graph)?;
    let u: f64 = ChaCha8Rng::seed_from_u64(seed).gen();
    let latency_s = estimate_latency(graph, device).value * (1.0 + device.jitter * u);
    Ok(Measurement {
        latency_s,
        peak_memory_bytes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::{LayerBuilder, Linear};
    use crate::shape::TensorShape;

    fn linear_graph(n_in: usize, width: i64) -> ModelGraph {
        let p: Params = [("width", width)].into_iter().collect();
        let l = Linear
            .build_layer(&TensorShape::flat(n_in).unwrap(), &p)
            .unwrap();
        ModelGraph {
            input: l.input.clone(),
            output: l.output.clone(),
            layers: vec![l],
        }
    }

    #[test]
    fn empty_capabilities_rejected() {
        assert!(CapabilitySet::new(Vec::<String>::new()).is_err());
        assert!(CapabilitySet::new(["linear"])
            .unwrap()
            .without("linear")
            .is_err());
    }

    #[test]
    fn limits() {
        let caps = CapabilitySet::new(["conv1d"])
            .unwrap()
            .with_limit("conv1d", "out_channels", 8);
        let ok: Params = [("out_channels", 8i64)].into_iter().collect();
        let big: Params = [("out_channels", 16i64)].into_iter().collect();
        assert!(caps.check("conv1d", &ok).is_ok());
        assert!(caps.check("conv1d", &big).is_err());
        assert!(caps.check("linear", &ok).is_err());
    }

    #[test]
    fn benchmark_without_jitter_is_the_estimate() {
        let g = linear_graph(100, 10);
        let dev = DeviceModel {
            memory_capacity: u64::MAX,
            ..DeviceModel::default()
        };
        let m = benchmark(&g, &dev, 5).unwrap();
        assert_eq!(m.latency_s, estimate_latency(&g, &dev).value);
        assert_eq!(m.peak_memory_bytes as f64, estimate_memory(&g).value);
    }

    #[test]
    fn jitter_is_bounded_and_seeded() {
        let g = linear_graph(100, 10);
        let dev = DeviceModel {
            jitter: 0.05,
            memory_capacity: u64::MAX,
            ..DeviceModel::default()
        };
        let est = estimate_latency(&g, &dev).value;
        for seed in 0..50 {
            let m = benchmark(&g, &dev, seed).unwrap().latency_s;
            assert!(est <= m && m <= 1.05 * est);
            assert_eq!(m, benchmark(&g, &dev, seed).unwrap().latency_s);
        }
    }

    #[test]
    fn capacity_error() {
        // 2 MB of weights on a 1 MB device
        let g = linear_graph(1024, 512);
        let dev = DeviceModel {
            memory_capacity: 1 << 20,
            ..DeviceModel::default()
        };
        assert!(matches!(
            benchmark(&g, &dev, 0),
            Err(BackendError::Capacity { .. })
        ));
    }

    #[test]
    fn device_validation() {
        assert!(DeviceModel::default().validate().is_ok());
        assert!(DeviceModel {
            throughput: 0.0,
            ..DeviceModel::default()
        }
        .validate()
        .is_err());
        assert!(DeviceModel {
            jitter: 0.2,
            ..DeviceModel::default()
        }
        .validate()
        .is_err());
    }
}
