use std::sync::Arc;

use super::{benchmark, Artifact, BackendError, DeviceModel, Generator, Measurement};
use crate::builder::{build_model, BuildError, ModelGraph};
use crate::registry::Registry;
use crate::runtime::{init_params, ParamStore};
use crate::sampler::ArchitectureIR;
use crate::shape::TensorShape;

/// Moves an artifact onto a target.
pub trait HostInterface: Send + Sync {
    fn deploy(&self, graph: &ModelGraph, artifact: &Artifact) -> Result<Deployment, BackendError>;
}

/// Runs measurements on a deployed artifact.
pub trait HardwareManager: Send + Sync {
    fn measure(
        &self,
        deployment: &Deployment,
        graph: &ModelGraph,
        seed: u64,
    ) -> Result<Measurement, BackendError>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct Deployment {
    pub files: usize,
    pub footprint_bytes: u64,
}

/// Accepts any artifact that fits the device memory.
#[derive(Clone, Debug)]
pub struct SimulatedHost {
    pub device: DeviceModel,
}

impl HostInterface for SimulatedHost {
    fn deploy(&self, graph: &ModelGraph, artifact: &Artifact) -> Result<Deployment, BackendError> {
        let footprint_bytes = self.device.check_capacity(graph)?;
        Ok(Deployment {
            files: artifact.files.len(),
            footprint_bytes,
        })
    }
}

#[derive(Clone, Debug)]
pub struct SimulatedHardware {
    pub device: DeviceModel,
}

impl HardwareManager for SimulatedHardware {
    fn measure(
        &self,
        _: &Deployment,
        graph: &ModelGraph,
        seed: u64,
    ) -> Result<Measurement, BackendError> {
        benchmark(graph, &self.device, seed)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub graph: ModelGraph,
    pub params: ParamStore,
    pub artifact: Artifact,
    pub deployment: Deployment,
    pub measurement: Measurement,
}

/// Model builder → compiler → host interface → hardware manager.
///
/// The builder is bound to the compiler's reflected capabilities, so only
/// deployable graphs reach the later stages.
pub struct GeneratorPipeline {
    pub registry: Arc<Registry>,
    pub compiler: Arc<dyn Generator>,
    pub host: Arc<dyn HostInterface>,
    pub hardware: Arc<dyn HardwareManager>,
}

impl GeneratorPipeline {
    pub fn simulated(
        registry: Arc<Registry>,
        compiler: Arc<dyn Generator>,
        device: DeviceModel,
    ) -> Self {
        Self {
            registry,
            compiler,
            host: Arc::new(SimulatedHost { device }),
            hardware: Arc::new(SimulatedHardware { device }),
        }
    }

    pub fn run(
        &self,
        ir: &ArchitectureIR,
        input: &TensorShape,
        output: &TensorShape,
        seed: u64,
    ) -> Result<PipelineOutput, PipelineError> {
        let caps = self.compiler.reflect();
        let graph = build_model(ir, input, output, &self.registry, Some(&caps))?;
        let params = init_params(&graph, seed);
        self.run_graph(graph, params, seed)
    }

    /// Runs the stages after the model builder on an existing graph.
    pub fn run_graph(
        &self,
        graph: ModelGraph,
        params: ParamStore,
        seed: u64,
    ) -> Result<PipelineOutput, PipelineError> {
        let artifact = self.compiler.generate(&graph, &params)?;
        let deployment = self.host.deploy(&graph, &artifact)?;
        let measurement = self.hardware.measure(&deployment, &graph, seed)?;
        Ok(PipelineOutput {
            graph,
            params,
            artifact,
            deployment,
            measurement,
        })
    }
}
