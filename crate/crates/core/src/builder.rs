//! Turns an [`ArchitectureIR`] into a shape-checked [`ModelGraph`].

use std::fmt;

use serde::Serialize;

use crate::backend::CapabilitySet;
use crate::estimators;
use crate::registry::{
    LayerConfig, LayerRole, Registry, RegistryError, ShapeError, TensorDecl, Transition,
};
use crate::sampler::ArchitectureIR;
use crate::shape::{TensorKind, TensorShape};
use crate::value::Params;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BuildError {
    #[error("shape error: {0}")]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    NoTransition(#[from] RegistryError),
    #[error("`{op}` is not supported by the bound backend: {message}")]
    Capability { op: String, message: String },
    #[error("operation `{0}` is not registered")]
    UnknownOp(String),
}

/// A sequence of concrete layers whose shapes chain exactly from `input`
/// to `output`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct ModelGraph {
    pub input: TensorShape,
    pub output: TensorShape,
    pub layers: Vec<LayerConfig>,
}

impl ModelGraph {
    /// `(layer index, tensor)` for every declared parameter tensor.
    pub fn param_inventory(&self) -> impl Iterator<Item = (usize, &TensorDecl)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.tensors.iter().map(move |t| (i, t)))
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerConfig::param_count).sum()
    }

    pub fn ops(&self) -> impl Iterator<Item = &str> {
        self.layers.iter().map(|l| l.op.as_str())
    }
}

/// Builds `ir` for the given network input and output shapes.
///
/// Adapters from the registry's transition table are spliced in wherever an
/// op needs a different tensor kind than the previous layer produced. A
/// head-capable final layer is built with `build_last`; otherwise a flat
/// output gets a flatten adapter (if needed) plus a `linear` head.
pub fn build_model(
    ir: &ArchitectureIR,
    input: &TensorShape,
    output: &TensorShape,
    registry: &Registry,
    capabilities: Option<&CapabilitySet>,
) -> Result<ModelGraph, BuildError> {
    let mut b = Builder {
        registry,
        capabilities,
        layers: Vec::new(),
        current: input.clone(),
    };
    let n = ir.layers.len();
    let mut terminated = false;
    for (i, layer) in ir.layers.iter().enumerate() {
        b.check_capability(&layer.op, &layer.params)?;
        let builder = registry
            .layer(&layer.op)
            .ok_or_else(|| BuildError::UnknownOp(layer.op.clone()))?;
        if let Some(kind) = builder.input_kind() {
            b.convert_to(kind)?;
        }
        let last = i + 1 == n && builder.head_capable() && output.kind() == TensorKind::FlatVector;
        let config = if last {
            terminated = true;
            builder.build_last(&b.current, &layer.params, output)?
        } else {
            builder.build_layer(&b.current, &layer.params)?
        };
        b.push(config, LayerRole::Sampled)?;
    }
    if !terminated {
        match output.kind() {
            TensorKind::FlatVector => {
                b.convert_to(TensorKind::FlatVector)?;
                let head = registry
                    .layer("linear")
                    .ok_or_else(|| BuildError::UnknownOp("linear".into()))?;
                let params: Params = [("width", output.dims()[0] as i64)].into_iter().collect();
                b.check_capability("linear", &params)?;
                let config = head.build_last(&b.current, &params, output)?;
                b.push(config, LayerRole::Head)?;
            }
            TensorKind::ChannelledSequence => {
                if &b.current != output {
                    return Err(ShapeError::new(
                        ir.layers.last().map_or("<input>", |l| l.op.as_str()),
                        format!(
                            "network ends with {} but the output must be {output}",
                            b.current
                        ),
                    )
                    .into());
                }
            }
        }
    }
    Ok(ModelGraph {
        input: input.clone(),
        output: output.clone(),
        layers: b.layers,
    })
}

struct Builder<'a> {
    registry: &'a Registry,
    capabilities: Option<&'a CapabilitySet>,
    layers: Vec<LayerConfig>,
    current: TensorShape,
}

impl Builder<'_> {
    fn check_capability(&self, op: &str, params: &Params) -> Result<(), BuildError> {
        match self.capabilities {
            Some(caps) => caps
                .check(op, params)
                .map_err(|message| BuildError::Capability {
                    op: op.into(),
                    message,
                }),
            None => Ok(()),
        }
    }

    fn convert_to(&mut self, kind: TensorKind) -> Result<(), BuildError> {
        match self
            .registry
            .resolve_transition(self.current.kind(), kind)?
        {
            Transition::Identity => Ok(()),
            Transition::Adapter(entry) => {
                let config = entry.adapt(&self.current)?;
                self.check_capability(&config.op, &config.params)?;
                self.push(config, LayerRole::Adapter)
            }
        }
    }

    fn push(&mut self, mut config: LayerConfig, role: LayerRole) -> Result<(), BuildError> {
        if config.input != self.current {
            return Err(ShapeError::new(
                &config.op,
                format!(
                    "built for input {} but receives {}",
                    config.input, self.current
                ),
            )
            .into());
        }
        config.role = role;
        self.current = config.output.clone();
        self.layers.push(config);
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerRow {
    pub index: usize,
    pub op: String,
    pub role: LayerRole,
    pub params: Params,
    pub input: TensorShape,
    pub output: TensorShape,
    pub param_count: u64,
    pub flops: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GraphSummary {
    pub rows: Vec<LayerRow>,
    pub total_params: u64,
    pub total_flops: u64,
}

/// Per-layer table in graph order, with totals from the cost estimators.
pub fn describe(graph: &ModelGraph) -> GraphSummary {
    let rows = graph
        .layers
        .iter()
        .enumerate()
        .map(|(index, l)| LayerRow {
            index,
            op: l.op.clone(),
            role: l.role,
            params: l.params.clone(),
            input: l.input.clone(),
            output: l.output.clone(),
            param_count: estimators::layer_params(l),
            flops: estimators::layer_flops(l),
        })
        .collect();
    GraphSummary {
        rows,
        total_params: estimators::estimate_params(graph).value as u64,
        total_flops: estimators::estimate_flops(graph).value as u64,
    }
}

impl fmt::Display for GraphSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:>3}  {:<10} {:<8} {:<14} {:<14} {:>10} {:>12}  params",
            "#", "op", "role", "in", "out", "weights", "flops"
        )?;
        for r in &self.rows {
            let role = match r.role {
                LayerRole::Sampled => "",
                LayerRole::Adapter => "adapter",
                LayerRole::Head => "head",
            };
            writeln!(
                f,
                "{:>3}  {:<10} {:<8} {:<14} {:<14} {:>10} {:>12}  {}",
                r.index,
                r.op,
                role,
                r.input.to_string(),
                r.output.to_string(),
                r.param_count,
                r.flops,
                r.params
            )?;
        }
        write!(
            f,
            "total: {} weights, {} flops",
            self.total_params, self.total_flops
        )
    }
}
