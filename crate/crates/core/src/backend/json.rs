use std::collections::BTreeMap;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{Artifact, BackendError, CapabilitySet, Generator};
use crate::builder::ModelGraph;
use crate::registry::{LayerRole, Registry};
use crate::runtime::{ParamStore, Tensor};
use crate::shape::TensorShape;
use crate::value::Params;

pub const FORMAT_VERSION: u64 = 1;

/// Versioned interchange form of a [`ModelGraph`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphDocument {
    pub format_version: u64,
    pub input_shape: TensorShape,
    pub output_shape: TensorShape,
    pub layers: Vec<LayerEntry>,
    /// `weight_ref → base64(little-endian f32)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<BTreeMap<String, String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerEntry {
    pub op: String,
    pub role: LayerRole,
    pub params: Params,
    pub in_shape: TensorShape,
    pub out_shape: TensorShape,
    pub weight_refs: Vec<String>,
}

fn weight_ref(layer: usize, tensor: &str) -> String {
    format!("layers.{layer}.{tensor}")
}

pub fn export_json(graph: &ModelGraph, params: Option<&ParamStore>) -> GraphDocument {
    let layers = graph
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| LayerEntry {
            op: l.op.clone(),
            role: l.role,
            params: l.params.clone(),
            in_shape: l.input.clone(),
            out_shape: l.output.clone(),
            weight_refs: l.tensors.iter().map(|t| weight_ref(i, &t.name)).collect(),
        })
        .collect();
    let weights = params.map(|store| {
        let mut blobs = BTreeMap::new();
        for (i, tensors) in &store.layers {
            for (name, t) in tensors {
                let bytes: Vec<u8> = t.data.iter().flat_map(|v| v.to_le_bytes()).collect();
                blobs.insert(weight_ref(*i, name), STANDARD.encode(bytes));
            }
        }
        blobs
    });
    GraphDocument {
        format_version: FORMAT_VERSION,
        input_shape: graph.input.clone(),
        output_shape: graph.output.clone(),
        layers,
        weights,
    }
}

/// Rebuilds the graph through `registry` and checks it against the recorded
/// shapes. Embedded weights, if any, come back as a [`ParamStore`].
pub fn import_json(
    text: &str,
    registry: &Registry,
) -> Result<(ModelGraph, Option<ParamStore>), BackendError> {
    let raw: serde_json::Value =
        serde_json::from_str(text).map_err(|e| BackendError::Format(e.to_string()))?;
    let version = raw
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| BackendError::Format("missing format_version".into()))?;
    if version != FORMAT_VERSION {
        return Err(BackendError::Version(version));
    }
    let doc: GraphDocument =
        serde_json::from_value(raw).map_err(|e| BackendError::Format(e.to_string()))?;

    let mut layers = Vec::with_capacity(doc.layers.len());
    let mut current = doc.input_shape.clone();
    for (i, entry) in doc.layers.iter().enumerate() {
        let bad = |m: String| BackendError::Format(format!("layer {i} ({}): {m}", entry.op));
        if entry.in_shape != current {
            return Err(bad(format!(
                "input {} does not follow {}",
                entry.in_shape, current
            )));
        }
        let builder = registry
            .layer(&entry.op)
            .ok_or_else(|| bad("op is not registered".into()))?;
        let mut layer = builder
            .build_layer(&entry.in_shape, &entry.params)
            .map_err(|e| bad(e.to_string()))?;
        if layer.output != entry.out_shape {
            return Err(bad(format!(
                "rebuilds to {} instead of {}",
                layer.output, entry.out_shape
            )));
        }
        let refs: Vec<String> = layer
            .tensors
            .iter()
            .map(|t| weight_ref(i, &t.name))
            .collect();
        if refs != entry.weight_refs {
            return Err(bad(format!(
                "weight refs {:?} do not match {:?}",
                entry.weight_refs, refs
            )));
        }
        layer.role = entry.role;
        current = layer.output.clone();
        layers.push(layer);
    }
    if current != doc.output_shape {
        return Err(BackendError::Format(format!(
            "graph ends with {current}, not {}",
            doc.output_shape
        )));
    }
    let graph = ModelGraph {
        input: doc.input_shape,
        output: doc.output_shape,
        layers,
    };

    let store = match doc.weights {
        None => None,
        Some(blobs) => {
            let mut store = ParamStore::default();
            for (i, layer) in graph.layers.iter().enumerate() {
                for decl in &layer.tensors {
                    let key = weight_ref(i, &decl.name);
                    let blob = blobs
                        .get(&key)
                        .ok_or_else(|| BackendError::Format(format!("no weights for {key}")))?;
                    let bytes = STANDARD
                        .decode(blob)
                        .map_err(|e| BackendError::Format(format!("{key}: {e}")))?;
                    if bytes.len() != 4 * decl.numel() {
                        return Err(BackendError::Format(format!(
                            "{key}: expected {} values",
                            decl.numel()
                        )));
                    }
                    let data = bytes
                        .chunks_exact(4)
                        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                        .collect();
                    store.insert(i, &decl.name, Tensor::new(decl.shape.clone(), data));
                }
            }
            Some(store)
        }
    };
    Ok((graph, store))
}

/// Re-exports the graph with its weights as `model.json`.
#[derive(Clone, Debug)]
pub struct JsonGenerator {
    capabilities: CapabilitySet,
}

impl JsonGenerator {
    pub fn new(registry: &Registry) -> Self {
        let capabilities = CapabilitySet::new(registry.op_names()).expect("registry has ops");
        Self { capabilities }
    }

    pub fn without(mut self, op: &str) -> Result<Self, BackendError> {
        self.capabilities = self.capabilities.without(op)?;
        Ok(self)
    }
}

impl Generator for JsonGenerator {
    fn name(&self) -> &str {
        "json"
    }

    fn reflect(&self) -> CapabilitySet {
        self.capabilities.clone()
    }

    fn generate(&self, graph: &ModelGraph, params: &ParamStore) -> Result<Artifact, BackendError> {
        self.check_graph(graph)?;
        let doc = export_json(graph, Some(params));
        let text =
            serde_json::to_string_pretty(&doc).map_err(|e| BackendError::Format(e.to_string()))?;
        Ok(Artifact {
            files: vec![("model.json".into(), text + "\n")],
        })
    }
}
