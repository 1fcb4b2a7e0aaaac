//! Plugin registries for layer builders and inter-layer transition adapters.
//!
//! A [`Registry`] is populated once (usually from [`Registry::builtin`] plus
//! any custom registrations) and then shared read-only, typically behind an
//! `Arc`. Any op registered here can be named in a search-space file.

mod builtin;

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::shape::{TensorKind, TensorShape};
use crate::value::{Params, Scalar, ScalarKind};

pub use builtin::{Conv1d, Flatten, Identity, Linear, MaxPool, Relu};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RegistryError {
    #[error("operation `{0}` is already registered")]
    Duplicate(String),
    #[error("a transition {0} -> {1} is already registered")]
    DuplicateTransition(TensorKind, TensorKind),
    #[error("no transition registered for {from} -> {to}")]
    NoTransition { from: TensorKind, to: TensorKind },
}

/// A layer's geometry cannot be realized for its input.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{op}: {message}")]
pub struct ShapeError {
    pub op: String,
    pub message: String,
}

impl ShapeError {
    pub fn new(op: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            op: op.into(),
            message: message.into(),
        }
    }
}

/// How an op parameter that the search space does not mention is filled in.
#[derive(Clone, Debug, PartialEq)]
pub enum ParamDefault {
    /// Must come from the block or from `default_op_params`.
    Required,
    Value(Scalar),
    /// Computed by the builder from the other parameters.
    Derived,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ScalarKind,
    pub default: ParamDefault,
}

impl ParamSpec {
    pub fn required(name: &str, kind: ScalarKind) -> Self {
        Self {
            name: name.into(),
            kind,
            default: ParamDefault::Required,
        }
    }

    pub fn optional(name: &str, value: impl Into<Scalar>) -> Self {
        let value = value.into();
        Self {
            name: name.into(),
            kind: value.kind(),
            default: ParamDefault::Value(value),
        }
    }

    pub fn derived(name: &str, kind: ScalarKind) -> Self {
        Self {
            name: name.into(),
            kind,
            default: ParamDefault::Derived,
        }
    }

    pub fn is_mandatory(&self) -> bool {
        self.default == ParamDefault::Required
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerRole {
    /// Came from the sampled architecture.
    Sampled,
    /// Inserted by the builder to convert between tensor kinds.
    Adapter,
    /// Appended by the builder to realize the requested output shape.
    Head,
}

/// Shape of a declared parameter tensor (`weight`, `bias`, ...).
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TensorDecl {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorDecl {
    pub fn new(name: &str, shape: Vec<usize>) -> Self {
        Self {
            name: name.into(),
            shape,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// A fully resolved layer: every parameter is a scalar and both tensor
/// shapes are known.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerConfig {
    pub op: String,
    pub role: LayerRole,
    pub params: Params,
    pub tensors: Vec<TensorDecl>,
    pub input: TensorShape,
    pub output: TensorShape,
    /// Multiply-accumulates for one forward pass.
    pub macs: u64,
}

impl LayerConfig {
    pub fn new(op: &str, input: TensorShape, output: TensorShape) -> Self {
        Self {
            op: op.into(),
            role: LayerRole::Sampled,
            params: Params::new(),
            tensors: Vec::new(),
            input,
            output,
            macs: 0,
        }
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(TensorDecl::numel).sum()
    }
}

/// Construction interface every registered operation implements.
pub trait LayerBuilder: Send + Sync {
    /// Parameters in sampling order.
    fn params(&self) -> Vec<ParamSpec>;

    /// The tensor kind this op consumes; `None` accepts anything.
    fn input_kind(&self) -> Option<TensorKind> {
        None
    }

    /// Whether the op can terminate a network and realize an arbitrary
    /// output shape.
    fn head_capable(&self) -> bool {
        false
    }

    fn build_layer(&self, input: &TensorShape, params: &Params) -> Result<LayerConfig, ShapeError>;

    /// Builds the op as the final layer. The default builds normally and
    /// fails unless the result already has `output` as its shape.
    fn build_last(
        &self,
        input: &TensorShape,
        params: &Params,
        output: &TensorShape,
    ) -> Result<LayerConfig, ShapeError> {
        let layer = self.build_layer(input, params)?;
        if &layer.output != output {
            return Err(ShapeError::new(
                &layer.op,
                format!(
                    "produces {} but the network output is {}",
                    layer.output, output
                ),
            ));
        }
        Ok(layer)
    }

    fn output_shape(
        &self,
        input: &TensorShape,
        params: &Params,
    ) -> Result<TensorShape, ShapeError> {
        self.build_layer(input, params).map(|l| l.output)
    }
}

pub type AdaptFn = dyn Fn(&TensorShape) -> Result<LayerConfig, ShapeError> + Send + Sync;

/// An adapter between two tensor kinds.
#[derive(Clone)]
pub struct TransitionEntry {
    pub name: String,
    pub from: TensorKind,
    pub to: TensorKind,
    pub adapt: Arc<AdaptFn>,
}

impl TransitionEntry {
    pub fn adapt(&self, input: &TensorShape) -> Result<LayerConfig, ShapeError> {
        let mut layer = (self.adapt)(input)?;
        layer.role = LayerRole::Adapter;
        Ok(layer)
    }
}

impl fmt::Debug for TransitionEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TransitionEntry")
            .field("name", &self.name)
            .field("from", &self.from)
            .field("to", &self.to)
            .finish()
    }
}

#[derive(Debug, Clone)]
pub enum Transition<'a> {
    Identity,
    Adapter(&'a TransitionEntry),
}

#[derive(Clone, Default)]
pub struct Registry {
    layers: IndexMap<String, Arc<dyn LayerBuilder>>,
    transitions: HashMap<(TensorKind, TensorKind), TransitionEntry>,
}

impl Registry {
    /// An empty registry with no ops and no transitions.
    pub fn empty() -> Self {
        Self::default()
    }

    /// The built-in op set (`linear`, `conv1d`, `maxpool`, `identity`,
    /// `relu`, `flatten`) and the flatten transition from channelled
    /// sequences to flat vectors.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register_layer("linear", Arc::new(Linear)).unwrap();
        r.register_layer("conv1d", Arc::new(Conv1d)).unwrap();
        r.register_layer("maxpool", Arc::new(MaxPool)).unwrap();
        r.register_layer("identity", Arc::new(Identity)).unwrap();
        r.register_layer("relu", Arc::new(Relu)).unwrap();
        r.register_layer("flatten", Arc::new(Flatten)).unwrap();
        r.register_transition(TransitionEntry {
            name: "flatten".into(),
            from: TensorKind::ChannelledSequence,
            to: TensorKind::FlatVector,
            adapt: Arc::new(|input: &TensorShape| Flatten.build_layer(input, &Params::new())),
        })
        .unwrap();
        r
    }

    pub fn register_layer(
        &mut self,
        name: &str,
        builder: Arc<dyn LayerBuilder>,
    ) -> Result<&mut Self, RegistryError> {
        if self.layers.contains_key(name) {
            return Err(RegistryError::Duplicate(name.into()));
        }
        self.layers.insert(name.into(), builder);
        Ok(self)
    }

    pub fn register_transition(
        &mut self,
        entry: TransitionEntry,
    ) -> Result<&mut Self, RegistryError> {
        let key = (entry.from, entry.to);
        if self.transitions.contains_key(&key) {
            return Err(RegistryError::DuplicateTransition(entry.from, entry.to));
        }
        self.transitions.insert(key, entry);
        Ok(self)
    }

    pub fn layer(&self, name: &str) -> Option<&Arc<dyn LayerBuilder>> {
        self.layers.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.layers.contains_key(name)
    }

    pub fn op_names(&self) -> impl Iterator<Item = &str> {
        self.layers.keys().map(String::as_str)
    }

    pub fn resolve_transition(
        &self,
        from: TensorKind,
        to: TensorKind,
    ) -> Result<Transition<'_>, RegistryError> {
        if from == to {
            return Ok(Transition::Identity);
        }
        self.transitions
            .get(&(from, to))
            .map(Transition::Adapter)
            .ok_or(RegistryError::NoTransition { from, to })
    }
}

impl fmt::Debug for Registry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry")
            .field("layers", &self.layers.keys().collect::<Vec<_>>())
            .field(
                "transitions",
                &self.transitions.values().collect::<Vec<_>>(),
            )
            .finish()
    }
}
