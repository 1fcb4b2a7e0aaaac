//! The YAML search-space language: parsing, validation, canonical
//! serialization, exact cardinality and exhaustive enumeration.
//!
//! ```yaml
//! input: [4, 1250]
//! output: 6
//! sequence:
//!   - block: "features"
//!     op_candidates: "conv-block"
//!     type_repeat:
//!       type: "vary_all"
//!       depth: [1, 2, 3]
//!   - block: "head"
//!     op_candidates: "linear"
//!     linear:
//!       width: [32, 64, 128]
//! default_op_params:
//!   conv1d:
//!     kernel_size: [3, 5]
//!     out_channels: [8, 16]
//! composites:
//!   conv-block:
//!     sequence:
//!       - block: "conv"
//!         op_candidates: "conv1d"
//!       - block: "pool"
//!         op_candidates: ["maxpool", "identity"]
//! ```

mod canonical;
mod count;
mod enumerate;
mod parse;

use std::fmt;

use indexmap::IndexMap;
use num_bigint::BigUint;

use crate::preproc::PreprocSpaceSpec;
use crate::shape::TensorShape;
use crate::value::{ParamDomain, Scalar};

pub use canonical::to_yaml;
pub use count::count_configurations;
pub use enumerate::enumerate_space;
pub use parse::{parse_spec, parse_spec_with};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DslError {
    #[error("syntax error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Syntax {
        message: String,
        line: Option<usize>,
    },
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("reference error at {path}: {message}")]
    Reference { path: String, message: String },
    #[error("parameter error at {path}: {message}")]
    Param { path: String, message: String },
    #[error("unbounded domain at {0}")]
    Unbounded(String),
    #[error("search space has {count} configurations, more than the limit {limit}")]
    Limit { count: BigUint, limit: u64 },
    #[error("no supported candidate left at {path}: {message}")]
    Capability { path: String, message: String },
}

impl DslError {
    pub(crate) fn schema(path: impl fmt::Display, message: impl Into<String>) -> Self {
        DslError::Schema {
            path: path.to_string(),
            message: message.into(),
        }
    }

    pub(crate) fn reference(path: impl fmt::Display, message: impl Into<String>) -> Self {
        DslError::Reference {
            path: path.to_string(),
            message: message.into(),
        }
    }

    pub(crate) fn param(path: impl fmt::Display, message: impl Into<String>) -> Self {
        DslError::Param {
            path: path.to_string(),
            message: message.into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RepeatMode {
    RepeatOp,
    RepeatParams,
    VaryAll,
    RepeatBlock,
}

impl RepeatMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RepeatMode::RepeatOp => "repeat_op",
            RepeatMode::RepeatParams => "repeat_params",
            RepeatMode::VaryAll => "vary_all",
            RepeatMode::RepeatBlock => "repeat_block",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "repeat_op" => RepeatMode::RepeatOp,
            "repeat_params" => RepeatMode::RepeatParams,
            "vary_all" => RepeatMode::VaryAll,
            "repeat_block" => RepeatMode::RepeatBlock,
            _ => return None,
        })
    }
}

/// `type_repeat` of a block. The depth-carrying modes always have a depth
/// and `RepeatBlock` never does.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Repeat {
    /// One op for the whole block; parameters sampled per layer.
    RepeatOp { depth: ParamDomain },
    /// Op and parameters sampled once, replicated `depth` times.
    RepeatParams { depth: ParamDomain },
    /// Op and parameters sampled independently for every layer.
    VaryAll { depth: ParamDomain },
    /// Re-instantiate an earlier block's definition with fresh samples.
    RepeatBlock { ref_block: String },
}

impl Repeat {
    pub fn mode(&self) -> RepeatMode {
        match self {
            Repeat::RepeatOp { .. } => RepeatMode::RepeatOp,
            Repeat::RepeatParams { .. } => RepeatMode::RepeatParams,
            Repeat::VaryAll { .. } => RepeatMode::VaryAll,
            Repeat::RepeatBlock { .. } => RepeatMode::RepeatBlock,
        }
    }

    pub fn depth(&self) -> Option<&ParamDomain> {
        match self {
            Repeat::RepeatOp { depth }
            | Repeat::RepeatParams { depth }
            | Repeat::VaryAll { depth } => Some(depth),
            Repeat::RepeatBlock { .. } => None,
        }
    }
}

/// A parameter of a candidate op together with the domain it resolved to
/// (block-local, `default_op_params`, or the op's own default).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ResolvedParam {
    pub name: String,
    pub domain: ParamDomain,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum CandidateKind {
    Layer { params: Vec<ResolvedParam> },
    Composite,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Candidate {
    pub name: String,
    pub kind: CandidateKind,
}

impl Candidate {
    pub fn is_composite(&self) -> bool {
        self.kind == CandidateKind::Composite
    }
}

pub type OpParamMap = IndexMap<String, IndexMap<String, ParamDomain>>;

#[derive(Clone, Debug, PartialEq)]
pub struct BlockSpec {
    pub name: String,
    pub candidates: Vec<Candidate>,
    pub repeat: Option<Repeat>,
    /// Per-op parameter sections exactly as written in the block.
    pub local_params: OpParamMap,
}

impl BlockSpec {
    pub fn op_candidates(&self) -> impl Iterator<Item = &str> {
        self.candidates.iter().map(|c| c.name.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompositeSpec {
    pub sequence: Vec<BlockSpec>,
}

/// Validated in-memory form of a search-space file. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchSpaceSpec {
    pub input_shape: TensorShape,
    pub output_shape: TensorShape,
    pub sequence: Vec<BlockSpec>,
    pub default_op_params: OpParamMap,
    pub composites: IndexMap<String, CompositeSpec>,
    pub preprocessing: Option<PreprocSpaceSpec>,
}

impl SearchSpaceSpec {
    pub fn composite(&self, name: &str) -> Option<&CompositeSpec> {
        self.composites.get(name)
    }

    /// Every primitive op name that can appear in a sampled architecture.
    pub fn reachable_ops(&self) -> Vec<String> {
        let mut ops = Vec::new();
        let blocks = self
            .sequence
            .iter()
            .chain(self.composites.values().flat_map(|c| &c.sequence));
        for b in blocks {
            for c in &b.candidates {
                if !c.is_composite() && !ops.contains(&c.name) {
                    ops.push(c.name.clone());
                }
            }
        }
        ops
    }

    /// Narrows the space to what `allow_op` and `allow_value` accept.
    ///
    /// Disallowed ops are dropped from every candidate list, disallowed
    /// values from every choice list. A composite left with an empty block
    /// disappears from the candidate lists that name it. Fails when a block
    /// of the top-level sequence is left without candidates.
    pub fn restrict(
        &self,
        allow_op: &dyn Fn(&str) -> bool,
        allow_value: &dyn Fn(&str, &str, &Scalar) -> bool,
    ) -> Result<SearchSpaceSpec, DslError> {
        let mut out = self.clone();
        // Composites may nest; iterate until no more composites disappear.
        let mut dead: Vec<String> = Vec::new();
        loop {
            let mut changed = false;
            for (name, comp) in &self.composites {
                if dead.contains(name) {
                    continue;
                }
                let ok = comp
                    .sequence
                    .iter()
                    .all(|b| restrict_block(b, allow_op, allow_value, &dead).is_some());
                if !ok {
                    dead.push(name.clone());
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        for (name, comp) in out.composites.iter_mut() {
            if dead.contains(name) {
                continue;
            }
            for b in comp.sequence.iter_mut() {
                *b = restrict_block(b, allow_op, allow_value, &dead).expect("checked above");
            }
        }
        out.composites.retain(|name, _| !dead.contains(name));
        for (i, b) in self.sequence.iter().enumerate() {
            out.sequence[i] = restrict_block(b, allow_op, allow_value, &dead).ok_or_else(|| {
                DslError::Capability {
                    path: format!("sequence[{i}] ({})", b.name),
                    message: "every op candidate is unsupported by the bound backend".into(),
                }
            })?;
        }
        Ok(out)
    }
}

fn restrict_block(
    block: &BlockSpec,
    allow_op: &dyn Fn(&str) -> bool,
    allow_value: &dyn Fn(&str, &str, &Scalar) -> bool,
    dead_composites: &[String],
) -> Option<BlockSpec> {
    if matches!(block.repeat, Some(Repeat::RepeatBlock { .. })) {
        return Some(block.clone());
    }
    let mut out = block.clone();
    out.candidates.clear();
    for cand in &block.candidates {
        match &cand.kind {
            CandidateKind::Composite => {
                if !dead_composites.contains(&cand.name) {
                    out.candidates.push(cand.clone());
                }
            }
            CandidateKind::Layer { params } => {
                if !allow_op(&cand.name) {
                    continue;
                }
                let mut kept = Vec::with_capacity(params.len());
                for p in params {
                    let values: Vec<Scalar> = p
                        .domain
                        .values()
                        .iter()
                        .filter(|v| allow_value(&cand.name, &p.name, v))
                        .cloned()
                        .collect();
                    if values.is_empty() {
                        break;
                    }
                    let domain = match &p.domain {
                        ParamDomain::Fixed(_) => ParamDomain::Fixed(values[0].clone()),
                        ParamDomain::Choice(_) => ParamDomain::Choice(values),
                    };
                    kept.push(ResolvedParam {
                        name: p.name.clone(),
                        domain,
                    });
                }
                if kept.len() == params.len() {
                    out.candidates.push(Candidate {
                        name: cand.name.clone(),
                        kind: CandidateKind::Layer { params: kept },
                    });
                }
            }
        }
    }
    if out.candidates.is_empty() {
        return None;
    }
    out.local_params
        .retain(|op, _| out.candidates.iter().any(|c| &c.name == op));
    Some(out)
}
