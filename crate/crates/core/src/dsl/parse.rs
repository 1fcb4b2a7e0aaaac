use std::collections::{HashMap, HashSet};

use indexmap::IndexMap;
use serde_yaml::{Mapping, Value};

use crate::dsl::{
    BlockSpec, Candidate, CandidateKind, CompositeSpec, DslError, OpParamMap, Repeat, RepeatMode,
    ResolvedParam, SearchSpaceSpec,
};
use crate::preproc::{self, PreprocSpaceSpec};
use crate::registry::{ParamDefault, ParamSpec, Registry};
use crate::shape::TensorShape;
use crate::value::{ParamDomain, Scalar};

const TOP_KEYS: &[&str] = &[
    "input",
    "output",
    "sequence",
    "default_op_params",
    "composites",
    "preprocessing",
];
const REPEAT_KEYS: &[&str] = &["type", "depth", "ref_block"];
const RESERVED_BLOCK_NAME: &str = "preprocessing";

/// Parses and validates a search space against the built-in op registry.
pub fn parse_spec(yaml_text: &str) -> Result<SearchSpaceSpec, DslError> {
    parse_spec_with(yaml_text, &Registry::builtin())
}

/// Parses and validates a search space against `registry`.
pub fn parse_spec_with(yaml_text: &str, registry: &Registry) -> Result<SearchSpaceSpec, DslError> {
    let root: Value = serde_yaml::from_str(yaml_text).map_err(|e| DslError::Syntax {
        line: e.location().map(|l| l.line()),
        message: e.to_string(),
    })?;
    let top = as_mapping(&root, "<root>")?;
    for key in top.keys() {
        let k = key_str(key, "<root>")?;
        if !TOP_KEYS.contains(&k) {
            return Err(DslError::schema(k, "unknown top-level key"));
        }
    }

    let input_shape = parse_input(required(top, "input", "<root>")?)?;
    let output_shape = parse_output(required(top, "output", "<root>")?)?;

    let default_op_params = match top.get("default_op_params") {
        None | Some(Value::Null) => OpParamMap::new(),
        Some(v) => parse_op_param_map(v, "default_op_params")?,
    };

    let mut composites_raw: IndexMap<String, Vec<RawBlock>> = IndexMap::new();
    if let Some(v) = top.get("composites").filter(|v| !v.is_null()) {
        for (name, body) in as_mapping(v, "composites")? {
            let name = key_str(name, "composites")?.to_string();
            let path = format!("composites.{name}");
            validate_name(&name, &path)?;
            if registry.contains(&name) {
                return Err(DslError::schema(
                    &path,
                    "composite name shadows a registered op",
                ));
            }
            let body = as_mapping(body, &path)?;
            for key in body.keys() {
                if key_str(key, &path)? != "sequence" {
                    return Err(DslError::schema(
                        &path,
                        "composites only contain `sequence`",
                    ));
                }
            }
            let seq = parse_sequence(
                required(body, "sequence", &path)?,
                &format!("{path}.sequence"),
            )?;
            composites_raw.insert(name, seq);
        }
    }

    let sequence_raw = parse_sequence(required(top, "sequence", "<root>")?, "sequence")?;

    let preproc_raw = match top.get("preprocessing") {
        None | Some(Value::Null) => None,
        Some(v) => Some(parse_sequence(v, "preprocessing")?),
    };

    // block names are unique across the top-level sequence and all composites
    let mut seen = HashSet::new();
    let all_blocks = sequence_raw
        .iter()
        .map(|b| (b, "sequence".to_string()))
        .chain(
            composites_raw
                .iter()
                .flat_map(|(n, s)| s.iter().map(move |b| (b, format!("composites.{n}")))),
        );
    for (b, path) in all_blocks {
        if !seen.insert(b.name.clone()) {
            return Err(DslError::schema(
                path,
                format!("duplicate block name `{}`", b.name),
            ));
        }
        if b.name == RESERVED_BLOCK_NAME {
            return Err(DslError::schema(
                path,
                "`preprocessing` is reserved and cannot name a block",
            ));
        }
    }

    for (op, section) in &default_op_params {
        let path = format!("default_op_params.{op}");
        let specs = op_param_specs(op, registry).ok_or_else(|| {
            DslError::reference(&path, format!("`{op}` is not a registered operation"))
        })?;
        for pname in section.keys() {
            if !specs.iter().any(|s| &s.name == pname) {
                return Err(DslError::schema(
                    format!("{path}.{pname}"),
                    format!("`{op}` has no parameter `{pname}`"),
                ));
            }
        }
    }

    let resolver = Resolver {
        registry,
        defaults: &default_op_params,
        composite_names: composites_raw.keys().cloned().collect(),
    };

    let mut composites = IndexMap::new();
    for (name, seq) in &composites_raw {
        let path = format!("composites.{name}.sequence");
        composites.insert(
            name.clone(),
            CompositeSpec {
                sequence: resolver.sequence(seq, &path)?,
            },
        );
    }
    check_composite_cycles(&composites)?;
    let sequence = resolver.sequence(&sequence_raw, "sequence")?;
    if sequence.is_empty() {
        return Err(DslError::schema(
            "sequence",
            "must contain at least one block",
        ));
    }

    let preprocessing = match preproc_raw {
        None => None,
        Some(stages) => Some(resolver.preprocessing(&stages)?),
    };

    Ok(SearchSpaceSpec {
        input_shape,
        output_shape,
        sequence,
        default_op_params,
        composites,
        preprocessing,
    })
}

struct RawBlock {
    name: String,
    path: String,
    candidates: Vec<String>,
    repeat: Option<Repeat>,
    local_params: OpParamMap,
}

fn parse_sequence(v: &Value, path: &str) -> Result<Vec<RawBlock>, DslError> {
    let Value::Sequence(items) = v else {
        return Err(DslError::schema(path, "expected a list of blocks"));
    };
    items
        .iter()
        .enumerate()
        .map(|(i, item)| parse_block(item, &format!("{path}[{i}]")))
        .collect()
}

fn parse_block(v: &Value, path: &str) -> Result<RawBlock, DslError> {
    let map = as_mapping(v, path)?;
    let name = match required(map, "block", path)? {
        Value::String(s) => s.clone(),
        _ => {
            return Err(DslError::schema(
                format!("{path}.block"),
                "expected a string",
            ))
        }
    };
    validate_name(&name, path)?;
    let path = format!("{path} ({name})");

    let repeat = match map.get("type_repeat") {
        None | Some(Value::Null) => None,
        Some(v) => Some(parse_repeat(v, &format!("{path}.type_repeat"))?),
    };

    let is_repeat_block = matches!(repeat, Some(Repeat::RepeatBlock { .. }));
    let candidates = match map.get("op_candidates") {
        None if is_repeat_block => Vec::new(),
        Some(_) if is_repeat_block => {
            return Err(DslError::schema(
                format!("{path}.op_candidates"),
                "a repeat_block block takes its candidates from ref_block",
            ))
        }
        None => {
            return Err(DslError::schema(
                &path,
                "missing required key `op_candidates`",
            ))
        }
        Some(v) => match v {
            Value::String(s) => vec![s.clone()],
            Value::Sequence(items) => {
                let mut out = Vec::with_capacity(items.len());
                for item in items {
                    let Value::String(s) = item else {
                        return Err(DslError::schema(
                            format!("{path}.op_candidates"),
                            "expected op names",
                        ));
                    };
                    if out.contains(s) {
                        return Err(DslError::schema(
                            format!("{path}.op_candidates"),
                            format!("duplicate candidate `{s}`"),
                        ));
                    }
                    out.push(s.clone());
                }
                out
            }
            _ => {
                return Err(DslError::schema(
                    format!("{path}.op_candidates"),
                    "expected an op name or a list of op names",
                ))
            }
        },
    };
    if candidates.is_empty() && !is_repeat_block {
        return Err(DslError::schema(
            format!("{path}.op_candidates"),
            "must not be empty",
        ));
    }

    let mut local_params = OpParamMap::new();
    for (key, value) in map {
        let k = key_str(key, &path)?;
        if matches!(k, "block" | "op_candidates" | "type_repeat") {
            continue;
        }
        if !candidates.iter().any(|c| c == k) {
            return Err(DslError::schema(
                format!("{path}.{k}"),
                "unknown key (parameter sections must name one of the block's op_candidates)",
            ));
        }
        local_params.insert(
            k.to_string(),
            parse_param_section(value, &format!("{path}.{k}"))?,
        );
    }

    Ok(RawBlock {
        name,
        path,
        candidates,
        repeat,
        local_params,
    })
}

fn parse_repeat(v: &Value, path: &str) -> Result<Repeat, DslError> {
    let map = as_mapping(v, path)?;
    for key in map.keys() {
        let k = key_str(key, path)?;
        if !REPEAT_KEYS.contains(&k) {
            return Err(DslError::schema(format!("{path}.{k}"), "unknown key"));
        }
    }
    let mode = match required(map, "type", path)? {
        Value::String(s) => RepeatMode::parse(s).ok_or_else(|| {
            DslError::schema(
                format!("{path}.type"),
                format!(
                    "unknown repeat mode `{s}` (repeat_op, repeat_params, vary_all, repeat_block)"
                ),
            )
        })?,
        _ => {
            return Err(DslError::schema(
                format!("{path}.type"),
                "expected a string",
            ))
        }
    };
    let depth = map.get("depth").filter(|v| !v.is_null());
    let ref_block = map.get("ref_block").filter(|v| !v.is_null());

    if mode == RepeatMode::RepeatBlock {
        if depth.is_some() {
            return Err(DslError::schema(path, "repeat_block does not take a depth"));
        }
        let Some(Value::String(target)) = ref_block else {
            return Err(DslError::schema(
                path,
                "repeat_block requires ref_block naming an earlier block",
            ));
        };
        return Ok(Repeat::RepeatBlock {
            ref_block: target.clone(),
        });
    }
    if ref_block.is_some() {
        return Err(DslError::schema(
            path,
            format!(
                "ref_block is only valid for repeat_block, not {}",
                mode.as_str()
            ),
        ));
    }
    let Some(depth) = depth else {
        return Err(DslError::schema(
            path,
            format!("depth must be set for {}", mode.as_str()),
        ));
    };
    let depth = parse_domain(depth, &format!("{path}.depth"))?;
    for d in depth.values() {
        match d.as_int() {
            Some(n) if n >= 1 => {}
            _ => {
                return Err(DslError::schema(
                    format!("{path}.depth"),
                    format!("depth values must be integers >= 1, got {d}"),
                ))
            }
        }
    }
    Ok(match mode {
        RepeatMode::RepeatOp => Repeat::RepeatOp { depth },
        RepeatMode::RepeatParams => Repeat::RepeatParams { depth },
        RepeatMode::VaryAll => Repeat::VaryAll { depth },
        RepeatMode::RepeatBlock => unreachable!(),
    })
}

fn parse_op_param_map(v: &Value, path: &str) -> Result<OpParamMap, DslError> {
    let mut out = OpParamMap::new();
    for (op, section) in as_mapping(v, path)? {
        let op = key_str(op, path)?;
        out.insert(
            op.to_string(),
            parse_param_section(section, &format!("{path}.{op}"))?,
        );
    }
    Ok(out)
}

fn parse_param_section(v: &Value, path: &str) -> Result<IndexMap<String, ParamDomain>, DslError> {
    let mut out = IndexMap::new();
    if v.is_null() {
        return Ok(out);
    }
    for (name, dom) in as_mapping(v, path)? {
        let name = key_str(name, path)?;
        out.insert(
            name.to_string(),
            parse_domain(dom, &format!("{path}.{name}"))?,
        );
    }
    Ok(out)
}

fn parse_domain(v: &Value, path: &str) -> Result<ParamDomain, DslError> {
    match v {
        Value::Sequence(items) => {
            if items.is_empty() {
                return Err(DslError::schema(path, "choice list must not be empty"));
            }
            let values = items
                .iter()
                .map(|i| parse_scalar(i, path))
                .collect::<Result<Vec<_>, _>>()?;
            let kind = values[0].kind();
            if values.iter().any(|s| s.kind() != kind) {
                return Err(DslError::schema(
                    path,
                    "all choices must share one scalar kind",
                ));
            }
            check_unique(&values, path)?;
            Ok(ParamDomain::Choice(values))
        }
        other => Ok(ParamDomain::Fixed(parse_scalar(other, path)?)),
    }
}

fn parse_scalar(v: &Value, path: &str) -> Result<Scalar, DslError> {
    match v {
        Value::Bool(b) => Ok(Scalar::Bool(*b)),
        Value::String(s) => Ok(Scalar::Str(s.clone())),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                Ok(Scalar::Int(i))
            } else if n.is_u64() {
                Err(DslError::schema(path, "integer out of range"))
            } else {
                match n.as_f64() {
                    Some(f) if f.is_finite() => Ok(Scalar::Float(f)),
                    _ => Err(DslError::Unbounded(path.to_string())),
                }
            }
        }
        _ => Err(DslError::schema(
            path,
            "expected a scalar value or a list of scalars",
        )),
    }
}

fn check_unique(values: &[Scalar], path: &str) -> Result<(), DslError> {
    let mut seen = HashSet::new();
    for v in values {
        if !seen.insert(v) {
            return Err(DslError::schema(path, format!("duplicate choice {v}")));
        }
    }
    Ok(())
}

fn parse_input(v: &Value) -> Result<TensorShape, DslError> {
    let Value::Sequence(items) = v else {
        return Err(DslError::schema(
            "input",
            "expected a list of positive integers",
        ));
    };
    let dims = items
        .iter()
        .map(|i| match i.as_u64() {
            Some(d) if d >= 1 => Ok(d as usize),
            _ => Err(DslError::schema(
                "input",
                "extents must be positive integers",
            )),
        })
        .collect::<Result<Vec<_>, _>>()?;
    TensorShape::new(dims).map_err(|e| DslError::schema("input", e.to_string()))
}

fn parse_output(v: &Value) -> Result<TensorShape, DslError> {
    match v {
        Value::Number(n) => match n.as_u64() {
            Some(d) if d >= 1 => {
                TensorShape::flat(d as usize).map_err(|e| DslError::schema("output", e.to_string()))
            }
            _ => Err(DslError::schema("output", "must be a positive integer")),
        },
        Value::Sequence(_) => parse_input(v).map_err(|e| match e {
            DslError::Schema { message, .. } => DslError::schema("output", message),
            other => other,
        }),
        _ => Err(DslError::schema(
            "output",
            "expected an integer or a shape list",
        )),
    }
}

fn validate_name(name: &str, path: &str) -> Result<(), DslError> {
    if name.is_empty() || name.contains('.') || name.chars().any(char::is_whitespace) {
        return Err(DslError::schema(
            path,
            format!("invalid name `{name}` (must be non-empty, without dots or whitespace)"),
        ));
    }
    Ok(())
}

fn as_mapping<'a>(v: &'a Value, path: &str) -> Result<&'a Mapping, DslError> {
    v.as_mapping()
        .ok_or_else(|| DslError::schema(path, "expected a mapping"))
}

fn key_str<'a>(k: &'a Value, path: &str) -> Result<&'a str, DslError> {
    k.as_str()
        .ok_or_else(|| DslError::schema(path, "mapping keys must be strings"))
}

fn required<'a>(map: &'a Mapping, key: &str, path: &str) -> Result<&'a Value, DslError> {
    map.get(key)
        .ok_or_else(|| DslError::schema(path, format!("missing required key `{key}`")))
}

fn op_param_specs(op: &str, registry: &Registry) -> Option<Vec<ParamSpec>> {
    registry
        .layer(op)
        .map(|b| b.params())
        .or_else(|| preproc::op_params(op))
}

struct Resolver<'a> {
    registry: &'a Registry,
    defaults: &'a OpParamMap,
    composite_names: Vec<String>,
}

impl Resolver<'_> {
    fn sequence(&self, blocks: &[RawBlock], path: &str) -> Result<Vec<BlockSpec>, DslError> {
        let mut out: Vec<BlockSpec> = Vec::with_capacity(blocks.len());
        for raw in blocks {
            if let Some(Repeat::RepeatBlock { ref_block }) = &raw.repeat {
                if !out.iter().any(|b| &b.name == ref_block) {
                    return Err(DslError::reference(
                        &raw.path,
                        format!("ref_block `{ref_block}` does not name an earlier block in {path}"),
                    ));
                }
            }
            let mut candidates = Vec::with_capacity(raw.candidates.len());
            for name in &raw.candidates {
                let kind = if self.composite_names.contains(name) {
                    if raw.local_params.contains_key(name) {
                        return Err(DslError::schema(
                            format!("{}.{name}", raw.path),
                            "composites take no parameters",
                        ));
                    }
                    CandidateKind::Composite
                } else if let Some(builder) = self.registry.layer(name) {
                    CandidateKind::Layer {
                        params: self.resolve_params(name, &builder.params(), raw)?,
                    }
                } else {
                    return Err(DslError::reference(
                        format!("{}.op_candidates", raw.path),
                        format!(
                            "`{name}` is neither a registered operation nor a declared composite"
                        ),
                    ));
                };
                candidates.push(Candidate {
                    name: name.clone(),
                    kind,
                });
            }
            out.push(BlockSpec {
                name: raw.name.clone(),
                candidates,
                repeat: raw.repeat.clone(),
                local_params: raw.local_params.clone(),
            });
        }
        Ok(out)
    }

    fn preprocessing(&self, stages: &[RawBlock]) -> Result<PreprocSpaceSpec, DslError> {
        let mut names = HashSet::new();
        let mut windowing_stage: Option<&str> = None;
        let mut out = Vec::with_capacity(stages.len());
        for raw in stages {
            if !names.insert(raw.name.as_str()) {
                return Err(DslError::schema(&raw.path, "duplicate stage name"));
            }
            if raw.repeat.is_some() {
                return Err(DslError::schema(
                    &raw.path,
                    "pre-processing stages cannot repeat",
                ));
            }
            let mut candidates = Vec::with_capacity(raw.candidates.len());
            for name in &raw.candidates {
                let Some(specs) = preproc::op_params(name) else {
                    return Err(DslError::reference(
                        format!("{}.op_candidates", raw.path),
                        format!("`{name}` is not a pre-processing operation"),
                    ));
                };
                if preproc::is_window_op(name) {
                    match windowing_stage {
                        Some(other) if other != raw.name => {
                            return Err(DslError::schema(
                                &raw.path,
                                format!("windowing already appears in stage `{other}`"),
                            ))
                        }
                        _ => windowing_stage = Some(&raw.name),
                    }
                }
                candidates.push(Candidate {
                    name: name.clone(),
                    kind: CandidateKind::Layer {
                        params: self.resolve_params(name, &specs, raw)?,
                    },
                });
            }
            let block = BlockSpec {
                name: raw.name.clone(),
                candidates,
                repeat: None,
                local_params: raw.local_params.clone(),
            };
            preproc::validate_stage(&block).map_err(|m| DslError::schema(&raw.path, m))?;
            out.push(block);
        }
        Ok(PreprocSpaceSpec { stages: out })
    }

    fn resolve_params(
        &self,
        op: &str,
        specs: &[ParamSpec],
        raw: &RawBlock,
    ) -> Result<Vec<ResolvedParam>, DslError> {
        let local = raw.local_params.get(op);
        if let Some(section) = local {
            for pname in section.keys() {
                if !specs.iter().any(|s| &s.name == pname) {
                    return Err(DslError::schema(
                        format!("{}.{op}.{pname}", raw.path),
                        format!("`{op}` has no parameter `{pname}`"),
                    ));
                }
            }
        }
        let global = self.defaults.get(op);
        let mut out = Vec::with_capacity(specs.len());
        for spec in specs {
            let written = local
                .and_then(|s| {
                    s.get(&spec.name)
                        .map(|d| (d, format!("{}.{op}.{}", raw.path, spec.name)))
                })
                .or_else(|| {
                    global.and_then(|s| {
                        s.get(&spec.name)
                            .map(|d| (d, format!("default_op_params.{op}.{}", spec.name)))
                    })
                });
            let domain = match (written, &spec.default) {
                (Some((dom, path)), _) => coerce_domain(dom, spec, &path)?,
                (None, ParamDefault::Value(v)) => ParamDomain::Fixed(v.clone()),
                (None, ParamDefault::Derived) => continue,
                (None, ParamDefault::Required) => {
                    return Err(DslError::param(
                        &raw.path,
                        format!(
                            "mandatory parameter `{}` of `{op}` is defined neither in the block nor in default_op_params",
                            spec.name
                        ),
                    ))
                }
            };
            out.push(ResolvedParam {
                name: spec.name.clone(),
                domain,
            });
        }
        Ok(out)
    }
}

fn coerce_domain(dom: &ParamDomain, spec: &ParamSpec, path: &str) -> Result<ParamDomain, DslError> {
    let coerce = |s: &Scalar| {
        s.clone().coerce(spec.kind).ok_or_else(|| {
            DslError::schema(
                path,
                format!("expected {} values, got {}", spec.kind, s.kind()),
            )
        })
    };
    Ok(match dom {
        ParamDomain::Fixed(v) => ParamDomain::Fixed(coerce(v)?),
        ParamDomain::Choice(vs) => {
            let values = vs.iter().map(coerce).collect::<Result<Vec<_>, _>>()?;
            check_unique(&values, path)?;
            ParamDomain::Choice(values)
        }
    })
}

fn check_composite_cycles(composites: &IndexMap<String, CompositeSpec>) -> Result<(), DslError> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Visiting,
        Done,
    }
    fn visit(
        name: &str,
        composites: &IndexMap<String, CompositeSpec>,
        marks: &mut HashMap<String, Mark>,
        stack: &mut Vec<String>,
    ) -> Result<(), DslError> {
        match marks.get(name) {
            Some(Mark::Done) => return Ok(()),
            Some(Mark::Visiting) => {
                stack.push(name.to_string());
                return Err(DslError::reference(
                    format!("composites.{name}"),
                    format!("cyclic composite reference: {}", stack.join(" -> ")),
                ));
            }
            None => {}
        }
        marks.insert(name.to_string(), Mark::Visiting);
        stack.push(name.to_string());
        for block in &composites[name].sequence {
            for cand in &block.candidates {
                if cand.is_composite() {
                    visit(&cand.name, composites, marks, stack)?;
                }
            }
        }
        stack.pop();
        marks.insert(name.to_string(), Mark::Done);
        Ok(())
    }
    let mut marks = HashMap::new();
    for name in composites.keys() {
        visit(name, composites, &mut marks, &mut Vec::new())?;
    }
    Ok(())
}
