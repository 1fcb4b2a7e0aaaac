use indexmap::IndexMap;
use serde_yaml::{Mapping, Value};

use crate::dsl::{BlockSpec, OpParamMap, Repeat, SearchSpaceSpec};
use crate::value::{ParamDomain, Scalar};

/// Canonical YAML for `spec`: op candidates always as lists, `output` as a
/// shape list, sections in a fixed order. Re-parsing the result yields an
/// identical spec.
pub fn to_yaml(spec: &SearchSpaceSpec) -> String {
    let mut top = Mapping::new();
    top.insert("input".into(), shape(spec.input_shape.dims()));
    top.insert("output".into(), shape(spec.output_shape.dims()));
    top.insert("sequence".into(), sequence(&spec.sequence));
    if !spec.default_op_params.is_empty() {
        top.insert(
            "default_op_params".into(),
            op_params(&spec.default_op_params),
        );
    }
    if !spec.composites.is_empty() {
        let mut comps = Mapping::new();
        for (name, c) in &spec.composites {
            let mut body = Mapping::new();
            body.insert("sequence".into(), sequence(&c.sequence));
            comps.insert(name.as_str().into(), Value::Mapping(body));
        }
        top.insert("composites".into(), Value::Mapping(comps));
    }
    if let Some(pre) = &spec.preprocessing {
        top.insert("preprocessing".into(), sequence(&pre.stages));
    }
    serde_yaml::to_string(&Value::Mapping(top)).expect("a YAML value always serializes")
}

fn shape(dims: &[usize]) -> Value {
    Value::Sequence(dims.iter().map(|&d| Value::from(d as u64)).collect())
}

fn sequence(blocks: &[BlockSpec]) -> Value {
    Value::Sequence(blocks.iter().map(block).collect())
}

fn block(b: &BlockSpec) -> Value {
    let mut m = Mapping::new();
    m.insert("block".into(), b.name.as_str().into());
    if !b.candidates.is_empty() {
        m.insert(
            "op_candidates".into(),
            Value::Sequence(b.op_candidates().map(Value::from).collect()),
        );
    }
    if let Some(r) = &b.repeat {
        let mut rep = Mapping::new();
        rep.insert("type".into(), r.mode().as_str().into());
        match r {
            Repeat::RepeatBlock { ref_block } => {
                rep.insert("ref_block".into(), ref_block.as_str().into());
            }
            other => {
                rep.insert(
                    "depth".into(),
                    domain(other.depth().expect("depth-carrying mode")),
                );
            }
        }
        m.insert("type_repeat".into(), Value::Mapping(rep));
    }
    for (op, section) in &b.local_params {
        m.insert(op.as_str().into(), param_section(section));
    }
    Value::Mapping(m)
}

fn op_params(map: &OpParamMap) -> Value {
    let mut m = Mapping::new();
    for (op, section) in map {
        m.insert(op.as_str().into(), param_section(section));
    }
    Value::Mapping(m)
}

fn param_section(section: &IndexMap<String, ParamDomain>) -> Value {
    let mut m = Mapping::new();
    for (name, d) in section {
        m.insert(name.as_str().into(), domain(d));
    }
    Value::Mapping(m)
}

fn domain(d: &ParamDomain) -> Value {
    match d {
        ParamDomain::Fixed(v) => scalar(v),
        ParamDomain::Choice(vs) => Value::Sequence(vs.iter().map(scalar).collect()),
    }
}

fn scalar(s: &Scalar) -> Value {
    match s {
        Scalar::Bool(b) => Value::Bool(*b),
        Scalar::Int(i) => Value::from(*i),
        Scalar::Float(f) => Value::from(*f),
        Scalar::Str(s) => Value::String(s.clone()),
    }
}
