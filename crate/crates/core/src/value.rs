//! Scalar parameter values and domains shared by the DSL, the sampler and
//! the layer builders.

use std::fmt;
use std::hash::{Hash, Hasher};

use indexmap::IndexMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalarKind {
    Int,
    Float,
    Str,
    Bool,
}

impl fmt::Display for ScalarKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScalarKind::Int => "integer",
            ScalarKind::Float => "float",
            ScalarKind::Str => "string",
            ScalarKind::Bool => "boolean",
        })
    }
}

/// A single resolved parameter value.
///
/// Floats are compared and hashed by bit pattern; NaN never enters a domain
/// because the parser rejects non-finite numbers.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
}

impl Scalar {
    pub fn kind(&self) -> ScalarKind {
        match self {
            Scalar::Bool(_) => ScalarKind::Bool,
            Scalar::Int(_) => ScalarKind::Int,
            Scalar::Float(_) => ScalarKind::Float,
            Scalar::Str(_) => ScalarKind::Str,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Scalar::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_float(&self) -> Option<f64> {
        match self {
            Scalar::Float(v) => Some(*v),
            Scalar::Int(v) => Some(*v as f64),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Scalar::Str(s) => Some(s),
            _ => None,
        }
    }

    /// Converts to `kind` where that is lossless (integer → float only).
    pub fn coerce(self, kind: ScalarKind) -> Option<Scalar> {
        match (self, kind) {
            (Scalar::Int(v), ScalarKind::Float) => Some(Scalar::Float(v as f64)),
            (s, k) if s.kind() == k => Some(s),
            _ => None,
        }
    }
}

impl PartialEq for Scalar {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Scalar::Bool(a), Scalar::Bool(b)) => a == b,
            (Scalar::Int(a), Scalar::Int(b)) => a == b,
            (Scalar::Float(a), Scalar::Float(b)) => a.to_bits() == b.to_bits(),
            (Scalar::Str(a), Scalar::Str(b)) => a == b,
            _ => false,
        }
    }
}

impl Eq for Scalar {}

impl Hash for Scalar {
    fn hash<H: Hasher>(&self, state: &mut H) {
        std::mem::discriminant(self).hash(state);
        match self {
            Scalar::Bool(v) => v.hash(state),
            Scalar::Int(v) => v.hash(state),
            Scalar::Float(v) => v.to_bits().hash(state),
            Scalar::Str(v) => v.hash(state),
        }
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Bool(v) => write!(f, "{v}"),
            Scalar::Int(v) => write!(f, "{v}"),
            Scalar::Float(v) => write!(f, "{v:?}"),
            Scalar::Str(v) => write!(f, "{v}"),
        }
    }
}

impl From<i64> for Scalar {
    fn from(v: i64) -> Self {
        Scalar::Int(v)
    }
}

impl From<f64> for Scalar {
    fn from(v: f64) -> Self {
        Scalar::Float(v)
    }
}

impl From<&str> for Scalar {
    fn from(v: &str) -> Self {
        Scalar::Str(v.to_string())
    }
}

impl From<bool> for Scalar {
    fn from(v: bool) -> Self {
        Scalar::Bool(v)
    }
}

/// `<VALUE | CHOICES>`: a fixed value or a finite, non-empty, duplicate-free
/// list of same-kind alternatives.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum ParamDomain {
    Fixed(Scalar),
    Choice(Vec<Scalar>),
}

impl ParamDomain {
    pub fn values(&self) -> &[Scalar] {
        match self {
            ParamDomain::Fixed(v) => std::slice::from_ref(v),
            ParamDomain::Choice(vs) => vs,
        }
    }

    pub fn len(&self) -> usize {
        self.values().len()
    }

    pub fn is_empty(&self) -> bool {
        self.values().is_empty()
    }

    pub fn is_choice(&self) -> bool {
        matches!(self, ParamDomain::Choice(_))
    }

    pub fn kind(&self) -> ScalarKind {
        self.values()[0].kind()
    }
}

/// Ordered `name → value` map of resolved layer parameters.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Params(Vec<(String, Scalar)>);

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Option<&Scalar> {
        self.0.iter().find(|(k, _)| k == name).map(|(_, v)| v)
    }

    pub fn int(&self, name: &str) -> Option<i64> {
        self.get(name).and_then(Scalar::as_int)
    }

    pub fn float(&self, name: &str) -> Option<f64> {
        self.get(name).and_then(Scalar::as_float)
    }

    pub fn str(&self, name: &str) -> Option<&str> {
        self.get(name).and_then(Scalar::as_str)
    }

    /// Inserts or replaces, keeping the original position on replace.
    pub fn set(&mut self, name: impl Into<String>, value: impl Into<Scalar>) {
        let name = name.into();
        let value = value.into();
        match self.0.iter_mut().find(|(k, _)| *k == name) {
            Some(slot) => slot.1 = value,
            None => self.0.push((name, value)),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Scalar)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl<K: Into<String>, V: Into<Scalar>> FromIterator<(K, V)> for Params {
    fn from_iter<T: IntoIterator<Item = (K, V)>>(iter: T) -> Self {
        let mut p = Params::new();
        for (k, v) in iter {
            p.set(k, v);
        }
        p
    }
}

impl Serialize for Params {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_map(self.0.iter().map(|(k, v)| (k, v)))
    }
}

impl<'de> Deserialize<'de> for Params {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let map = IndexMap::<String, Scalar>::deserialize(deserializer)?;
        Ok(Params(map.into_iter().collect()))
    }
}

impl fmt::Display for Params {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (k, v)) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_json_is_untagged() {
        let vals: Vec<Scalar> = serde_json::from_str(r#"[3, 2.5, "zscore", true]"#).unwrap();
        assert_eq!(
            vals,
            vec![
                Scalar::Int(3),
                Scalar::Float(2.5),
                "zscore".into(),
                Scalar::Bool(true)
            ]
        );
        assert_eq!(
            serde_json::to_string(&vals).unwrap(),
            r#"[3,2.5,"zscore",true]"#
        );
    }

    #[test]
    fn int_and_float_are_distinct() {
        assert_ne!(Scalar::Int(1), Scalar::Float(1.0));
        assert_eq!(
            Scalar::Int(1).coerce(ScalarKind::Float),
            Some(Scalar::Float(1.0))
        );
        assert_eq!(Scalar::Float(1.0).coerce(ScalarKind::Int), None);
    }

    #[test]
    fn params_preserve_insertion_order() {
        let mut p: Params = [("kernel_size", 3i64), ("out_channels", 8)]
            .into_iter()
            .collect();
        p.set("kernel_size", 5i64);
        assert_eq!(
            serde_json::to_string(&p).unwrap(),
            r#"{"kernel_size":5,"out_channels":8}"#
        );
        let back: Params = serde_json::from_str(r#"{"kernel_size":5,"out_channels":8}"#).unwrap();
        assert_eq!(back, p);
    }
}
