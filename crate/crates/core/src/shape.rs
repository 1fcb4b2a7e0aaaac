use std::fmt;

use serde::{Deserialize, Serialize};

/// Layout class of a tensor flowing between layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorKind {
    /// Rank 1: `[features]`.
    FlatVector,
    /// Rank 2: `[channels, length]`.
    ChannelledSequence,
}

impl TensorKind {
    pub fn rank(self) -> usize {
        match self {
            TensorKind::FlatVector => 1,
            TensorKind::ChannelledSequence => 2,
        }
    }

    pub fn from_rank(rank: usize) -> Option<Self> {
        match rank {
            1 => Some(TensorKind::FlatVector),
            2 => Some(TensorKind::ChannelledSequence),
            _ => None,
        }
    }
}

impl fmt::Display for TensorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TensorKind::FlatVector => "flat-vector",
            TensorKind::ChannelledSequence => "channelled-sequence",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid tensor shape {dims:?}: {reason}")]
pub struct InvalidShape {
    pub dims: Vec<usize>,
    pub reason: &'static str,
}

/// Extents of an activation tensor. The kind is implied by the rank, so a
/// shape can only be constructed with rank 1 or 2 and non-zero extents.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct TensorShape {
    dims: Vec<usize>,
}

impl TensorShape {
    pub fn new(dims: Vec<usize>) -> Result<Self, InvalidShape> {
        if TensorKind::from_rank(dims.len()).is_none() {
            return Err(InvalidShape {
                dims,
                reason: "rank must be 1 or 2",
            });
        }
        if dims.contains(&0) {
            return Err(InvalidShape {
                dims,
                reason: "extents must be positive",
            });
        }
        Ok(Self { dims })
    }

    pub fn flat(features: usize) -> Result<Self, InvalidShape> {
        Self::new(vec![features])
    }

    pub fn sequence(channels: usize, length: usize) -> Result<Self, InvalidShape> {
        Self::new(vec![channels, length])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn kind(&self) -> TensorKind {
        // rank checked in `new`
        TensorKind::from_rank(self.dims.len()).unwrap()
    }

    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }

    /// `(channels, length)` for a channelled sequence.
    pub fn channels_length(&self) -> Option<(usize, usize)> {
        match self.dims.as_slice() {
            [c, l] => Some((*c, *l)),
            _ => None,
        }
    }
}

impl TryFrom<Vec<usize>> for TensorShape {
    type Error = InvalidShape;

    fn try_from(dims: Vec<usize>) -> Result<Self, Self::Error> {
        Self::new(dims)
    }
}

impl From<TensorShape> for Vec<usize> {
    fn from(shape: TensorShape) -> Self {
        shape.dims
    }
}

impl fmt::Display for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, d) in self.dims.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, "]")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_follows_rank() {
        assert_eq!(
            TensorShape::flat(10).unwrap().kind(),
            TensorKind::FlatVector
        );
        assert_eq!(
            TensorShape::sequence(4, 1250).unwrap().kind(),
            TensorKind::ChannelledSequence
        );
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(TensorShape::new(vec![]).is_err());
        assert!(TensorShape::new(vec![1, 2, 3]).is_err());
        assert!(TensorShape::new(vec![4, 0]).is_err());
    }

    #[test]
    fn json_is_a_bare_list() {
        let s = TensorShape::sequence(8, 624).unwrap();
        assert_eq!(serde_json::to_string(&s).unwrap(), "[8,624]");
        let back: TensorShape = serde_json::from_str("[8,624]").unwrap();
        assert_eq!(back, s);
        assert!(serde_json::from_str::<TensorShape>("[0]").is_err());
    }
}
