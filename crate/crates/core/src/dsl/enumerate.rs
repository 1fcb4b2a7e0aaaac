use num_bigint::BigUint;

use crate::dsl::{count_configurations, DslError, SearchSpaceSpec};
use crate::sampler::{sample_architecture, ArchitectureIR, SampleError, TrialSource};
use crate::value::Scalar;

/// Every distinct architecture of `spec`, each exactly once.
///
/// Walks the decision tree depth-first: the first decision of a trial is the
/// most significant digit, and choices are tried in the order written. This
/// gives document order of blocks, ascending depth, op candidates as written
/// and parameter choices as written.
pub fn enumerate_space(
    spec: &SearchSpaceSpec,
    limit: u64,
) -> Result<impl Iterator<Item = ArchitectureIR> + '_, DslError> {
    let count = count_configurations(spec);
    if count > BigUint::from(limit) {
        return Err(DslError::Limit { count, limit });
    }
    Ok(Enumerator {
        spec,
        prefix: Vec::new(),
        done: false,
    })
}

struct Enumerator<'a> {
    spec: &'a SearchSpaceSpec,
    /// `(chosen index, number of choices)` per decision of the next path.
    prefix: Vec<(usize, usize)>,
    done: bool,
}

struct PathSource<'p> {
    prefix: &'p mut Vec<(usize, usize)>,
    pos: usize,
}

impl TrialSource for PathSource<'_> {
    fn choose(&mut self, _key: &str, choices: &[Scalar]) -> Result<usize, SampleError> {
        let idx = if self.pos < self.prefix.len() {
            self.prefix[self.pos].0
        } else {
            self.prefix.push((0, choices.len()));
            0
        };
        self.prefix[self.pos].1 = choices.len();
        self.pos += 1;
        Ok(idx)
    }
}

impl Iterator for Enumerator<'_> {
    type Item = ArchitectureIR;

    fn next(&mut self) -> Option<ArchitectureIR> {
        if self.done {
            return None;
        }
        let mut source = PathSource {
            prefix: &mut self.prefix,
            pos: 0,
        };
        let ir = sample_architecture(self.spec, &mut source).expect("validated spec samples");
        let used = source.pos;
        self.prefix.truncate(used);
        // odometer: bump the deepest decision that still has alternatives
        loop {
            match self.prefix.last_mut() {
                None => {
                    self.done = true;
                    break;
                }
                Some((idx, n)) if *idx + 1 < *n => {
                    *idx += 1;
                    break;
                }
                Some(_) => {
                    self.prefix.pop();
                }
            }
        }
        Some(ir)
    }
}
