use std::collections::HashMap;

use rand::Rng;

use crate::dsl::SearchSpaceSpec;
use crate::sampler::{sample_architecture, SampleError, Trace, TrialSource};
use crate::value::Scalar;

/// Draws decisions from a parent trace, re-sampling each one with
/// probability `rate`. Keys the parent never drew (new layers after a depth
/// increase) are sampled fresh; parent keys that are no longer asked for
/// simply drop out.
pub struct MutatingSource<'a, R: Rng> {
    parent: HashMap<&'a str, &'a Scalar>,
    rate: f64,
    rng: &'a mut R,
}

impl<'a, R: Rng> MutatingSource<'a, R> {
    pub fn new(parent: &'a Trace, rate: f64, rng: &'a mut R) -> Self {
        Self {
            parent: parent.iter().map(|(k, v)| (k.as_str(), v)).collect(),
            rate,
            rng,
        }
    }
}

impl<R: Rng> TrialSource for MutatingSource<'_, R> {
    fn choose(&mut self, key: &str, choices: &[Scalar]) -> Result<usize, SampleError> {
        if let Some(idx) = self
            .parent
            .get(key)
            .and_then(|v| choices.iter().position(|c| c == *v))
        {
            if self.rng.gen::<f64>() >= self.rate {
                return Ok(idx);
            }
        }
        Ok(self.rng.gen_range(0..choices.len()))
    }
}

/// A child of `parent` where every decision is independently re-drawn with
/// probability `rate`. The result always replays to a valid architecture.
pub fn mutate<R: Rng>(
    parent: &Trace,
    spec: &SearchSpaceSpec,
    rate: f64,
    rng: &mut R,
) -> Result<Trace, SampleError> {
    let mut source = MutatingSource::new(parent, rate, rng);
    sample_architecture(spec, &mut source).map(|ir| ir.trace)
}
