use num_bigint::BigUint;

use crate::dsl::{BlockSpec, Candidate, CandidateKind, Repeat, SearchSpaceSpec};
use crate::value::ParamDomain;

/// Exact number of distinct architectures (including pre-processing
/// choices) the sampler can emit for `spec`.
///
/// Blocks multiply; for a block with depth domain `D` and per-layer
/// configuration count `C`:
///
/// | mode            | count                         |
/// |-----------------|-------------------------------|
/// | none            | `C`                           |
/// | `vary_all`      | `Σ_{d∈D} C^d`                 |
/// | `repeat_params` | `Σ_{d∈D} C`                   |
/// | `repeat_op`     | `Σ_{d∈D} Σ_op P_op^d`         |
/// | `repeat_block`  | count of the referenced block |
///
/// `C = Σ_op P_op`, where `P_op` is the product of the op's domain sizes,
/// or the composite's own count for a composite candidate.
pub fn count_configurations(spec: &SearchSpaceSpec) -> BigUint {
    let counter = Counter { spec };
    let mut total = counter.sequence(&spec.sequence);
    if let Some(pre) = &spec.preprocessing {
        for stage in &pre.stages {
            total *= counter.unit(stage);
        }
    }
    total
}

struct Counter<'a> {
    spec: &'a SearchSpaceSpec,
}

impl Counter<'_> {
    fn sequence(&self, seq: &[BlockSpec]) -> BigUint {
        seq.iter().map(|b| self.block(b, seq)).product()
    }

    fn block(&self, block: &BlockSpec, seq: &[BlockSpec]) -> BigUint {
        match &block.repeat {
            None => self.unit(block),
            Some(Repeat::VaryAll { depth }) => {
                let unit = self.unit(block);
                depths(depth).map(|d| unit.pow(d)).sum()
            }
            Some(Repeat::RepeatParams { depth }) => BigUint::from(depth.len()) * self.unit(block),
            Some(Repeat::RepeatOp { depth }) => {
                let per_op: Vec<BigUint> =
                    block.candidates.iter().map(|c| self.candidate(c)).collect();
                depths(depth)
                    .map(|d| per_op.iter().map(|p| p.pow(d)).sum::<BigUint>())
                    .sum()
            }
            Some(Repeat::RepeatBlock { ref_block }) => {
                let target = seq
                    .iter()
                    .find(|b| &b.name == ref_block)
                    .expect("validated: ref_block names an earlier block");
                self.block(target, seq)
            }
        }
    }

    fn unit(&self, block: &BlockSpec) -> BigUint {
        block.candidates.iter().map(|c| self.candidate(c)).sum()
    }

    fn candidate(&self, cand: &Candidate) -> BigUint {
        match &cand.kind {
            CandidateKind::Layer { params } => params
                .iter()
                .map(|p| BigUint::from(p.domain.len()))
                .product(),
            CandidateKind::Composite => {
                let comp = self
                    .spec
                    .composite(&cand.name)
                    .expect("validated composite reference");
                self.sequence(&comp.sequence)
            }
        }
    }
}

fn depths(domain: &ParamDomain) -> impl Iterator<Item = u32> + '_ {
    domain
        .values()
        .iter()
        .map(|v| v.as_int().expect("validated integer depth") as u32)
}
