//! Maps trial decisions onto a fully resolved [`ArchitectureIR`].
//!
//! Every decision point has a stable dotted key built from the block path,
//! e.g. `features.rep0.conv-block.conv.conv1d.kernel_size`. Blocks that
//! repeat contribute a `rep<i>` segment per layer; depth keys (`<block>.depth`)
//! are drawn before any per-layer key of the block, and op keys
//! (`<...>.op`) before the chosen op's parameters. Only choice domains are
//! decisions; fixed values never appear in the trace.

use std::collections::{HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsl::{BlockSpec, Candidate, CandidateKind, Repeat, SearchSpaceSpec};
use crate::preproc::{PreprocOp, PreprocStage, ResolvedPreproc};
use crate::value::{ParamDomain, Params, Scalar};

/// Ordered `(key, chosen value)` pairs, serialized as `[[key, value], ...]`.
pub type Trace = Vec<(String, Scalar)>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SampleError {
    #[error("cannot resolve {0}")]
    Resolution(String),
    #[error("replay of `{key}` failed: {message}")]
    Replay { key: String, message: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ResolvedLayer {
    /// Block path including repetition indices and composite nesting.
    pub path: Vec<String>,
    pub op: String,
    pub params: Params,
}

/// One sampled candidate, prior to graph construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureIR {
    pub layers: Vec<ResolvedLayer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preproc: Option<ResolvedPreproc>,
    pub trace: Trace,
}

impl ArchitectureIR {
    /// `op(params) -> op(params) -> ...`, for logs and summaries.
    pub fn summary(&self) -> String {
        let mut parts: Vec<String> = Vec::new();
        if let Some(rp) = &self.preproc {
            for s in &rp.stages {
                parts.push(format!(
                    "[{}]",
                    serde_json::to_string(&s.op).unwrap_or_default()
                ));
            }
        }
        for l in &self.layers {
            if l.params.is_empty() {
                parts.push(l.op.clone());
            } else {
                parts.push(format!("{}({})", l.op, l.params));
            }
        }
        parts.join(" -> ")
    }
}

/// Supplies one decision at a time. Implementations return an index into
/// `choices`.
pub trait TrialSource {
    fn choose(&mut self, key: &str, choices: &[Scalar]) -> Result<usize, SampleError>;
}

/// Uniform random decisions from a seeded ChaCha stream.
#[derive(Debug, Clone)]
pub struct RandomSource {
    rng: ChaCha8Rng,
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl TrialSource for RandomSource {
    fn choose(&mut self, _key: &str, choices: &[Scalar]) -> Result<usize, SampleError> {
        Ok(self.rng.gen_range(0..choices.len()))
    }
}

/// Replays a recorded trace. Every requested key must be present with a
/// value from its domain.
#[derive(Debug, Clone)]
pub struct ReplaySource {
    values: HashMap<String, Scalar>,
    consumed: HashSet<String>,
}

impl ReplaySource {
    pub fn new(trace: &[(String, Scalar)]) -> Self {
        Self {
            values: trace.iter().cloned().collect(),
            consumed: HashSet::new(),
        }
    }

    /// Trace keys that no decision asked for.
    pub fn unconsumed(&self) -> Vec<String> {
        let mut keys: Vec<String> = self
            .values
            .keys()
            .filter(|k| !self.consumed.contains(*k))
            .cloned()
            .collect();
        keys.sort();
        keys
    }
}

impl TrialSource for ReplaySource {
    fn choose(&mut self, key: &str, choices: &[Scalar]) -> Result<usize, SampleError> {
        let value = self.values.get(key).ok_or_else(|| SampleError::Replay {
            key: key.into(),
            message: "missing from trace".into(),
        })?;
        let idx = choices
            .iter()
            .position(|c| c == value)
            .ok_or_else(|| SampleError::Replay {
                key: key.into(),
                message: format!("value {value} is not in the domain"),
            })?;
        if !self.consumed.insert(key.to_string()) {
            return Err(SampleError::Replay {
                key: key.into(),
                message: "key requested twice".into(),
            });
        }
        Ok(idx)
    }
}

pub fn sample_architecture(
    spec: &SearchSpaceSpec,
    source: &mut dyn TrialSource,
) -> Result<ArchitectureIR, SampleError> {
    let mut s = Sampler {
        spec,
        source,
        trace: Vec::new(),
    };
    let preproc = match &spec.preprocessing {
        None => None,
        Some(pre) => {
            let mut stages = Vec::with_capacity(pre.stages.len());
            for stage in &pre.stages {
                let key = format!("preprocessing.{}", stage.name);
                let cand = &stage.candidates[s.choose_op(stage, &key)?];
                let CandidateKind::Layer { params } = &cand.kind else {
                    return Err(SampleError::Resolution(format!(
                        "{key}: composite in pre-processing"
                    )));
                };
                let params = s.params(&key, &cand.name, params)?;
                let op = PreprocOp::from_params(&cand.name, &params)
                    .map_err(|e| SampleError::Resolution(format!("{key}: {e}")))?;
                stages.push(PreprocStage {
                    slot: stage.name.clone(),
                    op,
                });
            }
            Some(ResolvedPreproc::new(stages))
        }
    };
    let mut layers = Vec::new();
    s.sequence(&spec.sequence, "", &[], &mut layers)?;
    Ok(ArchitectureIR {
        layers,
        preproc,
        trace: s.trace,
    })
}

/// Rebuilds the IR recorded by `trace` without any randomness. Fails if a
/// decision is missing or if the trace carries keys no decision used.
pub fn replay(
    spec: &SearchSpaceSpec,
    trace: &[(String, Scalar)],
) -> Result<ArchitectureIR, SampleError> {
    let mut source = ReplaySource::new(trace);
    let ir = sample_architecture(spec, &mut source)?;
    if let Some(key) = source.unconsumed().into_iter().next() {
        return Err(SampleError::Replay {
            key,
            message: "not a decision of this space".into(),
        });
    }
    Ok(ir)
}

struct Sampler<'a, 's> {
    spec: &'a SearchSpaceSpec,
    source: &'s mut dyn TrialSource,
    trace: Trace,
}

fn join(prefix: &str, segment: &str) -> String {
    if prefix.is_empty() {
        segment.to_string()
    } else {
        format!("{prefix}.{segment}")
    }
}

fn with_segment(path: &[String], segment: &str) -> Vec<String> {
    let mut p = path.to_vec();
    p.push(segment.to_string());
    p
}

impl Sampler<'_, '_> {
    fn decide(&mut self, key: String, choices: &[Scalar]) -> Result<usize, SampleError> {
        let idx = self.source.choose(&key, choices)?;
        if idx >= choices.len() {
            return Err(SampleError::Resolution(format!(
                "{key}: source chose index {idx} of {}",
                choices.len()
            )));
        }
        self.trace.push((key, choices[idx].clone()));
        Ok(idx)
    }

    fn domain_value(&mut self, key: String, domain: &ParamDomain) -> Result<Scalar, SampleError> {
        match domain {
            ParamDomain::Fixed(v) => Ok(v.clone()),
            ParamDomain::Choice(vs) => Ok(vs[self.decide(key, vs)?].clone()),
        }
    }

    fn depth(&mut self, key: &str, domain: &ParamDomain) -> Result<usize, SampleError> {
        let v = self.domain_value(join(key, "depth"), domain)?;
        v.as_int()
            .filter(|&d| d >= 1)
            .map(|d| d as usize)
            .ok_or_else(|| SampleError::Resolution(format!("{key}.depth: {v}")))
    }

    fn choose_op(&mut self, block: &BlockSpec, key: &str) -> Result<usize, SampleError> {
        if block.candidates.len() == 1 {
            return Ok(0);
        }
        let names: Vec<Scalar> = block
            .candidates
            .iter()
            .map(|c| Scalar::Str(c.name.clone()))
            .collect();
        self.decide(join(key, "op"), &names)
    }

    fn params(
        &mut self,
        key: &str,
        op: &str,
        params: &[crate::dsl::ResolvedParam],
    ) -> Result<Params, SampleError> {
        let mut out = Params::new();
        for p in params {
            let v = self.domain_value(format!("{}.{}", join(key, op), p.name), &p.domain)?;
            out.set(p.name.clone(), v);
        }
        Ok(out)
    }

    fn sequence(
        &mut self,
        seq: &[BlockSpec],
        key: &str,
        path: &[String],
        out: &mut Vec<ResolvedLayer>,
    ) -> Result<(), SampleError> {
        for b in seq {
            self.block(b, seq, &b.name, key, path, out)?;
        }
        Ok(())
    }

    fn block(
        &mut self,
        def: &BlockSpec,
        seq: &[BlockSpec],
        label: &str,
        key_prefix: &str,
        path_prefix: &[String],
        out: &mut Vec<ResolvedLayer>,
    ) -> Result<(), SampleError> {
        let key = join(key_prefix, label);
        let path = with_segment(path_prefix, label);
        match &def.repeat {
            None => self.unit(def, &key, &path, out),
            Some(Repeat::VaryAll { depth }) => {
                let d = self.depth(&key, depth)?;
                for i in 0..d {
                    let rep = format!("rep{i}");
                    self.unit(def, &join(&key, &rep), &with_segment(&path, &rep), out)?;
                }
                Ok(())
            }
            Some(Repeat::RepeatParams { depth }) => {
                let d = self.depth(&key, depth)?;
                let mut once = Vec::new();
                self.unit(def, &key, &with_segment(&path, "rep0"), &mut once)?;
                for i in 0..d {
                    for layer in &once {
                        let mut l = layer.clone();
                        l.path[path.len()] = format!("rep{i}");
                        out.push(l);
                    }
                }
                Ok(())
            }
            Some(Repeat::RepeatOp { depth }) => {
                let d = self.depth(&key, depth)?;
                let cand = &def.candidates[self.choose_op(def, &key)?];
                for i in 0..d {
                    let rep = format!("rep{i}");
                    self.candidate(cand, &join(&key, &rep), &with_segment(&path, &rep), out)?;
                }
                Ok(())
            }
            Some(Repeat::RepeatBlock { ref_block }) => {
                let target = seq.iter().find(|b| &b.name == ref_block).ok_or_else(|| {
                    SampleError::Resolution(format!("{key}: unknown ref_block {ref_block}"))
                })?;
                self.block(target, seq, label, key_prefix, path_prefix, out)
            }
        }
    }

    fn unit(
        &mut self,
        def: &BlockSpec,
        key: &str,
        path: &[String],
        out: &mut Vec<ResolvedLayer>,
    ) -> Result<(), SampleError> {
        let idx = self.choose_op(def, key)?;
        self.candidate(&def.candidates[idx], key, path, out)
    }

    fn candidate(
        &mut self,
        cand: &Candidate,
        key: &str,
        path: &[String],
        out: &mut Vec<ResolvedLayer>,
    ) -> Result<(), SampleError> {
        match &cand.kind {
            CandidateKind::Layer { params } => {
                let params = self.params(key, &cand.name, params)?;
                out.push(ResolvedLayer {
                    path: path.to_vec(),
                    op: cand.name.clone(),
                    params,
                });
                Ok(())
            }
            CandidateKind::Composite => {
                let comp = self.spec.composite(&cand.name).ok_or_else(|| {
                    SampleError::Resolution(format!("{key}: unknown composite {}", cand.name))
                })?;
                self.sequence(
                    &comp.sequence,
                    &join(key, &cand.name),
                    &with_segment(path, &cand.name),
                    out,
                )
            }
        }
    }
}

/// A condition under which a decision key is drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "if", rename_all = "snake_case")]
pub enum KeyCondition {
    /// The depth decision `key` chose at least `depth`.
    DepthAtLeast { key: String, depth: i64 },
    /// The op decision `key` chose `value`.
    Equals { key: String, value: Scalar },
}

/// One decision point of the space with the conditions that materialize it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionKey {
    pub key: String,
    pub choices: Vec<Scalar>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub conditions: Vec<KeyCondition>,
}

impl DecisionKey {
    /// Whether this key is drawn by a trial that produced `trace`.
    pub fn is_active(&self, trace: &HashMap<&str, &Scalar>) -> bool {
        self.conditions.iter().all(|c| match c {
            KeyCondition::DepthAtLeast { key, depth } => trace
                .get(key.as_str())
                .and_then(|v| v.as_int())
                .is_some_and(|d| d >= *depth),
            KeyCondition::Equals { key, value } => trace.get(key.as_str()) == Some(&value),
        })
    }
}

/// Every decision key of the space in sampling order. Keys under a
/// searchable depth are listed up to the largest depth, each conditioned on
/// the depth that materializes it.
pub fn parameter_keys(spec: &SearchSpaceSpec) -> Vec<DecisionKey> {
    let mut w = KeyWalker {
        spec,
        out: Vec::new(),
    };
    if let Some(pre) = &spec.preprocessing {
        for stage in &pre.stages {
            w.unit(stage, &format!("preprocessing.{}", stage.name), &[]);
        }
    }
    w.sequence(&spec.sequence, "", &[]);
    w.out
}

/// Keys of `all` that a trial producing `trace` must have drawn.
pub fn active_keys<'a>(all: &'a [DecisionKey], trace: &[(String, Scalar)]) -> Vec<&'a str> {
    let map: HashMap<&str, &Scalar> = trace.iter().map(|(k, v)| (k.as_str(), v)).collect();
    all.iter()
        .filter(|k| k.is_active(&map))
        .map(|k| k.key.as_str())
        .collect()
}

struct KeyWalker<'a> {
    spec: &'a SearchSpaceSpec,
    out: Vec<DecisionKey>,
}

impl KeyWalker<'_> {
    fn push(&mut self, key: String, domain: &ParamDomain, conds: &[KeyCondition]) {
        if let ParamDomain::Choice(vs) = domain {
            self.out.push(DecisionKey {
                key,
                choices: vs.clone(),
                conditions: conds.to_vec(),
            });
        }
    }

    fn sequence(&mut self, seq: &[BlockSpec], key: &str, conds: &[KeyCondition]) {
        for b in seq {
            self.block(b, seq, &b.name, key, conds);
        }
    }

    fn block(
        &mut self,
        def: &BlockSpec,
        seq: &[BlockSpec],
        label: &str,
        prefix: &str,
        conds: &[KeyCondition],
    ) {
        let key = join(prefix, label);
        let reps = |w: &mut Self, depth: &ParamDomain| -> Vec<(String, Vec<KeyCondition>)> {
            w.push(join(&key, "depth"), depth, conds);
            let max = depth
                .values()
                .iter()
                .filter_map(Scalar::as_int)
                .max()
                .unwrap_or(1);
            (0..max)
                .map(|i| {
                    let mut c = conds.to_vec();
                    if depth.is_choice() && depth.values().iter().any(|d| d.as_int() < Some(i + 1))
                    {
                        c.push(KeyCondition::DepthAtLeast {
                            key: join(&key, "depth"),
                            depth: i + 1,
                        });
                    }
                    (join(&key, &format!("rep{i}")), c)
                })
                .collect()
        };
        match &def.repeat {
            None => self.unit(def, &key, conds),
            Some(Repeat::VaryAll { depth }) => {
                for (k, c) in reps(self, depth) {
                    self.unit(def, &k, &c);
                }
            }
            Some(Repeat::RepeatParams { depth }) => {
                self.push(join(&key, "depth"), depth, conds);
                self.unit(def, &key, conds);
            }
            Some(Repeat::RepeatOp { depth }) => {
                let per_rep = reps(self, depth);
                let op_conds = self.op_decision(def, &key, conds);
                for (cand, oc) in def.candidates.iter().zip(op_conds) {
                    for (k, c) in &per_rep {
                        let mut c = c.clone();
                        c.extend(oc.iter().cloned());
                        self.candidate(cand, k, &c);
                    }
                }
            }
            Some(Repeat::RepeatBlock { ref_block }) => {
                if let Some(target) = seq.iter().find(|b| &b.name == ref_block) {
                    self.block(target, seq, label, prefix, conds);
                }
            }
        }
    }

    /// Emits the op key (if any) and returns, per candidate, the extra
    /// condition selecting it.
    fn op_decision(
        &mut self,
        def: &BlockSpec,
        key: &str,
        conds: &[KeyCondition],
    ) -> Vec<Vec<KeyCondition>> {
        if def.candidates.len() == 1 {
            return vec![Vec::new()];
        }
        let names: Vec<Scalar> = def
            .candidates
            .iter()
            .map(|c| Scalar::Str(c.name.clone()))
            .collect();
        let op_key = join(key, "op");
        self.push(op_key.clone(), &ParamDomain::Choice(names.clone()), conds);
        names
            .into_iter()
            .map(|value| {
                vec![KeyCondition::Equals {
                    key: op_key.clone(),
                    value,
                }]
            })
            .collect()
    }

    fn unit(&mut self, def: &BlockSpec, key: &str, conds: &[KeyCondition]) {
        let op_conds = self.op_decision(def, key, conds);
        for (cand, oc) in def.candidates.iter().zip(op_conds) {
            let mut c = conds.to_vec();
            c.extend(oc);
            self.candidate(cand, key, &c);
        }
    }

    fn candidate(&mut self, cand: &Candidate, key: &str, conds: &[KeyCondition]) {
        match &cand.kind {
            CandidateKind::Layer { params } => {
                for p in params {
                    self.push(
                        format!("{}.{}", join(key, &cand.name), p.name),
                        &p.domain,
                        conds,
                    );
                }
            }
            CandidateKind::Composite => {
                if let Some(comp) = self.spec.composite(&cand.name) {
                    self.sequence(&comp.sequence, &join(key, &cand.name), conds);
                }
            }
        }
    }
}
