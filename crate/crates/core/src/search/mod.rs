//! The optimization loop: trial generation, staged evaluation, history and
//! best-model selection.

mod evolution;
mod history;

use std::collections::{HashMap, HashSet};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{CapabilitySet, DeviceModel};
use crate::builder::{build_model, BuildError, ModelGraph};
use crate::dsl::{DslError, SearchSpaceSpec};
use crate::estimators::{
    evaluate_trial, Aggregator, CriteriaSet, Criterion, CriterionKind, Estimator, EvalContext,
    EvalError, Flops, Latency, LatencySource, Memory, Normalizer, ParamCount, SyntheticProxy,
    TrialOutcome,
};
use crate::preproc::{apply_preproc, preproc_output_shape};
use crate::registry::Registry;
use crate::runtime::Tensor;
use crate::sampler::{
    replay, sample_architecture, ArchitectureIR, RandomSource, SampleError, Trace,
};
use crate::shape::TensorShape;

pub use evolution::{mutate, MutatingSource};
pub use history::{read_history, write_history, TrialRecord, TrialStatus};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SearchError {
    #[error("invalid study configuration: {0}")]
    Config(String),
    #[error("no trial completed out of {0}")]
    NoCompleteTrial(usize),
    #[error(transparent)]
    Dsl(#[from] DslError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error(transparent)]
    Build(#[from] BuildError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionConfig {
    pub population: usize,
    pub offspring: usize,
    pub mutation_rate: f64,
    pub elite_fraction: f64,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            population: 16,
            offspring: 16,
            mutation_rate: 0.25,
            elite_fraction: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplerConfig {
    Random,
    Evolutionary(EvolutionConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriterionConfig {
    pub metric: String,
    pub kind: CriterionKind,
    #[serde(default)]
    pub weight: Option<f64>,
    #[serde(default)]
    pub threshold: Option<f64>,
    /// Min-max normalizer bounds; `[0, 1]` when absent.
    #[serde(default)]
    pub bounds: Option<[f64; 2]>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProxyConfig {
    pub seed: u64,
    pub planted_seed: u64,
}

impl Default for ProxyConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            planted_seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub budget: usize,
    pub sampler: SamplerConfig,
    pub seed: u64,
    pub criteria: Vec<CriterionConfig>,
    #[serde(default)]
    pub device: Option<DeviceModel>,
    #[serde(default = "one")]
    pub parallelism: usize,
    #[serde(default)]
    pub hardware_in_loop: bool,
    #[serde(default)]
    pub proxy: ProxyConfig,
    /// Wall time varies run to run, so it stays out of the history unless
    /// asked for.
    #[serde(default)]
    pub record_wall_time: bool,
}

fn one() -> usize {
    1
}

impl StudyConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        let bad = |m: String| Err(SearchError::Config(m));
        if self.budget == 0 {
            return bad("budget must be at least 1".into());
        }
        if self.parallelism == 0 {
            return bad("parallelism must be at least 1".into());
        }
        if let SamplerConfig::Evolutionary(e) = &self.sampler {
            if e.population == 0 || e.offspring == 0 {
                return bad("population and offspring must be at least 1".into());
            }
            if !(e.mutation_rate > 0.0 && e.mutation_rate <= 1.0) {
                return bad(format!(
                    "mutation rate {} must lie in (0, 1]",
                    e.mutation_rate
                ));
            }
            if !(e.elite_fraction > 0.0 && e.elite_fraction <= 1.0) {
                return bad(format!(
                    "elite fraction {} must lie in (0, 1]",
                    e.elite_fraction
                ));
            }
        }
        if let Some(d) = &self.device {
            d.validate()
                .map_err(|e| SearchError::Config(e.to_string()))?;
        }
        if self.hardware_in_loop && self.device.is_none() {
            return bad("hardware in the loop needs a device model".into());
        }
        Ok(())
    }
}

/// Per-trial seed derived from the study seed and the trial id alone.
pub fn trial_seed(study_seed: u64, trial: usize) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(mix(study_seed) ^ trial as u64)
}

#[derive(Clone, Debug)]
pub struct StudyResult {
    pub best: TrialRecord,
    /// All trials, ordered by id.
    pub history: Vec<TrialRecord>,
}

/// A configured study. Custom estimators, an aggregator and a backend
/// binding can be attached before [`Study::run`].
pub struct Study {
    spec: SearchSpaceSpec,
    config: StudyConfig,
    registry: Arc<Registry>,
    capabilities: Option<CapabilitySet>,
    estimators: HashMap<String, Arc<dyn Estimator>>,
    aggregator: Option<Arc<dyn Aggregator>>,
    calibration: Option<Tensor>,
}

impl Study {
    pub fn new(spec: SearchSpaceSpec, config: StudyConfig) -> Self {
        Self {
            spec,
            config,
            registry: Arc::new(Registry::builtin()),
            capabilities: None,
            estimators: HashMap::new(),
            aggregator: None,
            calibration: None,
        }
    }

    pub fn with_registry(mut self, registry: Arc<Registry>) -> Self {
        self.registry = registry;
        self
    }

    /// Binds a backend: the space is narrowed to what it supports before
    /// any sampling, and graphs are checked against it.
    pub fn with_capabilities(mut self, caps: CapabilitySet) -> Self {
        self.capabilities = Some(caps);
        self
    }

    /// Makes `estimator` available to criteria under its name, replacing a
    /// built-in of the same name.
    pub fn with_estimator(mut self, estimator: Arc<dyn Estimator>) -> Self {
        self.estimators
            .insert(estimator.name().to_string(), estimator);
        self
    }

    pub fn with_aggregator(mut self, aggregator: Arc<dyn Aggregator>) -> Self {
        self.aggregator = Some(aggregator);
        self
    }

    /// Raw signal pushed through each trial's pre-processing; a seeded
    /// random signal by default.
    pub fn with_calibration(mut self, signal: Tensor) -> Self {
        self.calibration = Some(signal);
        self
    }

    pub fn config(&self) -> &StudyConfig {
        &self.config
    }

    /// The space trials are drawn from, after any backend restriction.
    pub fn effective_space(&self) -> Result<SearchSpaceSpec, SearchError> {
        match &self.capabilities {
            Some(caps) => Ok(caps.restrict(&self.spec)?),
            None => Ok(self.spec.clone()),
        }
    }

    fn estimator(
        &self,
        name: &str,
        spec: &SearchSpaceSpec,
    ) -> Result<Arc<dyn Estimator>, SearchError> {
        if let Some(e) = self.estimators.get(name) {
            return Ok(e.clone());
        }
        Ok(match name {
            "params" => Arc::new(ParamCount),
            "flops" => Arc::new(Flops),
            "memory" => Arc::new(Memory),
            "latency" => {
                if self.config.device.is_none() {
                    return Err(SearchError::Config(
                        "the latency metric needs a device model".into(),
                    ));
                }
                let source = if self.config.hardware_in_loop {
                    LatencySource::Benchmark
                } else {
                    LatencySource::Analytic
                };
                Arc::new(Latency { source })
            }
            "accuracy_proxy" => {
                let p = self.config.proxy;
                Arc::new(SyntheticProxy::new(spec, p.seed, p.planted_seed)?)
            }
            other => return Err(SearchError::Config(format!("unknown metric `{other}`"))),
        })
    }

    pub fn criteria(&self, spec: &SearchSpaceSpec) -> Result<CriteriaSet, SearchError> {
        let mut list = Vec::new();
        for c in &self.config.criteria {
            let est = self.estimator(&c.metric, spec)?;
            let normalizer = match c.bounds {
                Some([lo, hi]) => Normalizer::new(lo, hi)?,
                None => Normalizer::identity(),
            };
            list.push(Criterion {
                estimator: est,
                kind: c.kind,
                threshold: c.threshold,
                weight: c.weight,
                normalizer,
            });
        }
        let set = CriteriaSet::new(list)?;
        Ok(match &self.aggregator {
            Some(a) => set.with_aggregator(a.clone()),
            None => set,
        })
    }

    pub fn run(&self) -> Result<StudyResult, SearchError> {
        self.config.validate()?;
        let spec = self.effective_space()?;
        let runner = TrialRunner {
            spec: &spec,
            registry: &self.registry,
            capabilities: self.capabilities.as_ref(),
            criteria: self.criteria(&spec)?,
            device: self.config.device,
            hardware_in_loop: self.config.hardware_in_loop,
            calibration: self.calibration.clone().unwrap_or_else(|| {
                Tensor::random(
                    spec.input_shape.dims().to_vec(),
                    trial_seed(self.config.seed, usize::MAX),
                )
            }),
            record_wall_time: self.config.record_wall_time,
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.parallelism)
            .build()
            .map_err(|e| SearchError::Config(e.to_string()))?;
        let seed = self.config.seed;
        let budget = self.config.budget;

        let history = match self.config.sampler {
            SamplerConfig::Random => {
                let ids: Vec<usize> = (0..budget).collect();
                pool.install(|| {
                    ids.par_iter()
                        .map(|&id| {
                            let s = trial_seed(seed, id);
                            runner.run_sampled(id, s, &mut RandomSource::new(s))
                        })
                        .collect::<Vec<_>>()
                })
            }
            SamplerConfig::Evolutionary(evo) => run_evolution(&runner, &pool, seed, budget, evo)?,
        };
        let complete = history
            .iter()
            .filter(|r| r.status == TrialStatus::Complete)
            .count();
        log::info!("study finished: {complete} of {budget} trials complete");
        let best = select_best(&history)
            .cloned()
            .ok_or(SearchError::NoCompleteTrial(budget))?;
        log::info!("best trial {} scored {:?}", best.id, best.score);
        Ok(StudyResult { best, history })
    }

    /// Replays a recorded trial into its IR and graph.
    pub fn materialize(
        &self,
        record: &TrialRecord,
    ) -> Result<(ArchitectureIR, ModelGraph), SearchError> {
        let spec = self.effective_space()?;
        let ir = replay(&spec, &record.trace)?;
        let input = model_input_shape(&spec, &ir).map_err(SearchError::Config)?;
        let graph = build_model(
            &ir,
            &input,
            &spec.output_shape,
            &self.registry,
            self.capabilities.as_ref(),
        )?;
        Ok((ir, graph))
    }
}

pub fn run_study(spec: SearchSpaceSpec, config: StudyConfig) -> Result<StudyResult, SearchError> {
    Study::new(spec, config).run()
}

/// Highest score among complete trials; the lowest id wins ties.
pub fn select_best(history: &[TrialRecord]) -> Option<&TrialRecord> {
    history
        .iter()
        .filter(|r| r.status == TrialStatus::Complete)
        .fold(None, |best: Option<&TrialRecord>, r| match best {
            Some(b)
                if b.rank_score() > r.rank_score()
                    || (b.rank_score() == r.rank_score() && b.id < r.id) =>
            {
                Some(b)
            }
            _ => Some(r),
        })
}

fn model_input_shape(spec: &SearchSpaceSpec, ir: &ArchitectureIR) -> Result<TensorShape, String> {
    match &ir.preproc {
        Some(rp) => preproc_output_shape(rp, &spec.input_shape).map_err(|e| e.to_string()),
        None => Ok(spec.input_shape.clone()),
    }
}

fn run_evolution(
    runner: &TrialRunner<'_>,
    pool: &rayon::ThreadPool,
    seed: u64,
    budget: usize,
    evo: EvolutionConfig,
) -> Result<Vec<TrialRecord>, SearchError> {
    let initial = evo.population.min(budget);
    let mut history: Vec<TrialRecord> = pool.install(|| {
        (0..initial)
            .into_par_iter()
            .map(|id| {
                let s = trial_seed(seed, id);
                runner.run_sampled(id, s, &mut RandomSource::new(s))
            })
            .collect()
    });
    let mut seen: HashSet<Trace> = history.iter().map(|r| r.trace.clone()).collect();
    let mut generation = 0usize;
    while history.len() < budget {
        generation += 1;
        let mut ranked: Vec<&TrialRecord> = history.iter().collect();
        ranked.sort_by(|a, b| {
            b.rank_score()
                .total_cmp(&a.rank_score())
                .then(a.id.cmp(&b.id))
        });
        ranked.truncate(evo.population);
        let elite =
            ((evo.elite_fraction * ranked.len() as f64).ceil() as usize).clamp(1, ranked.len());
        let parents: Vec<Trace> = ranked[..elite].iter().map(|r| r.trace.clone()).collect();

        let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(seed ^ 0xE5E5_E5E5, generation));
        let count = evo.offspring.min(budget - history.len());
        let mut children = Vec::with_capacity(count);
        for k in 0..count {
            let id = history.len() + k;
            let mut child = Vec::new();
            for _ in 0..16 {
                let parent = &parents[rng.gen_range(0..parents.len())];
                child = mutate(parent, runner.spec, evo.mutation_rate, &mut rng)?;
                if !seen.contains(&child) {
                    break;
                }
            }
            seen.insert(child.clone());
            children.push((id, child));
        }
        let evaluated: Vec<TrialRecord> = pool.install(|| {
            children
                .par_iter()
                .map(|(id, trace)| runner.run_trace(*id, trial_seed(seed, *id), trace))
                .collect()
        });
        history.extend(evaluated);
    }
    Ok(history)
}

struct TrialRunner<'a> {
    spec: &'a SearchSpaceSpec,
    registry: &'a Registry,
    capabilities: Option<&'a CapabilitySet>,
    criteria: CriteriaSet,
    device: Option<DeviceModel>,
    hardware_in_loop: bool,
    calibration: Tensor,
    record_wall_time: bool,
}

impl TrialRunner<'_> {
    fn record(&self, id: usize, seed: u64, trace: Trace, status: TrialStatus) -> TrialRecord {
        TrialRecord {
            id,
            seed,
            trace,
            status,
            metrics: Vec::new(),
            score: None,
            violated: None,
            error: None,
            model_input_shape: None,
            wall_time_s: None,
        }
    }

    fn run_sampled(&self, id: usize, seed: u64, source: &mut RandomSource) -> TrialRecord {
        let start = Instant::now();
        let mut rec = match sample_architecture(self.spec, source) {
            Ok(ir) => self.evaluate(id, seed, ir),
            Err(e) => {
                let mut r = self.record(id, seed, Vec::new(), TrialStatus::Failed);
                r.error = Some(e.to_string());
                r
            }
        };
        if self.record_wall_time {
            rec.wall_time_s = Some(start.elapsed().as_secs_f64());
        }
        rec
    }

    fn run_trace(&self, id: usize, seed: u64, trace: &Trace) -> TrialRecord {
        let start = Instant::now();
        let mut rec = match replay(self.spec, trace) {
            Ok(ir) => self.evaluate(id, seed, ir),
            Err(e) => {
                let mut r = self.record(id, seed, trace.clone(), TrialStatus::Failed);
                r.error = Some(e.to_string());
                r
            }
        };
        if self.record_wall_time {
            rec.wall_time_s = Some(start.elapsed().as_secs_f64());
        }
        rec
    }

    fn pruned(&self, mut r: TrialRecord, violated: &str, error: String) -> TrialRecord {
        log::debug!("trial {} pruned by {violated}: {error}", r.id);
        r.status = TrialStatus::Pruned;
        r.violated = Some(violated.into());
        r.error = Some(error);
        r
    }

    fn evaluate(&self, id: usize, seed: u64, ir: ArchitectureIR) -> TrialRecord {
        let mut r = self.record(id, seed, ir.trace.clone(), TrialStatus::Complete);
        let input = match model_input_shape(self.spec, &ir) {
            Ok(s) => s,
            Err(e) => return self.pruned(r, "preprocessing", e),
        };
        let inputs = match &ir.preproc {
            Some(rp) => match apply_preproc(rp, &self.calibration) {
                Ok(ts) => ts,
                Err(e) => return self.pruned(r, "preprocessing", e.to_string()),
            },
            None => Vec::new(),
        };
        if let Some(bad) = inputs.iter().find(|t| t.shape != input.dims()) {
            r.status = TrialStatus::Failed;
            r.error = Some(format!(
                "pre-processing produced {:?}, expected {input}",
                bad.shape
            ));
            return r;
        }
        r.model_input_shape = Some(input.clone());
        let graph = match build_model(
            &ir,
            &input,
            &self.spec.output_shape,
            self.registry,
            self.capabilities,
        ) {
            Ok(g) => g,
            Err(e @ BuildError::Capability { .. }) => {
                return self.pruned(r, "capability", e.to_string())
            }
            Err(e) => return self.pruned(r, "shape", e.to_string()),
        };
        if self.hardware_in_loop {
            if let Some(dev) = &self.device {
                if let Err(e) = dev.check_capacity(&graph) {
                    return self.pruned(r, "device_memory", e.to_string());
                }
            }
        }
        let ctx = EvalContext {
            graph: &graph,
            ir: &ir,
            device: self.device.as_ref(),
            seed,
            inputs: &inputs,
        };
        match evaluate_trial(&ctx, &self.criteria) {
            Ok(TrialOutcome::Complete { metrics, score }) => {
                r.metrics = metrics;
                r.score = Some(score);
            }
            Ok(TrialOutcome::Pruned { violated, metrics }) => {
                r.metrics = metrics;
                r.status = TrialStatus::Pruned;
                r.violated = Some(violated);
            }
            Ok(TrialOutcome::Failed { error, metrics }) => {
                r.metrics = metrics;
                r.status = TrialStatus::Failed;
                r.error = Some(error.to_string());
            }
            Err(e) => {
                r.status = TrialStatus::Failed;
                r.error = Some(e.to_string());
            }
        }
        r
    }
}
