use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Direction, Estimator, EstimatorFailure, EvalContext, MetricValue};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriterionKind {
    Objective,
    SoftConstraint,
    HardConstraint,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("weight error: {0}")]
    Weight(String),
    #[error("invalid criteria: {0}")]
    Config(String),
}

/// Min-max scaling onto `[0, 1]` over user-declared bounds, clamped.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub lo: f64,
    pub hi: f64,
}

impl Normalizer {
    pub fn new(lo: f64, hi: f64) -> Result<Self, EvalError> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(EvalError::Config(format!(
                "normalizer bounds [{lo}, {hi}] are not ordered"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn identity() -> Self {
        Self { lo: 0.0, hi: 1.0 }
    }

    pub fn apply(&self, raw: f64) -> f64 {
        ((raw - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0)
    }
}

#[derive(Clone)]
pub struct Criterion {
    pub estimator: Arc<dyn Estimator>,
    pub kind: CriterionKind,
    pub threshold: Option<f64>,
    pub weight: Option<f64>,
    pub normalizer: Normalizer,
}

impl fmt::Debug for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Criterion")
            .field("estimator", &self.estimator.name())
            .field("kind", &self.kind)
            .field("threshold", &self.threshold)
            .field("weight", &self.weight)
            .field("normalizer", &self.normalizer)
            .finish()
    }
}

impl Criterion {
    pub fn objective(estimator: Arc<dyn Estimator>, weight: f64, normalizer: Normalizer) -> Self {
        Self {
            estimator,
            kind: CriterionKind::Objective,
            threshold: None,
            weight: Some(weight),
            normalizer,
        }
    }

    pub fn soft(
        estimator: Arc<dyn Estimator>,
        threshold: f64,
        weight: f64,
        normalizer: Normalizer,
    ) -> Self {
        Self {
            estimator,
            kind: CriterionKind::SoftConstraint,
            threshold: Some(threshold),
            weight: Some(weight),
            normalizer,
        }
    }

    pub fn hard(estimator: Arc<dyn Estimator>, threshold: f64) -> Self {
        Self {
            estimator,
            kind: CriterionKind::HardConstraint,
            threshold: Some(threshold),
            weight: None,
            normalizer: Normalizer::identity(),
        }
    }

    pub fn name(&self) -> &str {
        self.estimator.name()
    }

    fn violated_by(&self, value: f64) -> bool {
        let t = self.threshold.unwrap_or(f64::NAN);
        match self.estimator.direction() {
            Direction::Minimize => value > t,
            Direction::Maximize => value < t,
        }
    }

    fn validate(&self) -> Result<(), EvalError> {
        let name = self.name();
        match self.kind {
            CriterionKind::HardConstraint => {
                if self.weight.is_some() {
                    return Err(EvalError::Config(format!(
                        "hard constraint `{name}` carries a weight"
                    )));
                }
            }
            _ => match self.weight {
                Some(w) if w > 0.0 && w.is_finite() => {}
                Some(w) => {
                    return Err(EvalError::Config(format!(
                        "weight {w} of `{name}` must be positive"
                    )))
                }
                None => return Err(EvalError::Weight(format!("`{name}` has no weight"))),
            },
        }
        if self.kind != CriterionKind::Objective && !self.threshold.is_some_and(f64::is_finite) {
            return Err(EvalError::Config(format!(
                "constraint `{name}` needs a threshold"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermRole {
    Objective,
    Penalty,
}

/// One input to scalarization: a normalized value in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreTerm {
    pub name: String,
    pub value: f64,
    pub weight: Option<f64>,
    pub direction: Direction,
    pub role: TermRole,
}

impl ScoreTerm {
    pub fn objective(name: &str, value: f64, weight: f64, direction: Direction) -> Self {
        Self {
            name: name.into(),
            value,
            weight: Some(weight),
            direction,
            role: TermRole::Objective,
        }
    }
}

/// Collapses score terms into one scalar; higher is better.
pub trait Aggregator: Send + Sync {
    fn aggregate(&self, terms: &[ScoreTerm]) -> Result<f64, EvalError>;
}

impl<F> Aggregator for F
where
    F: Fn(&[ScoreTerm]) -> f64 + Send + Sync,
{
    fn aggregate(&self, terms: &[ScoreTerm]) -> Result<f64, EvalError> {
        Ok(self(terms))
    }
}

/// `Σ wᵢ·vᵢ`, minimize terms reflected as `1 − v`, penalties subtracted.
#[derive(Clone, Copy, Debug, Default)]
pub struct WeightedSum;

impl Aggregator for WeightedSum {
    fn aggregate(&self, terms: &[ScoreTerm]) -> Result<f64, EvalError> {
        let mut score = 0.0;
        for t in terms {
            let w = t
                .weight
                .ok_or_else(|| EvalError::Weight(format!("`{}` has no weight", t.name)))?;
            score += match (t.role, t.direction) {
                (TermRole::Penalty, _) => -w * t.value,
                (TermRole::Objective, Direction::Maximize) => w * t.value,
                (TermRole::Objective, Direction::Minimize) => w * (1.0 - t.value),
            };
        }
        Ok(score)
    }
}

pub fn scalarize(terms: &[ScoreTerm], aggregator: &dyn Aggregator) -> Result<f64, EvalError> {
    aggregator.aggregate(terms)
}

/// Ordered criteria plus the aggregator that scores them.
#[derive(Clone)]
pub struct CriteriaSet {
    criteria: Vec<Criterion>,
    aggregator: Arc<dyn Aggregator>,
}

impl fmt::Debug for CriteriaSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CriteriaSet")
            .field("criteria", &self.criteria)
            .finish_non_exhaustive()
    }
}

impl CriteriaSet {
    pub fn new(criteria: Vec<Criterion>) -> Result<Self, EvalError> {
        if !criteria.iter().any(|c| c.kind == CriterionKind::Objective) {
            return Err(EvalError::Config(
                "at least one objective is required".into(),
            ));
        }
        for c in &criteria {
            c.validate()?;
        }
        Ok(Self {
            criteria,
            aggregator: Arc::new(WeightedSum),
        })
    }

    pub fn with_aggregator(mut self, aggregator: Arc<dyn Aggregator>) -> Self {
        self.aggregator = aggregator;
        self
    }

    pub fn criteria(&self) -> &[Criterion] {
        &self.criteria
    }

    pub fn aggregator(&self) -> &dyn Aggregator {
        self.aggregator.as_ref()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrialOutcome {
    Complete {
        metrics: Vec<MetricValue>,
        score: f64,
    },
    /// `metrics` holds the hard-constraint values computed before the stop.
    Pruned {
        violated: String,
        metrics: Vec<MetricValue>,
    },
    Failed {
        error: EstimatorFailure,
        metrics: Vec<MetricValue>,
    },
}

impl TrialOutcome {
    pub fn score(&self) -> Option<f64> {
        match self {
            TrialOutcome::Complete { score, .. } => Some(*score),
            _ => None,
        }
    }

    pub fn metrics(&self) -> &[MetricValue] {
        match self {
            TrialOutcome::Complete { metrics, .. }
            | TrialOutcome::Pruned { metrics, .. }
            | TrialOutcome::Failed { metrics, .. } => metrics,
        }
    }
}

struct MetricCache<'a> {
    ctx: &'a EvalContext<'a>,
    values: HashMap<String, f64>,
    metrics: Vec<MetricValue>,
}

impl MetricCache<'_> {
    fn get(&mut self, est: &dyn Estimator) -> Result<f64, EstimatorFailure> {
        if let Some(v) = self.values.get(est.name()) {
            return Ok(*v);
        }
        let v = est.estimate(self.ctx)?;
        if !v.is_finite() {
            return Err(EstimatorFailure {
                estimator: est.name().into(),
                message: format!("non-finite value {v}"),
            });
        }
        self.values.insert(est.name().into(), v);
        self.metrics
            .push(MetricValue::new(est.name(), v, est.direction(), est.unit()));
        Ok(v)
    }
}

/// Runs the criteria: hard constraints in declaration order first, stopping
/// at the first violation; then objectives and soft constraints; then
/// scalarization. Each estimator runs at most once per call.
pub fn evaluate_trial(ctx: &EvalContext<'_>, set: &CriteriaSet) -> Result<TrialOutcome, EvalError> {
    let mut cache = MetricCache {
        ctx,
        values: HashMap::new(),
        metrics: Vec::new(),
    };
    for c in set
        .criteria
        .iter()
        .filter(|c| c.kind == CriterionKind::HardConstraint)
    {
        let v = match cache.get(c.estimator.as_ref()) {
            Ok(v) => v,
            Err(error) => {
                return Ok(TrialOutcome::Failed {
                    error,
                    metrics: cache.metrics,
                })
            }
        };
        if c.violated_by(v) {
            return Ok(TrialOutcome::Pruned {
                violated: c.name().into(),
                metrics: cache.metrics,
            });
        }
    }
    let mut terms = Vec::new();
    for c in set
        .criteria
        .iter()
        .filter(|c| c.kind != CriterionKind::HardConstraint)
    {
        let v = match cache.get(c.estimator.as_ref()) {
            Ok(v) => v,
            Err(error) => {
                return Ok(TrialOutcome::Failed {
                    error,
                    metrics: cache.metrics,
                })
            }
        };
        let dir = c.estimator.direction();
        let norm = c.normalizer.apply(v);
        let term = match c.kind {
            CriterionKind::Objective => {
                ScoreTerm::objective(c.name(), norm, c.weight.unwrap_or(f64::NAN), dir)
            }
            _ => {
                let t = c.normalizer.apply(c.threshold.unwrap_or(f64::NAN));
                let excess = match dir {
                    Direction::Minimize => norm - t,
                    Direction::Maximize => t - norm,
                };
                ScoreTerm {
                    name: c.name().into(),
                    value: excess.max(0.0),
                    weight: c.weight,
                    direction: dir,
                    role: TermRole::Penalty,
                }
            }
        };
        terms.push(term);
    }
    let score = scalarize(&terms, set.aggregator())?;
    Ok(TrialOutcome::Complete {
        metrics: cache.metrics,
        score,
    })
}
