//! Hardware-aware neural architecture search for time-series models.
//!
//! A search space is written in a small YAML language ([`dsl`]), sampled
//! into architecture IRs ([`sampler`]), built into shape-checked graphs
//! ([`builder`]) and scored by staged criteria ([`estimators`]) inside a
//! study loop ([`search`]). Winning graphs are emitted as portable C or a
//! JSON interchange document ([`backend`]).
//!
//! ```
//! use nasforge_core::{count_configurations, parse_spec};
//!
//! let spec = parse_spec(
//!     "
//! input: [4, 128]
//! output: 3
//! sequence:
//!   - block: features
//!     op_candidates: conv1d
//!     type_repeat: {type: vary_all, depth: [1, 2]}
//! default_op_params:
//!   conv1d: {kernel_size: [3, 5], out_channels: 8}
//! ",
//! )
//! .unwrap();
//! assert_eq!(count_configurations(&spec), 6u32.into());
//! ```

pub mod backend;
pub mod builder;
pub mod dsl;
pub mod estimators;
pub mod preproc;
pub mod registry;
pub mod runtime;
pub mod sampler;
pub mod search;
pub mod shape;
pub mod value;

pub use backend::{BackendError, CapabilitySet, DeviceModel};
pub use builder::{build_model, BuildError, ModelGraph};
pub use dsl::{count_configurations, enumerate_space, parse_spec, DslError, SearchSpaceSpec};
pub use estimators::{Direction, MetricValue};
pub use registry::{LayerConfig, Registry};
pub use runtime::{forward, init_params, ParamStore, Tensor};
pub use sampler::{replay, sample_architecture, ArchitectureIR, RandomSource, Trace};
pub use search::{run_study, SearchError, Study, StudyConfig, TrialRecord};
pub use shape::{TensorKind, TensorShape};
pub use value::{Params, Scalar};

/// Any error the library reports, for callers that map failures to one
/// place (exit codes, logs).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Dsl(#[from] DslError),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Runtime(#[from] runtime::RuntimeError),
    #[error(transparent)]
    Sample(#[from] sampler::SampleError),
}
