//! Misbehavior detection for vehicular-network message logs.
//!
//! The crate covers the whole batch workflow: CSV ingestion and cleaning
//! ([`dataio`]), label encoding, min-max scaling and chi-squared feature
//! selection ([`preprocess`]), two tree-based base learners ([`trees`] and
//! [`boosted`]), a multinomial logistic meta-learner ([`linear`]), the
//! stacking orchestrator ([`stacking`]), TreeSHAP attributions
//! ([`explain`]), Gaussian-process hyperparameter search ([`hpo`]),
//! metrics ([`evalreport`]) and a synthetic log generator ([`synth`]).
//!
//! Every randomized step is driven by an explicit seed. Fitting is
//! deterministic in `(data, config, seed)` regardless of the rayon thread
//! count.

pub mod boosted;
pub mod dataio;
pub mod error;
pub mod evalreport;
pub mod explain;
pub mod hpo;
pub mod linear;
pub mod preprocess;
pub mod seed;
pub mod stacking;
pub mod synth;
pub mod trees;

pub use dataio::{AttackCodeMap, CleanPolicy, ColumnKind, ColumnSchema, Dataset, SplitPair};
pub use error::{Error, Result};
pub use stacking::{fit_pipeline, PipelineConfig, StackConfig, StackedModel};

/// Version tag written into every serialized artifact.
pub const FORMAT_VERSION: u32 = 1;
