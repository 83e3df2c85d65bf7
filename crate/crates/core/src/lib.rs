//! Frame-level multi-label inference for capsule endoscopy video: detection
//! head ensembles, validation-weighted fusion and calibration,
//! anatomy-aware temporal decoding, and per-class threshold search.

// NaN must fail validation, so `!(x > 0.0)` is intended throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ated;
pub mod corpus_io;
pub mod dhe;
mod error;
pub mod manifest;
pub mod metrics;
pub mod pipeline;
pub mod synth;
pub mod taxonomy;
pub mod threshold_opt;
pub mod vgwf;

pub use ated::{DecodeConfig, DecodeSettings, EventMode, TransitMode};
pub use corpus_io::{AnnotationSet, BinaryMatrix, Event, EventSet, FeatureTable, ProbabilityMatrix};
pub use dhe::{HeadConfig, LossKind, TrainedHead};
pub use error::{Error, Result};
pub use manifest::{CorpusManifest, Split};
pub use pipeline::{run_pipeline, PipelineConfig, PipelineReport, Stage, StageError};
pub use synth::{synth_corpus, SynthParams};
pub use taxonomy::{ClassRole, LabelTaxonomy};
pub use threshold_opt::{SearchMode, SearchSettings, ThresholdProfile};
pub use vgwf::FusionProfile;
