//! Facial-hair area measurement, pair categorization by hair coverage,
//! exhaustive verification scoring, error-rate metrics, and global versus
//! per-group threshold calibration.

pub mod dataset;
pub mod error;
pub mod maskops;
pub mod metrics;
pub mod pairs;
pub mod protocol;
pub mod scoring;
pub mod synthgen;

pub use dataset::{load_dataset, Dataset, EmbeddingStore, ImageRecord};
pub use error::{Error, ErrorClass, Result};
pub use maskops::{LabelMask, FACIAL_HAIR, NOT_FACIAL_HAIR, SHADOW};
pub use metrics::{Calibration, EerReport, InequityReport, ThresholdTable};
pub use pairs::{PairCategory, PairKind, RatioClass, RatioClassScheme, Scope};
pub use protocol::{ProtocolConfig, ProtocolResult, SplitPlan};
pub use scoring::{ScoreCell, ScoreRequest, ScoreSet, ScoringConfig};
pub use synthgen::GenConfig;
