//! Deep LRU state-space models with sparsity regularizers and model order
//! reduction of their linear blocks.

pub mod data;
pub mod deep_ssm;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod lru;
pub mod metrics;
pub mod mor;
pub mod serde_mat;
pub mod training;

pub use data::{DataSplit, Dataset, Sequence};
pub use deep_ssm::{DeepSsm, DeepSsmConfig};
pub use error::{Error, Result};
pub use linalg::{HankelSpectrum, StateSpaceModel};
pub use lru::LruParams;
pub use metrics::Metrics;
pub use mor::{ReductionMethod, ReductionReport};
pub use training::{RegKind, TrainConfig};
