//! Consumers of ratio estimates: weight post-processing, targeted sampling,
//! mutual information, importance-weighted classification and the
//! separated-Gaussians diagnostics.

mod erm;
mod mi;
mod pathology;
mod sir;
mod weights;

pub use erm::{fit_weighted_logistic, weighted_erm, ErmModel, ErmResult, LogisticModel};
pub use mi::{estimate_mi, MiEstimate};
pub use pathology::{pathology_bound, pathology_demo, PathologyConfig, PathologyLearner, PathologyReport, PathologyRun};
pub use sir::{sir_sample, RatioSpace, SirConfig};
pub use weights::{flatten, rebalance_mixture, self_normalize, WeightVector};
