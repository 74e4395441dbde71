//! Masked autoregressive flow: exact encoder/decoder with tractable density.

mod made;
mod model;
mod train;

pub use made::{MadeBlock, LOG_SCALE_CLAMP};
pub use model::{base_log_prob, AffineNorm, FlowArch, FlowModel};
pub use train::FlowTrainConfig;

pub(crate) use model::standard_normal_matrix;
pub(crate) use train::{fit_hybrid, Hybrid};

#[cfg(test)]
mod tests;
