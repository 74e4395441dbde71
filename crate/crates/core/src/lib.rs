//! Featurized density ratio estimation.
//!
//! A masked autoregressive flow is fit to the pooled samples of two
//! distributions; both samples are encoded through it and a base ratio
//! estimator (probabilistic classifier, KLIEP or KMM) is run on the
//! encodings. Because the flow is invertible, `p(x)/q(x)` equals the ratio of
//! the encoded densities, so the composed estimator targets the same
//! quantity while working in a space where the two samples overlap more.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod apps;
pub mod data;
pub mod dre;
pub mod error;
pub mod experiment;
pub mod featurize;
pub mod flow;
pub mod nn;
pub mod par;
pub mod rng;
pub mod stats;
mod train;

pub use data::{DataMatrix, LabeledData};
pub use error::{Error, Result};
pub use flow::{FlowArch, FlowModel, FlowTrainConfig};
pub use train::TrainReport;
