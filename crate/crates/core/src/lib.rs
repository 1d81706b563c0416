//! Semi-supervised pool-based active learning for support vector machines.
//!
//! Structure in the unlabeled pool is captured with a variational Bayesian
//! mixture model ([`mixture`]). The model feeds a data-dependent kernel
//! ([`kernels`]) used by a C-SVM trained with SMO ([`svm`]), and a
//! multi-criteria query strategy driving the active learning loop
//! ([`active`]). [`eval`] computes ranked performance, data utilization and
//! learning-curve areas over finished runs.

pub mod active;
pub mod dataset;
pub mod eval;
pub mod json;
pub mod kernels;
mod linalg;
pub mod mixture;
pub mod svm;

pub use dataset::{Dataset, FeatureLayout, FoldSplit, Sample, SampleId, Schema};
pub use mixture::MixtureModel;
