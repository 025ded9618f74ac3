//! Causal fairness evaluation and mitigation for multi-stage decision
//! processes, built on the potential-outcomes framework.
//!
//! The crate is organised bottom-up:
//!
//! - [`tabular`]: column schemas, CSV I/O, one-hot encoding and the
//!   positivity filter.
//! - [`dgp`]: the stylized two-stage hiring generator with full potential
//!   outcomes and its ground-truth effects.
//! - [`models`]: weighted L2-regularized logistic regression (optionally with
//!   a prejudice-index penalty) and a small tanh MLP.
//! - [`counterfactual`]: sequential multiple imputation of post-treatment
//!   counterfactuals and total-effect estimation.
//! - [`fairness`]: statistical criteria, their counterfactual variants, and
//!   the precision/error-rate compatibility identity.
//! - [`mitigation`]: reweighing, prejudice remover, reject-option
//!   classification and counterfactual pooling.
//! - [`experiments`]: parameter sweeps with replication CIs and the
//!   mitigation benchmark.

pub mod counterfactual;
pub mod dgp;
mod error;
pub mod experiments;
pub mod fairness;
pub mod mitigation;
pub mod models;
pub mod seed;
pub mod tabular;

pub use error::{Error, Result};
