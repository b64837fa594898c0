//! Selective-forgetting attacks on the fairness of small tabular classifiers.
//!
//! The crate trains logistic-regression and MLP models on educational
//! datasets, runs four machine-unlearning operators (first-order,
//! second-order, unrolling SGD, SISA), and optimises malicious whole or
//! partial unlearning requests that widen the Equalized-Odds gap between two
//! sensitive groups while keeping test accuracy intact.

pub mod attack;
pub mod datasets;
pub mod diffmath;
pub mod error;
pub mod fairness;
pub mod harness;
pub mod models;
pub mod seeding;
pub mod training;
pub mod unlearning;

pub use error::{Error, Result};
