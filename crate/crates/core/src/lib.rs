//! Deterministic federated-learning simulator with soft-label based
//! maximum-entropy device grouping.
//!
//! Each round the cloud picks candidate devices from a positive or a negative
//! pool (ε-greedy), every candidate trains locally and reports its averaged
//! soft label, a greedy entropy filter decides whose models are worth
//! uploading, and only those are aggregated.

pub mod datagen;
pub mod entropy;
pub mod error;
pub mod experiment;
pub mod federation;
pub mod numerics;
pub mod oracle;
pub mod prob;
pub mod scheduler;
pub mod selftest;

pub use error::{Error, Result};
pub use prob::ProbVector;
