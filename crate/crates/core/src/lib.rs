//! Hierarchical question recommendation.
//!
//! A high-level policy picks concepts, the curriculum filters the question
//! universe down to the related candidates, and a low-level policy picks one
//! question. Both levels read a learning state fused from the student's history,
//! learning target and the current action set, and are trained with REINFORCE
//! against simulated students.

pub mod config;
pub mod curriculum;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod logs;
pub mod nn;
pub mod plot;
pub mod policy;
pub mod rng;
pub mod simulators;
pub mod training;

pub use error::{Error, Result};
