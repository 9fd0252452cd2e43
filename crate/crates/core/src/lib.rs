//! Hardware-aware compression explorer for small CNNs.

pub mod agents;
pub mod compress;
pub mod container;
pub mod dataset;
pub mod energy;
pub mod error;
pub mod linalg;
pub mod model;
pub mod nn;
pub mod nsga2;
pub mod orchestrator;
pub mod reward;
pub mod tensor;

pub use error::{Error, Result};
