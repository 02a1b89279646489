//! Knowledge-graph reasoning by message propagation along learned,
//! query-dependent propagation paths.

pub mod autodiff;
pub mod baselines;
pub mod checkpoint;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod evaluator;
pub mod gradcheck;
pub mod kg;
pub mod par;
pub mod propagation;
pub mod sampler;
pub mod scheme;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
