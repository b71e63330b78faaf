//! Learning individualized treatment regimes under unmeasured confounding
//! with a binary instrumental variable.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, the command line
//! and thread pools live in the companion `ivregime` crate.
//!
//! Module map:
//! - [`data`]: observations, datasets and decision rules
//! - [`synth`]: simulation scenarios with latent truth
//! - [`nuisance`]: logistic/linear fits, compliance and CATE plug-ins, g-estimation
//! - [`weights`]: classification weights for every estimator family
//! - [`learn`]: weighted hinge-loss solver and cross-validation
//! - [`evaluation`]: value estimators, influence functions and IV bounds
//! - [`bench`]: replication harness for the simulation tables
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod bench;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod label;
pub mod learn;
pub mod linalg;
pub mod math;
pub mod nuisance;
pub mod rng;
pub mod synth;
pub mod weights;

pub use data::{Dataset, DecisionRule, KernelRule, LatentDataset, Observation};
pub use error::{Error, Result};
pub use label::Label;
pub use weights::{WeightScheme, WeightVector};
