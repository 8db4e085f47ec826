//! Core algorithms for world-model-in-the-loop policy steering.
//!
//! Everything in this crate is a pure function over value types and builds
//! without `std`. IO, configuration files, the HTTP verifier client and the
//! command-line surface live in the `foreseer` companion crate.
//!
//! Pipeline, in order of data flow:
//!
//! * [`env`]: planar manipulation simulator and scripted demonstrators.
//! * [`policy`]: mode-mixture base policy fit from demonstrations.
//! * [`aggregate`]: DTW time-series k-means that reduces sampled plans to K candidates.
//! * [`worldmodel`]: recurrent state-space model trained with BPTT; imagines latent futures.
//! * [`verifier`]: behavior features, narration grammar, task predicates and selection backends.
//! * [`steering`]: the sample / aggregate / imagine / narrate / select loop, plus monitoring.
//! * [`metrics`]: ROUGE-L, TF-IDF cosine, GT accuracy and the metric ablation.
#![no_std]

extern crate alloc;

pub mod aggregate;
pub mod dataset;
pub mod env;
mod error;
pub mod linalg;
pub mod math;
pub mod metrics;
pub mod policy;
pub mod rng;
pub mod steering;
pub mod verifier;
pub mod worldmodel;

pub use error::{Error, Result};
