//! Bayesian meta-learning for few-shot indoor localization.
//!
//! A localization network's weights get a diagonal Gaussian prior. Meta-
//! training learns a set of such priors (particles) from tasks collected in
//! several environments by running SVGD on the PAC-optimal hyper-posterior.
//! In a new environment the particles are fine-tuned on a handful of labeled
//! fingerprints, and localization samples an ensemble of networks from every
//! particle to report both a position error and a per-point uncertainty.

pub mod baselines;
pub mod envsim;
pub mod error;
pub mod experiment;
pub mod io;
pub mod net;
pub mod pacoh;
pub mod pipeline;
pub mod prob;
pub mod rng;
pub mod svgd;
pub mod task;

pub use error::{Error, Result};
pub use net::{Architecture, FlatParams};
pub use prob::{HyperPrior, PriorParticle};
pub use svgd::ParticleSet;
pub use task::{Sample, Task};
