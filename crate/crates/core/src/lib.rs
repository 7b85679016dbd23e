//! Bayesian dynamic sparse latent factor model with factor stochastic volatility.
//!
//! Multi-subject, multi-condition region time series are decomposed as
//! `y_t = Λ_s f_t + ε_t` with spike-and-slab loadings tied across subjects by
//! group inclusion probabilities, and AR(1) log-volatilities on the factors.
//! The crate provides the Gibbs/Metropolis sampler, simulation of ground-truth
//! datasets, task-effect statistics with a sparse behavioral regression, and
//! post-hoc summaries (alignment, thresholding, model selection, metrics).

pub mod baseline;
pub mod behavior;
pub mod diagnostics;
pub mod error;
pub mod exec;
pub mod ingest;
pub mod linalg;
pub mod loading;
pub mod posthoc;
pub mod rng;
pub mod run;
pub mod sampler;
pub mod simulate;
pub mod store;
pub mod sv;
pub mod types;

pub use error::{Error, Result};
pub use exec::Execution;
pub use types::{ChainState, Dataset, Dimensions, Hyperparameters};
