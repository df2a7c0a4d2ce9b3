//! Sampling-free probabilistic GRU.
//!
//! Every tensor flowing through the network is a pair of mean and variance
//! arrays. Linear layers with random weights and sigmoid/tanh activations are
//! propagated in closed form by moment matching, so one deterministic forward
//! pass yields both a prediction and its model uncertainty.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod expfam;
pub mod mc_oracle;
pub mod metrics;
pub mod moments;
pub mod spgru;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use expfam::{Family, MomentTensor, NaturalParams};
pub use tensor::Tensor;
