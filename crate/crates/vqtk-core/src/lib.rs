//! Quantization toolkit: vector quantization with straight-through
//! gradients, finite scalar quantization, feature-reconstruction
//! objectives, cluster-derived codebooks, n-gram proposal models, and
//! generative-evaluation metrics over file-based feature maps.

pub mod cluster;
pub mod error;
pub mod fsq;
pub mod io;
pub mod kd;
pub mod metrics;
pub mod ngram;
pub mod types;
pub mod vq;

pub use error::{Error, Result};
pub use types::{Codebook, FeatureMap, GaussianStats, QuantizeOutput, TokenGrid};
