//! Scaled polynomial matching features for comparing two distributed
//! representations, plus the pieces needed to study them end to end:
//!
//! - [`feature`]: the `[u, v, |u-v|, interaction]` feature of degree 2-4 with
//!   scaling factor `eta`, and its exact Jacobian.
//! - [`stats`]: Monte-Carlo moments of each feature block under Gaussian inputs.
//! - [`nn`]: a pooled siamese encoder, a two-layer MLP head and softmax, with
//!   hand-written backpropagation and the step-decay SGD trainer.
//! - [`synth`]: synthetic three-class pair tasks whose labels depend only on
//!   multiplicative interactions.
//! - [`sweep`]: the `eta x degree x seed` experiment grid and its reports.

pub mod config;
pub mod data;
pub mod error;
pub mod feature;
pub mod gradcheck;
pub mod nn;
pub mod rng;
pub mod stats;
pub mod sweep;
pub mod synth;

pub use error::{Error, Result};
pub use feature::{
    baseline_feature, build_feature, feature_dim, feature_jacobian, Block, Degree, FeatureConfig,
    FeatureJacobian, MatchFeature, RepresentationPair,
};
