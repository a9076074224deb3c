//! Decision-level action recognition over precomputed inputs.
//!
//! Two pipelines produce class distributions for a video: the stream
//! pipeline fuses spatial and temporal fc outputs ([`fusion`]), and the
//! attribute pipeline filters detected objects ([`attributes`]), encodes
//! their crop features ([`encoding`]) and classifies them ([`model`],
//! [`training`]). [`inference`] gates between the two on the stream
//! pipeline's confidence and scores the result.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the element type for callers that don't need the choice.

pub mod attributes;
pub mod datamodel;
pub mod encoding;
mod error;
pub mod fusion;
pub mod inference;
pub mod model;
mod scalar;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type FeatureVectorF64 = datamodel::FeatureVector<f64>;
pub type FeatureVectorF32 = datamodel::FeatureVector<f32>;
pub type DetectionF64 = datamodel::DetectionRecord<f64>;
pub type DetectionF32 = datamodel::DetectionRecord<f32>;
pub type EmbeddingTableF64 = datamodel::EmbeddingTable<f64>;
pub type EmbeddingTableF32 = datamodel::EmbeddingTable<f32>;
pub type DatasetF64 = datamodel::Dataset<f64>;
pub type DatasetF32 = datamodel::Dataset<f32>;
pub type DistributionF64 = fusion::ProbabilityDistribution<f64>;
pub type DistributionF32 = fusion::ProbabilityDistribution<f32>;
pub type NetVladParamsF64 = encoding::NetVladParams<f64>;
pub type NetVladParamsF32 = encoding::NetVladParams<f32>;
pub type LinearModelF64 = datamodel::LinearModel<f64>;
pub type LinearModelF32 = datamodel::LinearModel<f32>;
pub type AttributeModelF64 = model::AttributeModel<f64>;
pub type AttributeModelF32 = model::AttributeModel<f32>;
pub type TrainConfigF64 = training::TrainConfig<f64>;
pub type TrainConfigF32 = training::TrainConfig<f32>;
