//! Knowledge-graph embeddings on the hypersphere.
//!
//! Entities are mapped onto a radius-`R` sphere through a sigmoid-angle
//! spherization layer; relations translate a head point in the ambient space
//! and the result is projected back onto the sphere, so every score is a
//! chord distance bounded by `2R`. TransE and two ablations (plain L2
//! normalization, learnable sigmoid scale) share the same training and
//! evaluation machinery.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`). Training
//! and checkpoints use `f32` ([`Model`]); gradient checks use `f64`
//! ([`Model64`]).

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod eval;
pub mod geometry;
pub mod model;
pub mod scalar;
pub mod train;

pub use data::{Dataset, EncodedSplit, FilterIndex, RawTriple, RelationCategory, Triple, Vocab};
pub use eval::{Direction, Metrics, RankResult};
pub use geometry::{SphericalPoint, SpherizationParams};
pub use model::{KgModel, ModelKind, TripleScorer};
pub use scalar::Scalar;
pub use train::{TrainConfig, TrainLog};

/// Single-precision model, the type trained and checkpointed.
pub type Model = KgModel<f32>;
/// Double-precision model for gradient and oracle checks.
pub type Model64 = KgModel<f64>;
pub type Sphere = SpherizationParams<f32>;
pub type Sphere64 = SpherizationParams<f64>;
pub type Point = SphericalPoint<f32>;
pub type Point64 = SphericalPoint<f64>;
