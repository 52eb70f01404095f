//! Deterministic federated-learning simulator for multi-site feature
//! harmonisation.
//!
//! Sites share only model weights and per-feature Gaussian summaries of
//! their learned features. Local training alternates three phases per
//! minibatch: the regression task (with an optional proximal pull toward the
//! round's global weights), site discrimination on a half-real/half-sampled
//! feature batch, and a confusion step that drives the site classifier's
//! output toward uniform. Aggregation is either sample-weighted or
//! site-equal.
//!
//! The numeric kernel is generic over the scalar type ([`scalar::Real`],
//! f32 or f64); the protocol layer and the type aliases at this crate root
//! fix f64, which is what the evaluation tolerances assume.

pub mod error;
pub mod eval;
pub mod federation;
pub mod knowledge;
pub mod losses;
pub mod model;
pub mod ndcore;
pub mod scalar;
pub mod seeding;
pub mod stats;
pub mod synthdata;

pub use error::{Error, Result};

/// f64 matrix, the storage every protocol-level API uses.
pub type Matrix = ndcore::Matrix<f64>;
/// f64 Adam state.
pub type AdamState = ndcore::AdamState<f64>;
/// f64 model parameters.
pub type ModelParams = model::ModelParams<f64>;
/// f64 network component.
pub type Component = model::Component<f64>;
/// f64 loss weights.
pub type LossWeights = losses::LossWeights<f64>;
/// f64 feature summary.
pub type FeatureSummary = knowledge::FeatureSummary<f64>;
/// f64 knowledge store.
pub type KnowledgeStore = knowledge::KnowledgeStore<f64>;
/// f64 mixed feature batch.
pub type FeatureBatch = knowledge::FeatureBatch<f64>;
