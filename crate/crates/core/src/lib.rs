//! Melody modelling with a pair of deep gated recurrent networks: one
//! predicts the next note duration, the other the next pitch given that
//! duration. The crate covers the whole path from abc tunes to trained
//! checkpoints and sampled melodies.

pub mod abc;
pub mod checkpoint;
pub mod generation;
pub mod gru;
pub mod model;
pub mod representation;
pub mod scalar;
pub mod training;

pub use scalar::Scalar;

/// Exact durations in whole-note units.
pub type Rational = num_rational::Ratio<i64>;

/// Double precision is the default everywhere; the `*32` aliases exist for
/// memory-bound experiments.
pub type Network = gru::GruNetwork<f64>;
pub type Network32 = gru::GruNetwork<f32>;
pub type Model = model::MelodyModel<f64>;
pub type Model32 = model::MelodyModel<f32>;
pub type ModelCheckpoint = checkpoint::Checkpoint<f64>;
pub type ModelCheckpoint32 = checkpoint::Checkpoint<f32>;
