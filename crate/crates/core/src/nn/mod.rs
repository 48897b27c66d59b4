//! Layers and activations recorded on the tape.

pub mod activation;
pub mod channels;
pub mod conv;
pub mod head;
pub mod norm;

pub use activation::Activation;
pub use channels::{inverse_permutation, shuffle_permutation};
pub use conv::ConvSpec;
pub use norm::{Mode, NormKind, RunningStats, BN_MOMENTUM, NORM_EPS};
