//! Reverse-mode differentiable convolutional network and its optimiser.

pub mod adam;
pub mod jnet;
pub mod ops;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use jnet::{JNet, JNetConfig};
pub use ops::{BnMode, ConvSpec};
pub use params::{ParamId, ParameterStore};
pub use tape::{ConvBlockSpec, NodeId, PendingStats, Tape};
pub use tensor::Tensor4;
