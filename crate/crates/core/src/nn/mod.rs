//! Feed-forward network substrate with hand-written reverse-mode gradients.

pub mod codec;
pub mod gradcheck;
pub mod layers;
pub mod params;
pub mod tensor;

pub use codec::Checkpoint;
pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use layers::{same_padding, LayerSpec, Sequential, Tape};
pub use params::{clip_global_norm, global_norm, AdamConfig, Grads, NameFilter, ParameterSet};
pub use tensor::Tensor;
