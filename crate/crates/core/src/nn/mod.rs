//! Minimal differentiable CNN.

pub mod checkpoint;
pub mod layers;
pub mod loss;
pub mod model;

pub use checkpoint::{checkpoint_bytes, load_checkpoint, load_checkpoint_for, model_from_bytes, save_checkpoint};
pub use layers::{Mode, Param};
pub use loss::{argmax, softmax, softmax_cross_entropy};
pub use model::{ArchSpec, ForwardTrace, LayerSpec, Model};
