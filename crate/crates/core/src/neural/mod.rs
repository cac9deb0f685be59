//! Dense feed-forward networks with reverse-mode gradients, Adam and Polyak
//! averaging. Hidden layers are ReLU so that critics stay MIP-encodable.

mod adam;
mod checkpoint;
mod mlp;

pub use adam::AdamState;
pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use mlp::{soft_update, Activation, Gradients, Layer, MlpParams, Trace};
