//! Dense networks with hand-written reverse-mode gradients, Adam, and a
//! text checkpoint format. Generic over [`Scalar`](crate::Scalar).

mod adam;
pub mod checkpoint;
mod mlp;

pub use adam::AdamState;
pub use checkpoint::Checkpoint;
pub use mlp::{Activation, Cache, MlpParams};
