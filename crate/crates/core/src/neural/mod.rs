//! Convolutional autoencoders and latent dynamics networks (Hamiltonian or unconstrained flow).

mod ae;
mod arch;
mod inference;
mod mlp;
mod model;
mod params;

pub use arch::{AeArchitecture, AeVariant, MlpArchitecture, TensorSpec};
pub use inference::{LatentFlow, LatentHnn};
pub use mlp::{MlpEval, MlpScratch};
pub use model::{BoundNet, DynamicsKind, ReducedNet};
pub use params::NetParams;
