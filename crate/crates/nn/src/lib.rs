//! Minimal dense-tensor training substrate.
//!
//! Everything is generic over the [`Scalar`] element type (`f32`/`f64` via
//! num-traits); training code uses the `f32` aliases below. Networks are
//! sequential layer stacks with explicit forward/backward passes, verified by
//! the finite-difference checker in [`Network::grad_check`].

pub mod conv;
pub mod error;
pub mod io;
pub mod layers;
pub mod network;
pub mod optim;
pub mod scalar;
pub mod tensor;

pub use error::{NnError, Result};
pub use layers::LayerSpec;
pub use network::Network;
pub use optim::{Algorithm, Optimizer};
pub use scalar::Scalar;
pub use tensor::Tensor;

/// Concrete aliases used throughout the training stack.
pub type Tensor32 = Tensor<f32>;
pub type Network32 = Network<f32>;
pub type Optimizer32 = Optimizer<f32>;
