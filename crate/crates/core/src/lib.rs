//! Single-image super-resolution with a modified U-net trained on a mixed
//! gradient loss (MSE plus a weighted Sobel gradient-magnitude error).
//!
//! The crate is self-contained: [`autograd`] provides tensors and
//! reverse-mode differentiation, [`model`] builds the network, [`loss`] and
//! [`metrics`] score reconstructions, [`pipeline`] handles images and
//! training pairs, and [`train`] runs the Adam loop. See the `examples/`
//! directory for one runnable program per capability.

pub mod autograd;
pub mod cli;
pub mod error;
pub mod gradsuite;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod train;

pub use autograd::{Tape, Tensor, Var};
pub use error::{Error, Result};
