//! Dense `f64` tensors and tape-based reverse-mode differentiation.
//!
//! ```
//! use unetsr::autograd::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.leaf(&Tensor::new(&[2], vec![1.0, 2.0]).unwrap().with_requires_grad(true));
//! let loss = x.square().unwrap().mean_all().unwrap();
//! let grads = loss.backward().unwrap();
//! assert_eq!(grads.get(x).unwrap(), &[1.0, 2.0]);
//! ```

mod gradcheck;
pub mod kernels;
mod tape;
mod tensor;

pub use gradcheck::{finite_diff_check, rel_err, GradCheckReport};
pub use kernels::{PadMode, Padding};
pub use tape::{CustomBackward, Gradients, Tape, Var};
pub use tensor::Tensor;
