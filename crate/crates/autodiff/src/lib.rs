//! Dense `f64` tensors with a define-by-run reverse-mode autodiff graph.
//!
//! ```
//! use longembed_autodiff::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.variable(Tensor::scalar(3.0)).unwrap();
//! let y = g.mul(x, x).unwrap();
//! g.backward(y).unwrap();
//! assert_eq!(g.grad(x).unwrap().unwrap().item().unwrap(), 6.0);
//! ```

mod error;
mod gradcheck;
mod graph;
mod kernels;
mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{
    finite_diff_check, relative_error, GradCheckReport, LeafReport, REL_ERROR_FLOOR,
};
pub use graph::{broadcast_shape, Graph, Var};
pub use tensor::Tensor;
