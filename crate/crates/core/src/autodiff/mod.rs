//! Minimal reverse-mode differentiation over dense `f64` arrays.
//!
//! A [`Graph`] records every op of a forward pass together with its backward
//! rule. Calling [`Graph::backward`] on a scalar node fills the gradient of
//! every tracked node. Graphs are built per pass and dropped afterwards;
//! distinct graphs are independent and may live on different threads.
//!
//! ```
//! use glitchloc::autodiff::{Array, Graph};
//!
//! let mut g = Graph::new();
//! let x = g.var(Array::scalar(0.0));
//! let y = g.sigmoid(x);
//! g.backward(y).unwrap();
//! assert_eq!(g.scalar(y), 0.5);
//! assert_eq!(g.grad(x).unwrap()[0], 0.25);
//! ```

mod array;
mod gradcheck;
mod graph;

pub use array::Array;
pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use graph::{DiffArray, Graph, Var, BCE_CLAMP};
