//! Small dense-tensor autodiff engine.
//!
//! Values are `f64` matrices ([`Tensor`]); computations are recorded on a
//! [`Graph`] tape and differentiated in one reverse sweep. Parameters live in
//! a named [`ParamSet`] that is bound onto a fresh tape for every step and
//! updated with [`Adam`].
//!
//! ```
//! use ndgrad::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let a = g.leaf(Tensor::row(vec![1.0, 2.0]));
//! let b = g.constant(Tensor::column(vec![3.0, 4.0]));
//! let c = g.matmul(a, b).unwrap();
//! g.backward(c).unwrap();
//! assert_eq!(g.grad(a).unwrap().data(), &[3.0, 4.0]);
//! ```

pub mod check;
mod error;
mod graph;
pub mod lstm;
mod optim;
mod params;
mod tensor;

pub use error::{GradError, Result};
pub use graph::{pinball, sigmoid, softplus, Activation, Graph, Var, ELU_ALPHA, LEAKY_RELU_SLOPE};
pub use lstm::{init_lstm, lstm_cell, LstmWeights};
pub use optim::{Adam, AdamConfig};
pub use params::{Bound, Grads, Param, ParamKind, ParamSet};
pub use tensor::Tensor;
