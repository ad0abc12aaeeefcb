//! Dense-tensor reverse-mode automatic differentiation for small models.
//!
//! Values are `f64` matrices of rank at most two. Every forward pass
//! records onto a fresh [`Tape`] that borrows the [`ParamStore`];
//! [`Tape::backward`] accumulates parameter gradients into a
//! [`GradBuffer`], and an [`OptimizerState`] applies them.
//!
//! ```
//! use ratlab_grad::{GradBuffer, ParamStore, Tape, Tensor};
//!
//! let mut store = ParamStore::new();
//! let x = store.add("x", Tensor::scalar(3.0));
//! let mut tape = Tape::new(&store);
//! let xv = tape.param(x);
//! let y = tape.mul(xv, xv).unwrap();
//! let mut grads = GradBuffer::for_store(&store);
//! tape.backward(y, &mut grads).unwrap();
//! assert_eq!(grads.get(x).item(), 6.0);
//! ```

mod error;
pub mod loss;
mod optim;
mod params;
mod tape;
mod tensor;

pub use error::GradError;
pub use loss::{cross_entropy, js_divergence, CrossEntropy, PROB_FLOOR};
pub use optim::{OptimizerKind, OptimizerState, StepStats, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use params::{GradBuffer, ParamId, ParamStore};
pub use tape::{Axis, Tape, Var};
pub use tensor::Tensor;
