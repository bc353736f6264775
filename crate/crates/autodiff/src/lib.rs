//! Minimal reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] is a tape: forward ops append nodes, [`Graph::backward`]
//! sweeps it in reverse. Trainable state lives in a [`ParamStore`] and is
//! copied onto the tape with [`Graph::param`]; after backward,
//! [`Graph::accumulate_param_grads`] moves gradients back into the store for
//! the [`Adam`] optimizer.
//!
//! ```
//! use sacm_autodiff::{Graph, Mode, Tensor};
//!
//! let mut g = Graph::<f64>::new(Mode::Eval);
//! let x = g.leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap(), true);
//! let sq = g.mul(x, x).unwrap();
//! let loss = g.sum(sq);
//! g.backward(loss).unwrap();
//! assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0]);
//! ```

mod element;
mod error;
mod gradcheck;
mod graph;
pub mod ops;
mod optim;
mod params;
mod suite;
mod tensor;

pub use element::Element;
pub use error::{AutodiffError, Result};
pub use gradcheck::{grad_check, rel_err, GradCheck};
pub use graph::{Graph, Mode, Var};
pub use ops::activation::dropout_key;
pub use ops::{BatchNormMode, BatchNormStats, Conv1dSpec, Conv2dSpec};
pub use optim::{adam_step, Adam, AdamConfig};
pub use params::{ParamEntry, ParamId, ParamStore};
pub use suite::{primitive_gradient_suite, PrimitiveCheck};
pub use tensor::{numel, Tensor};
