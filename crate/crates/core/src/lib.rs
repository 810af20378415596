//! Visual prompting on frozen source classifiers, with prompt boundary
//! loosening (block-max reduction of source logits), random and iterative
//! label mapping, and FGSM robustness evaluation.
//!
//! Everything runs on a small define-by-run autodiff engine over `f32`
//! tensors, so the whole pipeline (source training, adversarial training,
//! prompt training, attacks) is deterministic given a seed.
//!
//! ```
//! use vplab::autodiff::Graph;
//! use vplab::Tensor;
//!
//! let mut g = Graph::new();
//! let x = g.param(Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap());
//! let s = g.sum(x).unwrap();
//! let grads = g.backward(s).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);
//! ```

pub mod attack;
pub mod autodiff;
pub mod data;
mod epochs;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod nets;
pub mod optim;
pub mod tensor;
pub mod vp;

pub use error::{Error, Result};
pub use tensor::Tensor;
