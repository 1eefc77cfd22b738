//! Preconditioned stochastic variance-reduced gradient methods for
//! finite-sum logistic regression, with diagnostics for how well the
//! preconditioner tracks the Hessian.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod adaptive;
pub mod data;
pub mod diagnostics;
pub mod experiment;
pub mod linalg;
pub mod objective;
pub mod optim;
pub mod precond;
pub mod rng;

pub use data::Dataset;
pub use linalg::{Matrix, Preconditioner};
pub use objective::{Batch, LogisticProblem};
pub use rng::SeededRng;
