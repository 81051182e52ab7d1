//! Nonlinear Granger causality discovery with sparse-input componentwise
//! neural networks.
//!
//! Each output series gets its own network (an MLP over `K` lags or an
//! LSTM over the full past). Structured group penalties on the input
//! weights, optimized by proximal gradient descent, drive whole input
//! groups to exact zeros; a zero group means the corresponding series does
//! not Granger-cause the output.
//!
//! The numerical core is generic over [`Scalar`] (`f32`/`f64`). The aliases
//! at the crate root fix it to `f64`, the precision used by the file
//! formats and the CLI.

pub mod clstm;
pub mod cmlp;
pub mod error;
pub mod eval;
pub mod granger;
pub mod io;
pub mod model;
pub mod nn;
pub mod optimizer;
pub mod panel;
pub mod penalty;
pub mod simulate;

pub use error::{Error, Result};
pub use model::ComponentwiseModel;
pub use nn::{Activation, InitScheme, RngSeed, Scalar};
pub use optimizer::{FitConfig, TraceEntry};
pub use penalty::{GroupKind, PenaltyFamily};

pub type Panel = panel::TimeSeriesPanel<f64>;
pub type Cmlp = cmlp::CmlpNet<f64>;
pub type Clstm = clstm::ClstmNet<f64>;
pub type Penalty = penalty::PenaltySpec<f64>;
pub type GroupView = penalty::InputGroupView<f64>;
