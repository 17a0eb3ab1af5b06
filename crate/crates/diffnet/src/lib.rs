//! Minimal differentiable-computation core.
//!
//! Dense `f64` tensors, a recording tape with reverse-mode gradients, the
//! three fixed layer types used by the encoders and policies (dense stack,
//! strided conv encoder, GRU), Adam, a finite-difference gradient oracle and
//! the `PSHAPE01` binary container used for every persisted artifact.

pub mod adam;
pub mod container;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod params;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use container::Container;
pub use error::{Error, Result};
pub use gradcheck::{finite_diff_check, GradCheckConfig, GradCheckReport};
pub use graph::{log_sum_exp, sigmoid, Graph, Var};
pub use layers::{Activation, ConvEncoder, GruCell, Mlp};
pub use params::ParameterSet;
pub use tensor::Tensor;
