//! Minimal differentiable multilayer-perceptron stack.
//!
//! Three pieces: dense networks described by [`MlpSpec`] with parameters in a
//! flat [`ParamBundle`] ([`mlp`]), plain SGD/Adam updates ([`optim`]), and a
//! central-finite-difference gradient checker ([`fd`]) used as the
//! independent oracle for every analytic gradient in the crate.
//!
//! Everything is a pure function over immutable inputs: forward passes,
//! backward passes and optimizer steps all return fresh values, so the same
//! arguments always produce bit-identical results.

pub mod fd;
pub mod mlp;
pub mod optim;

pub use fd::{check_gradient, fd_check, relative_error, FdReport};
pub use mlp::{
    backward, forward, forward_trace, grad, Activation, DiffError, LayerSeg, MlpSpec, OutputLoss,
    ParamBundle, ParamLayout, Trace,
};
pub use optim::{optimizer_step, OptKind, OptState};
