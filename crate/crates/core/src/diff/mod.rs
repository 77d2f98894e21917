//! Differentiable dense kernels, parameter storage and gradient checking.

mod gradcheck;
mod matrix;
mod params;
mod tape;

pub use gradcheck::{
    analytic_gradients, compare_gradients, grad_check, grad_check_with, kernel_cases,
    GradCheckConfig, GradCheckReport, KernelCase, ParamCheck,
};
pub use matrix::Matrix;
pub use params::{ParamId, ParamStore};
pub(crate) use tape::masked_softmax;
pub use tape::{Tape, Var};
