// Negated float comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calib;
pub mod cli;
pub mod kernels;
pub mod mc;
pub mod pricing;
pub mod processes;
pub mod specfun;
