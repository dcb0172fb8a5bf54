//! Kernel ODE transport: measure transport maps given by flows of RKHS
//! velocity fields, trained by minimizing empirical maximum mean discrepancy.

pub mod analysis;
pub mod data;
pub mod error;
pub mod flow;
pub mod kernels;
pub mod mmd;
pub mod model;
pub mod objective;
pub mod optim;

pub use error::{Error, Result};
