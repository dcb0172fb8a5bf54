//! Empirical checks of the approximation, stability and perturbation
//! theory, and the Lotka-Volterra inference study.

mod interp;
pub mod lotka_volterra;
mod mcmc;
mod theory;

pub use interp::{
    convergence_study, fill_distance, kernel_interpolate, log_log_slope, ConvergenceRow, FillDistanceReport,
    Interpolant, DENSE_GRID, STUDY_RIDGE,
};
pub use mcmc::{adaptive_metropolis, McmcChain, AM_REGULARIZATION};
pub use theory::{
    affine_flow, mmd_stability_check, ode_perturbation_check, perturbation_bound, spectral_norm, CheckReport,
    TrialOutcome, INTEGRATOR_ALLOWANCE, PERTURBATION_STEPS,
};
