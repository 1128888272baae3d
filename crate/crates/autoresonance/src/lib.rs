//! Simulation and numerical-verification toolkit for the capture of
//! nonlinear oscillators into parametric autoresonance with dissipation.
//!
//! The crate integrates the averaged resonance equations and the Duffing
//! oscillator they come from, constructs the growing-amplitude asymptotic
//! solutions, certifies the Lyapunov inequalities behind the stability of
//! the captured branch by dense sampling, and measures stability under
//! deterministic and random persistent perturbations with seeded Monte
//! Carlo over asymptotically long intervals.

pub mod asymptotics;
pub mod commands;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod integrate;
pub mod lyapunov;
pub mod output;
pub mod perturbations;
pub mod simulation;

pub use asymptotics::{extend_coeffs, leading_coeffs, residual, Branch, SeriesCoeffs};
pub use dynamics::{
    duffing_envelope, duffing_rhs, from_transformed, rhs_perturbed, rhs_random, rhs_transformed,
    rhs_unperturbed, to_transformed, DuffingParams, ModelParams, PerturbationValues, PhaseState,
    TransformedState,
};
pub use error::{Error, Result};
pub use integrate::{integrate, IntegratorConfig, Method, Trajectory, TrajectoryStatus};
pub use lyapunov::{
    certify_domain, classify_branch, hamiltonian, lyapunov_derivative, lyapunov_v,
    non_hamiltonian_f, BranchStability, CertificateReport, DomainBox, FlowMode, GridSpec,
};
pub use perturbations::{
    example1_drift, make_example1, sample_jump_train, sample_single_jump,
    verify_deterministic_membership, verify_random_membership, ClassKind, ClassSpec, DistSpec,
    JumpTrainSpec, RandomPertPath, RandomPertSpec,
};
pub use simulation::{
    basin_scan, decay_rate_fit, deviation_norm, duffing_compare, integrate_until_escape,
    monte_carlo_escape, BasinClass, BasinGrid, CaptureCriterion, MonteCarloConfig,
    MonteCarloReport,
};
