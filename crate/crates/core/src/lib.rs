//! Probabilistic DHP adaptive critic for fully probabilistic control design.
//!
//! The pipeline identifies a Gaussian forward model `s(x|u, x₀) ∝ exp[-(x - h - g u)ᵀ Σ⁻¹ (x - h - g u)]`
//! from data, then trains an RBF critic for the costate `λ = ∂(-ln γ)/∂x` and
//! an RBF randomized controller `c(u|x) ∝ exp[-(u - û)ᵀ Γ⁻¹ (u - û)]` by
//! alternating critic and action phases. A conventional DHP design over the
//! same model is included as a baseline, and a quadrature oracle evaluates
//! the exact one-step quantities for scalar problems.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod action;
pub mod archive;
pub mod baseline_dhp;
pub mod config;
pub mod critic;
pub mod error;
pub mod experiment;
pub mod fpd_oracle;
pub mod gaussian_algebra;
pub mod linalg;
pub mod plant;
pub mod rbf;
pub mod scg;
pub mod sysid;
pub mod trainer;
pub mod verify;

pub use action::{solve_optimal_control, ControlMode, RandomizedController, SolveOptions, SolveReport};
pub use baseline_dhp::{ConventionalDhp, DhpConfig};
pub use critic::{compute_digamma, critic_target, CriticModel, IdealSpec};
pub use error::{Error, Result};
pub use plant::{simulate, PlantSpec, Trajectory};
pub use rbf::RbfNetwork;
pub use sysid::{fit_forward_model, generate_dataset, FitConfig, ForwardModel, IdDataset};
pub use trainer::{run_training, Method, Probabilistic, TrainConfig, TrainingRun};
