//! Particle simulation of three stochastic flows toward the aggregate
//! μ ∝ exp((1/N) Σⱼ log μⱼ) of a finite-sum target:
//!
//! * unadjusted Langevin (full score every step),
//! * stochastic gradient Langevin dynamics (one component score per step),
//! * SVRG Langevin dynamics (control-variate score anchored per epoch).
//!
//! Alongside the samplers the crate ships the closed-form Gaussian laws these
//! dynamics follow on the Gaussian family ([`gaussian_oracle`]) and kernel
//! density estimators of KL and relative Fisher information for targets
//! without closed forms ([`estimators`]).

pub mod error;
pub mod estimators;
pub mod gaussian_oracle;
pub mod numerics;
pub mod samplers;
pub mod targets;

pub use error::{Error, Result};
pub use gaussian_oracle::GaussianState;
pub use numerics::{RealVector, RngStream, SymMatrix};
pub use samplers::{IndexMode, Method, NoiseMode, ParticleEnsemble, SamplerConfig, StepSize};
pub use targets::FiniteSumTarget;
