//! Simulation and numerical verification of adaptive MCMC driven by stochastic approximation.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the simulator,
//! verifiers and experiment harness work in `f64`. The aliases below name the
//! `f64` instantiations.

pub mod adaptation;
pub mod config;
pub mod error;
pub mod experiment;
pub mod kernels;
pub mod linalg;
pub mod lyapunov;
pub mod quadrature;
pub mod rng;
pub mod scalar;
pub mod simulator;
pub mod targets;
pub mod verifier;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use adaptation::{AdaptationRule, StepsizeSchedule};
pub use config::ExperimentConfig;
pub use experiment::{emit_plot_data, run_experiment, Mode};
pub use kernels::{KernelMethod, ProposalFamily, ProposalSpec};
pub use simulator::{run_chain, run_replicas, ChainConfig, Trajectory};
pub use targets::{density_ratio, tail_integrals, upsilon, BuiltinTarget, TailClass, Target, TargetSpec};
pub use verifier::{DriftReport, GridSpec};

pub type Matrix = linalg::Matrix<f64>;
pub type Target64 = BuiltinTarget<f64>;
pub type KernelParam64 = kernels::KernelParam<f64>;
pub type LyapunovV64 = lyapunov::LyapunovV<f64>;
pub type DriftCoefficients64 = lyapunov::DriftCoefficients<f64>;
pub type CompoundSpec64 = lyapunov::CompoundSpec<f64>;
