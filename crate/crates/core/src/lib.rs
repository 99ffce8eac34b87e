//! Linear response of stochastically driven dynamical systems.
//!
//! The crate predicts the mean response of an Itô SDE to a small constant
//! forcing perturbation with three estimators built from a single long
//! unperturbed trajectory:
//!
//! * stochastic short-time FDT ([`response::sst_fdt_operator`]), which averages
//!   tangent maps of the noisy flow driven by the trajectory's own Wiener path;
//! * quasi-Gaussian FDT ([`response::qg_fdt_operator`]), the classical formula
//!   with the invariant density replaced by a Gaussian of matching moments;
//! * their Heaviside blend ([`response::blended_operator`]).
//!
//! The "ideal" response from direct perturbation of an ensemble
//! ([`ideal::ideal_response`]) serves as ground truth, and
//! [`diagnostics`] compares the estimators with it.
//!
//! All numerics are generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the scalar to `f64`, which is what the experiment driver uses.

// `!(x > 0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod ideal;
pub mod io;
pub mod lyapunov;
pub mod models;
pub mod response;
pub mod scalar;
pub mod sde;
pub mod tangent;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Dense matrix type used throughout (column-major).
pub type Matrix<S> = nalgebra::DMatrix<S>;

pub type Lorenz96 = models::Lorenz96<f64>;
pub type Lorenz96F32 = models::Lorenz96<f32>;
pub type OrnsteinUhlenbeck = models::OrnsteinUhlenbeck<f64>;
pub type OrnsteinUhlenbeckF32 = models::OrnsteinUhlenbeck<f32>;
pub type Trajectory = sde::Trajectory<f64>;
pub type IntegratorConfig = sde::IntegratorConfig<f64>;
pub type TangentMatrix = tangent::TangentMatrix<f64>;
pub type TangentSample = tangent::TangentSample<f64>;
pub type ResponseGrid = response::ResponseGrid<f64>;
pub type ResponseOperatorSeries = response::ResponseOperatorSeries<f64>;
pub type IntegratedResponse = response::IntegratedResponse<f64>;
pub type StatSummary = response::StatSummary<f64>;
pub type EnsembleSpec = ideal::EnsembleSpec<f64>;
pub type LyapunovEstimate = lyapunov::LyapunovEstimate<f64>;
